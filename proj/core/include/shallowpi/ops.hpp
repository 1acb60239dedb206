// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "shallowpi/tensor.hpp"

namespace shallowpi {

// Differentiable primitives. Each one records a backward closure on the
// active tape when any input requires grad, and marks its output likewise.
// All reductions run in a fixed loop order so results are bitwise
// reproducible.

/// Cross-correlation. x is [N,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout]
/// or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

struct BatchNormArgs {
  double eps = 1e-5;
  double momentum = 0.1;
  bool training = false;
};

/// Per-channel normalization over (N,H,W). In training mode the running
/// statistics are updated in place (unbiased variance, PyTorch convention).
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, const BatchNormArgs& args);

Tensor relu(const Tensor& x);

/// relu on positions where mask is 1, identity where it is 0. The mask has
/// the per-sample shape [C,H,W]. If the mask requires grad it receives
/// d(out)/d(mask) = relu(x) - x, which is what the straight-through mask
/// learner consumes.
Tensor masked_relu(const Tensor& x, const Tensor& mask);

/// x [N,F], weight [O,F], bias [O] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor global_avg_pool(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// gamma * a + (1 - gamma) * b.
Tensor gate_mix(const Tensor& a, const Tensor& b, double gamma);
/// Sum of single-element tensors.
Tensor sum_scalars(std::span<const Tensor> terms);

/// Row-wise softmax of z / rho, computed with max subtraction.
Tensor softmax_t(const Tensor& z, double rho);

/// Mean negative log-likelihood of the true class.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Batch mean of sum_k p_t log(p_t / p_s). Gradient flows into p_student
/// only; the teacher argument is treated as a constant.
Tensor kl_div(const Tensor& p_teacher, const Tensor& p_student);

/// Added to each tap norm before dividing in pram_loss.
inline constexpr double kPramNormEps = 1e-12;

/// (beta/2) * sum over tap pairs of || a/(|a|+eps) - b/(|b|+eps) ||_2.
///
/// Taps of rank >= 2 are treated as batches: each sample is vectorized and
/// normalized on its own and the per-pair distance is the batch mean. A
/// rank-1 tap is a single vector. Teacher taps are constants.
Tensor pram_loss(std::span<const Tensor> taps_student,
                 std::span<const Tensor> taps_teacher, double beta);

/// Matrix product helpers shared with the benchmarks. Row-major.
/// c[m,n] += a[m,k] * b[k,n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n);

}  // namespace shallowpi
