// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used by the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "shallowpi/ops.hpp"
#include "shallowpi/tensor.hpp"

namespace oracle {

using shallowpi::Shape;
using shallowpi::Tensor;

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shallowpi::shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor(shape, std::move(v), requires_grad);
}

/// Direct quadruple-loop cross-correlation.
inline std::vector<double> naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                                        int stride, int pad, std::size_t* ho_out = nullptr) {
  const auto n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto co = w.dim(0), k = w.dim(2);
  const auto s = static_cast<std::size_t>(stride);
  const auto p = static_cast<long>(pad);
  const auto ho = (h + 2 * static_cast<std::size_t>(pad) - k) / s + 1;
  const auto wo = (wd + 2 * static_cast<std::size_t>(pad) - k) / s + 1;
  if (ho_out) *ho_out = ho;
  auto X = x.data();
  auto W = w.data();
  std::vector<double> out(n * co * ho * wo, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t z = 0; z < wo; ++z) {
          double acc = b.defined() ? b.data()[o] : 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) {
                const long iy = static_cast<long>(y * s + i) - p;
                const long iz = static_cast<long>(z * s + j) - p;
                if (iy < 0 || iz < 0 || iy >= static_cast<long>(h) || iz >= static_cast<long>(wd))
                  continue;
                acc += X[((a * ci + c) * h + static_cast<std::size_t>(iy)) * wd +
                         static_cast<std::size_t>(iz)] *
                       W[((o * ci + c) * k + i) * k + j];
              }
          out[((a * co + o) * ho + y) * wo + z] = acc;
        }
  return out;
}

/// Eval-mode batch norm on an [N,C,H,W] buffer.
inline std::vector<double> naive_bn_eval(std::vector<double> x, std::size_t n, std::size_t c,
                                         std::size_t hw, const Tensor& gamma, const Tensor& beta,
                                         const Tensor& mean, const Tensor& var, double eps) {
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t q = 0; q < hw; ++q) {
        auto& v = x[(a * c + o) * hw + q];
        v = (v - mean.data()[o]) / std::sqrt(var.data()[o] + eps) * gamma.data()[o] +
            beta.data()[o];
      }
  return x;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Gradient-check error of `loss` against central finite differences: for
/// each input tensor, max_i |analytic_i - numeric_i| / max(max_i |analytic_i|,
/// max_i |numeric_i|, floor); the worst tensor is returned. Normalizing by the
/// tensor's gradient scale keeps components far below the loss magnitude,
/// which float64 differences cannot resolve, from dominating.
/// `loss` must rebuild the graph from the current input values.
inline double gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                        double h = 1e-6, double floor = 1e-7) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  shallowpi::Tape tape;
  Tensor l;
  {
    shallowpi::TapeScope scope(tape);
    l = loss();
  }
  tape.backward(l);
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) {
      auto g = std::as_const(t).grad();
      analytic.assign(g.begin(), g.end());
    }
    auto d = t.data();
    double diff = 0.0, scale = floor;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double orig = d[i];
      d[i] = orig + h;
      const double up = loss().item();
      d[i] = orig - h;
      const double down = loss().item();
      d[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      diff = std::max(diff, std::abs(analytic[i] - numeric));
      scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric)});
    }
    worst = std::max(worst, diff / scale);
  }
  return worst;
}

/// Scalar loss with a non-trivial upstream gradient at every element of
/// `out` ([N,F] or [N,C,H,W]): a fixed random projection to 3 logits per
/// sample followed by cross-entropy against fixed labels.
inline Tensor probe_loss(const Tensor& out, const Tensor& projection) {
  using namespace shallowpi;
  std::vector<int> labels(out.dim(0));
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 3);
  if (out.rank() == 2) return cross_entropy(linear(out, projection, Tensor()), labels);
  return cross_entropy(global_avg_pool(conv2d(out, projection, Tensor(), 1, 0)), labels);
}

inline Tensor probe_projection(const Tensor& out, std::mt19937_64& rng) {
  Shape s{3};
  for (std::size_t a = 1; a < out.rank(); ++a) s.push_back(out.dim(a));
  return random_tensor(s, rng);
}

}  // namespace oracle
