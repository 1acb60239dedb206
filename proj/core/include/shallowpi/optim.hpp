// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "shallowpi/tensor.hpp"

namespace shallowpi {

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// SGD with heavy-ball momentum and L2 weight decay, PyTorch update rule:
///   g = grad + wd * w;  buf = momentum * buf + g;  w -= lr * buf
/// The first step initializes buf to g.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, SgdOptions options);

  /// Every parameter must carry a gradient; a missing one is an error.
  void step(double lr);
  void zero_grad();

  /// Swaps in a new parameter list, keeping the momentum buffer of every
  /// tensor that was already being optimized.
  void rebind(std::vector<Tensor> params);

  const std::vector<Tensor>& params() const noexcept { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> buffers_;
  SgdOptions options_;
};

}  // namespace shallowpi
