// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/optim.hpp"

#include <cmath>

#include "shallowpi/error.hpp"

namespace shallowpi {

Sgd::Sgd(std::vector<Tensor> params, SgdOptions options)
    : params_(std::move(params)), buffers_(params_.size()), options_(options) {
  require(options_.weight_decay >= 0.0, ErrorKind::InvalidArgument,
          "sgd: weight decay must be non-negative");
  for (const auto& p : params_) {
    require(p.defined(), ErrorKind::InvalidArgument, "sgd: undefined parameter");
  }
}

void Sgd::step(double lr) {
  require(lr > 0.0 && std::isfinite(lr), ErrorKind::InvalidArgument,
          "sgd: learning rate must be positive");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    require(p.has_grad(), ErrorKind::InvalidState,
            "sgd: parameter " + std::to_string(i) + " has no gradient");
    auto w = p.data();
    auto g = std::as_const(p).grad();
    auto& buf = buffers_[i];
    const bool first = buf.empty();
    if (first) buf.assign(w.size(), 0.0);
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double d = g[j] + options_.weight_decay * w[j];
      buf[j] = first ? d : options_.momentum * buf[j] + d;
      w[j] -= lr * buf[j];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Sgd::rebind(std::vector<Tensor> params) {
  std::vector<std::vector<double>> buffers(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params_.size(); ++j) {
      if (params[i].same_storage(params_[j])) {
        buffers[i] = std::move(buffers_[j]);
        break;
      }
    }
  }
  params_ = std::move(params);
  buffers_ = std::move(buffers);
}

}  // namespace shallowpi
