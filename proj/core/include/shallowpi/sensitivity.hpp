// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shallowpi/netgraph.hpp"

namespace shallowpi {

/// Parameter density used when none is configured.
inline constexpr double kDefaultPruningDensity = 0.1;

struct LayerSensitivity {
  std::string layer_id;
  std::string block_id;  // empty for stem/head layers
  bool is_stem = false;
  bool is_mid = false;   // mid-block ReLU, the one fusion removes
  double eta_theta = 0.0;
  double eta_alpha = 1.0;
  std::int64_t positions = 0;
  std::int64_t budget = 0;

  /// Assigned ReLUs over possible ReLUs.
  double realized() const {
    return positions > 0 ? static_cast<double>(budget) / static_cast<double>(positions) : 0.0;
  }
};

struct SensitivityProfile {
  std::vector<LayerSensitivity> layers;
  std::int64_t global_budget = 0;

  const LayerSensitivity& layer(const std::string& id) const;
  std::int64_t total_positions() const;
};

/// Global magnitude pruning at the given density. Exactly
/// round(density * total) weights survive; ties go to the lower layer
/// index, then the lower flat index. Returns surviving/total per layer.
std::vector<double> pruning_sensitivity(std::span<const Tensor> layer_weights, double density);

/// 1 - eta_theta.
double relu_sensitivity(double eta_theta);

/// One record per ReLU site of `spec`, with eta_theta taken from the conv
/// that feeds the site. Budgets start at zero.
SensitivityProfile build_profile(const NetworkSpec& spec, const ParamStore& params,
                                 double density = kDefaultPruningDensity);

/// Ideal share of each layer before rounding:
/// global_budget * eta_alpha_l * positions_l / sum_j(eta_alpha_j * positions_j).
std::vector<double> ideal_budget_shares(const SensitivityProfile& profile,
                                        std::int64_t global_budget);

/// Rounds the ideal shares, clips to [0, positions], then hands any
/// shortfall to the highest-eta_alpha layers with headroom (or takes any
/// excess from the lowest) so that budgets sum to global_budget exactly.
SensitivityProfile allocate_budget(SensitivityProfile profile, std::int64_t global_budget);

struct FuseSelection {
  std::vector<std::string> layers;  // non-stem layers with realized <= d_th
  std::vector<std::string> blocks;  // blocks whose mid ReLU was selected
};

/// Keep a ReLU layer iff its realized sensitivity is > d_th. The stem is
/// never selected.
FuseSelection which_layers_to_fuse(const SensitivityProfile& profile, double d_th);

}  // namespace shallowpi
