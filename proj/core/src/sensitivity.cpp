// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "shallowpi/error.hpp"

namespace shallowpi {

const LayerSensitivity& SensitivityProfile::layer(const std::string& id) const {
  for (const auto& l : layers)
    if (l.layer_id == id) return l;
  fail(ErrorKind::InvalidArgument, "profile has no layer '" + id + "'");
}

std::int64_t SensitivityProfile::total_positions() const {
  std::int64_t n = 0;
  for (const auto& l : layers) n += l.positions;
  return n;
}

std::vector<double> pruning_sensitivity(std::span<const Tensor> layer_weights, double density) {
  require(!layer_weights.empty(), ErrorKind::InvalidArgument,
          "pruning_sensitivity: model has no layers");
  require(density > 0.0 && density <= 1.0, ErrorKind::OutOfRange,
          "pruning_sensitivity: density must lie in (0,1]");
  struct Entry {
    double magnitude;
    std::uint32_t layer;
    std::uint32_t index;
  };
  std::vector<Entry> all;
  for (std::size_t l = 0; l < layer_weights.size(); ++l) {
    auto d = layer_weights[l].data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      all.push_back({std::abs(d[i]), static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(i)});
    }
  }
  require(!all.empty(), ErrorKind::InvalidArgument, "pruning_sensitivity: model has no weights");
  const auto keep = static_cast<std::size_t>(std::llround(density * static_cast<double>(all.size())));
  auto before = [](const Entry& a, const Entry& b) {
    if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.index < b.index;
  };
  if (keep < all.size()) {
    std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), before);
  }
  std::vector<double> survived(layer_weights.size(), 0.0);
  for (std::size_t i = 0; i < keep; ++i) survived[all[i].layer] += 1.0;
  for (std::size_t l = 0; l < layer_weights.size(); ++l) {
    survived[l] /= static_cast<double>(layer_weights[l].numel());
  }
  return survived;
}

double relu_sensitivity(double eta_theta) {
  require(eta_theta >= 0.0 && eta_theta <= 1.0, ErrorKind::OutOfRange,
          "relu_sensitivity: pruning sensitivity must lie in [0,1]");
  return 1.0 - eta_theta;
}

SensitivityProfile build_profile(const NetworkSpec& spec, const ParamStore& params,
                                 double density) {
  const auto sites = relu_sites(spec);
  std::vector<Tensor> weights;
  weights.reserve(sites.size());
  for (const auto& s : sites) weights.push_back(params.at(s.preceding + ".weight"));
  const auto eta_theta = pruning_sensitivity(weights, density);
  SensitivityProfile profile;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    LayerSensitivity l;
    l.layer_id = sites[i].id;
    l.block_id = sites[i].block_id;
    l.is_stem = sites[i].is_stem;
    l.is_mid = sites[i].is_mid;
    l.eta_theta = eta_theta[i];
    l.eta_alpha = relu_sensitivity(eta_theta[i]);
    l.positions = sites[i].positions();
    profile.layers.push_back(std::move(l));
  }
  return profile;
}

std::vector<double> ideal_budget_shares(const SensitivityProfile& profile,
                                        std::int64_t global_budget) {
  double weight_sum = 0.0;
  for (const auto& l : profile.layers) {
    require(l.eta_alpha >= 0.0 && l.eta_alpha <= 1.0, ErrorKind::OutOfRange,
            "allocate_budget: eta_alpha of '" + l.layer_id + "' outside [0,1]");
    weight_sum += l.eta_alpha * static_cast<double>(l.positions);
  }
  std::vector<double> shares;
  shares.reserve(profile.layers.size());
  const auto total = static_cast<double>(profile.total_positions());
  for (const auto& l : profile.layers) {
    // With every eta_alpha at zero there is no preference; fall back to size.
    const double w = weight_sum > 0.0 ? l.eta_alpha * static_cast<double>(l.positions) / weight_sum
                                      : static_cast<double>(l.positions) / total;
    shares.push_back(static_cast<double>(global_budget) * w);
  }
  return shares;
}

SensitivityProfile allocate_budget(SensitivityProfile profile, std::int64_t global_budget) {
  require(!profile.layers.empty(), ErrorKind::InvalidArgument, "allocate_budget: empty profile");
  const auto total = profile.total_positions();
  require(global_budget > 0 && global_budget <= total, ErrorKind::OutOfRange,
          "allocate_budget: budget " + std::to_string(global_budget) + " infeasible for " +
              std::to_string(total) + " ReLU positions");
  const auto shares = ideal_budget_shares(profile, global_budget);
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < profile.layers.size(); ++i) {
    auto& l = profile.layers[i];
    l.budget = std::clamp<std::int64_t>(std::llround(shares[i]), 0, l.positions);
    assigned += l.budget;
  }

  std::vector<std::size_t> order(profile.layers.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return profile.layers[a].eta_alpha > profile.layers[b].eta_alpha;
  });
  std::int64_t diff = global_budget - assigned;
  if (diff > 0) {
    // Layers with eta_alpha = 0 only receive ReLUs when nothing else fits.
    for (int pass = 0; pass < 2 && diff > 0; ++pass) {
      for (auto i : order) {
        auto& l = profile.layers[i];
        if ((pass == 0) != (l.eta_alpha > 0.0)) continue;
        const auto add = std::min(diff, l.positions - l.budget);
        l.budget += add;
        diff -= add;
        if (diff == 0) break;
      }
    }
  } else if (diff < 0) {
    for (auto it = order.rbegin(); it != order.rend() && diff < 0; ++it) {
      auto& l = profile.layers[*it];
      const auto take = std::min(-diff, l.budget);
      l.budget -= take;
      diff += take;
    }
  }
  profile.global_budget = global_budget;
  return profile;
}

FuseSelection which_layers_to_fuse(const SensitivityProfile& profile, double d_th) {
  require(d_th >= 0.0 && d_th < 1.0, ErrorKind::OutOfRange,
          "which_layers_to_fuse: d_th must lie in [0,1)");
  FuseSelection sel;
  for (const auto& l : profile.layers) {
    if (l.is_stem || l.realized() > d_th) continue;
    sel.layers.push_back(l.layer_id);
    if (l.is_mid && !l.block_id.empty()) sel.blocks.push_back(l.block_id);
  }
  return sel;
}

}  // namespace shallowpi
