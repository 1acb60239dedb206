// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/costmodel.hpp"

#include <algorithm>

#include "shallowpi/error.hpp"

namespace shallowpi {

Ratio relu_ops_reduction(std::int64_t relu_positions_total, std::int64_t relus_kept) {
  require(relus_kept >= 0, ErrorKind::InvalidArgument,
          "relu_ops_reduction: kept ReLU count must be non-negative");
  require(relus_kept <= relu_positions_total, ErrorKind::InvalidArgument,
          "relu_ops_reduction: kept " + std::to_string(relus_kept) + " exceeds total " +
              std::to_string(relu_positions_total));
  return {relu_positions_total, relus_kept};
}

std::int64_t count_relus_kept(const MaskSet& masks) {
  std::int64_t total = 0;
  for (const auto& [id, m] : masks) total += m.popcount();
  return total;
}

std::int64_t count_macs(const NetworkSpec& spec, Head head) {
  if (head == Head::Aux) {
    require(spec.aux.has_value(), ErrorKind::InvalidArgument,
            "count_macs: auxiliary head requested but network '" + spec.name + "' has none");
  }
  std::int64_t macs = 0;
  for (const auto& site : conv_sites(spec, head)) {
    const auto& c = site.conv;
    macs += static_cast<std::int64_t>(c.out_channels) * c.in_channels * c.kernel * c.kernel *
            site.out_size * site.out_size;
  }
  const LinearSpec& lin = head == Head::Aux ? spec.aux->head : spec.classifier;
  macs += static_cast<std::int64_t>(lin.in_features) * lin.out_features;
  return macs;
}

CostReport report(const NetworkSpec& baseline, const NetworkSpec& reduced, const MaskSet& masks,
                  Head head, std::optional<LatencyCoeffs> coeffs) {
  require(baseline.input_size == reduced.input_size && baseline.in_channels == reduced.in_channels,
          ErrorKind::InvalidArgument,
          "report: input resolution mismatch (baseline " + std::to_string(baseline.input_size) +
              "x" + std::to_string(baseline.input_size) + ", reduced " +
              std::to_string(reduced.input_size) + "x" + std::to_string(reduced.input_size) + ")");
  CostReport r;
  r.head = head;
  r.relu_positions_total = count_relu_positions(baseline, true);
  const MaskSet live = restrict_to_live(masks, reduced, head);
  for (const auto& site : relu_sites(reduced, head)) {
    require(live.count(site.id) != 0, ErrorKind::InvalidArgument,
            "report: no mask for ReLU site '" + site.id + "'");
  }
  r.relus_kept = count_relus_kept(live);
  r.relu_ops_reduction = relu_ops_reduction(r.relu_positions_total, r.relus_kept);
  r.macs = count_macs(reduced, head);
  r.baseline_macs = count_macs(baseline, Head::Main);
  r.mac_saving = {r.baseline_macs, r.macs};
  r.depth = depth_metric(reduced, head);
  if (coeffs) {
    r.latency_estimate = coeffs->per_relu * static_cast<double>(r.relus_kept) +
                         coeffs->per_mac * static_cast<double>(r.macs);
  }
  return r;
}

std::vector<Fig1Row> normalize_fig1(const std::vector<Fig1Entry>& entries) {
  require(!entries.empty(), ErrorKind::InvalidArgument, "normalize_fig1: no entries");
  double max_acc = 0.0;
  std::int64_t max_relus = 0, max_macs = 0;
  for (const auto& e : entries) {
    max_acc = std::max(max_acc, e.accuracy);
    max_relus = std::max(max_relus, e.relus);
    max_macs = std::max(max_macs, e.macs);
  }
  auto norm = [](double v, double m) { return m > 0.0 ? v / m : 0.0; };
  std::vector<Fig1Row> rows;
  for (const auto& e : entries) {
    rows.push_back({e.label, norm(e.accuracy, max_acc),
                    norm(static_cast<double>(e.relus), static_cast<double>(max_relus)),
                    norm(static_cast<double>(e.macs), static_cast<double>(max_macs))});
  }
  return rows;
}

}  // namespace shallowpi
