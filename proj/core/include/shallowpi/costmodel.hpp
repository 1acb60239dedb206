// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "shallowpi/netgraph.hpp"
#include "shallowpi/relu_mask.hpp"

namespace shallowpi {

/// Exact ratio num/den, kept unreduced. A zero denominator reads as +inf.
struct Ratio {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const {
    return den == 0 ? std::numeric_limits<double>::infinity()
                    : static_cast<double>(num) / static_cast<double>(den);
  }
};

/// total/kept.
Ratio relu_ops_reduction(std::int64_t relu_positions_total, std::int64_t relus_kept);

/// Sum of mask popcounts.
std::int64_t count_relus_kept(const MaskSet& masks);

/// Conv MACs (Cout*Cin*k*k*Hout*Wout, projections included) plus the
/// executed linear head (in*out). BN and pooling are free.
std::int64_t count_macs(const NetworkSpec& spec, Head head = Head::Main);

/// Private-inference latency proxy: per_relu * relus + per_mac * macs.
struct LatencyCoeffs {
  double per_relu = 0.0;
  double per_mac = 0.0;
};

struct CostReport {
  std::int64_t relu_positions_total = 0;  // all-ReLU baseline, stem included
  std::int64_t relus_kept = 0;
  Ratio relu_ops_reduction;
  std::int64_t macs = 0;
  std::int64_t baseline_macs = 0;
  Ratio mac_saving;
  int depth = 0;
  Head head = Head::Main;
  std::optional<double> latency_estimate;
};

/// Costs of running `reduced` with `masks` through `head`, relative to the
/// all-ReLU `baseline` on its main head. Masks of sites that do not execute
/// for `head` are ignored.
CostReport report(const NetworkSpec& baseline, const NetworkSpec& reduced, const MaskSet& masks,
                  Head head = Head::Main, std::optional<LatencyCoeffs> coeffs = std::nullopt);

/// One model in a normalized comparison; accuracy is supplied by the caller.
struct Fig1Entry {
  std::string label;
  double accuracy = 0.0;
  std::int64_t relus = 0;
  std::int64_t macs = 0;
};

struct Fig1Row {
  std::string label;
  double accuracy = 0.0;  // each metric divided by its maximum over the entries
  double relus = 0.0;
  double macs = 0.0;
};

std::vector<Fig1Row> normalize_fig1(const std::vector<Fig1Entry>& entries);

}  // namespace shallowpi
