// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "shallowpi/data.hpp"
#include "shallowpi/relu_mask.hpp"
#include "shallowpi/sensitivity.hpp"
#include "shallowpi/trainer.hpp"

namespace shallowpi {

/// Continuous relaxation of one layer's mask; the mask is the top-budget
/// positions of `scores`.
struct MaskScores {
  std::string layer_id;
  Tensor scores;  // [C,H,W]
};

/// i.i.d. uniform(0,1) scores; each layer draws from its own substream of
/// `seed` keyed by layer id. Layers are returned in profile order.
std::vector<MaskScores> init_scores(const NetworkSpec& spec, const SensitivityProfile& profile,
                                    std::uint64_t seed);

/// Ones at the `budget` largest scores, ties to the lower flat index.
ReluMask project_topk(const MaskScores& scores, std::int64_t budget);

/// Binary top-k mask as a tensor whose backward passes the upstream
/// gradient to `scores` unchanged (straight-through).
Tensor ste_topk(const Tensor& scores, std::int64_t budget);

struct Stage2Options {
  /// Defaults to the weight learning rate.
  std::optional<double> score_lr;
  std::uint64_t score_seed = 0;
};

struct Stage2Result {
  MaskSet masks;        // frozen, from the best validation epoch
  ParamStore params;    // weights of the best validation epoch
  std::vector<MaskScores> scores;  // final scores
  std::vector<HistoryRow> history;
  int best_epoch = -1;
  double best_val_acc = 0.0;
};

/// Jointly trains weights (cross-entropy, SGD) and mask scores (plain SGD
/// through the straight-through top-k) under the budgets of `profile`.
Stage2Result stage2_train(const NetworkSpec& spec, const ParamStore& init,
                          const SensitivityProfile& profile, const DataSplits& data,
                          const TrainConfig& config, const Stage2Options& options = {});

}  // namespace shallowpi
