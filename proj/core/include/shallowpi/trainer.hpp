// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shallowpi/data.hpp"
#include "shallowpi/netgraph.hpp"
#include "shallowpi/optim.hpp"
#include "shallowpi/relu_mask.hpp"
#include "shallowpi/rewrite.hpp"

namespace shallowpi {

enum class ScheduleKind { Linear, Cosine };

/// Gate ramp for gated branching. The ramp ends at the epoch of the first
/// LR decay; a ramp_end of 0 means the gate is 1 from the start.
struct GatingSchedule {
  ScheduleKind kind = ScheduleKind::Linear;
  int ramp_end_epoch = 90;
};

/// Linear: min(e/ramp, 1). Cosine: (1 - cos(pi * min(e/ramp, 1))) / 2.
double gamma_at(const GatingSchedule& schedule, int epoch);

struct TrainConfig {
  int epochs = 180;
  double lr = 0.01;
  std::vector<int> lr_decay_epochs{90, 140, 160};
  double lr_decay_factor = 0.1;
  int batch_size = 128;
  std::uint64_t seed = 0;
  SgdOptions sgd;
  bool augment = false;

  void validate() const;
};

/// lr * factor^(number of decay epochs <= epoch).
double lr_at(const TrainConfig& config, int epoch);

enum class KdTarget { FinalClassifier, AuxClassifier };

struct LossConfig {
  double lambda = 0.9;
  double beta = 1000.0;
  double rho = 4.0;
  KdTarget kd_target = KdTarget::FinalClassifier;
  /// Adds (1 - lambda) * CE on the AC logits in AKD mode. Off by default.
  bool aux_ce = false;

  void validate() const;
};

struct LossTerms {
  Tensor total;
  double kl = 0.0;      // lambda-weighted
  double ce = 0.0;      // (1 - lambda)-weighted
  double pram = 0.0;    // beta/2-weighted
  double aux_ce = 0.0;  // (1 - lambda)-weighted, zero unless enabled
};

/// lambda * KL(softmax(z_teacher/rho), softmax(z_target/rho))
///   + (1 - lambda) * CE(labels, student main logits)
///   + (beta/2) * sum over shared tap ids of the PRAM distance.
/// z_target is the student's AC logits for KdTarget::AuxClassifier and its
/// main logits otherwise. Teacher outputs must not require grad.
LossTerms finetune_loss(const ForwardOutput& student, const ForwardOutput& teacher,
                        std::span<const int> labels, const LossConfig& config);

/// A network together with its weights and ReLU masks.
struct Model {
  NetworkSpec spec;
  ParamStore params;
  MaskSet masks;
};

Model clone_model(const Model& model);

struct HistoryRow {
  int epoch = 0;
  double lr = 0.0;
  double gamma = 0.0;
  double loss_total = 0.0;
  double loss_kl = 0.0;
  double loss_ce = 0.0;
  double loss_pram = 0.0;
  double acc_main = 0.0;
  std::optional<double> acc_aux;
};

/// Top-1 accuracy. With Head::Aux the groups after the AC cut are not run.
double evaluate(const NetworkSpec& spec, ParamStore& params, const MaskTensors& masks,
                const Dataset& data, Head head, int batch_size = 256,
                std::optional<double> gate = std::nullopt);
double evaluate(Model& model, const Dataset& data, Head head, int batch_size = 256);

/// Shuffled mini-batch order for one epoch, fixed by (seed, epoch).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, int batch_size,
                                                    std::uint64_t seed, int epoch);

struct TrainResult {
  ParamStore params;  // weights of the best validation epoch
  std::vector<HistoryRow> history;
  int best_epoch = -1;
  double best_val_acc = 0.0;
};

/// All-ReLU cross-entropy training; the teacher of the later stages.
TrainResult train_baseline(const NetworkSpec& spec, ParamStore init, const DataSplits& data,
                           const TrainConfig& config);

struct FinetuneOptions {
  std::uint64_t init_seed = 0;
  ShallowInit shallow_init = ShallowInit::He;
};

struct FinetuneResult {
  Model model;  // finalized (no Gated blocks remain)
  std::vector<HistoryRow> history;
  int finalized_epoch = -1;  // -1 when nothing was gated
  double test_acc_main = 0.0;
  std::optional<double> test_acc_aux;
  std::vector<std::string> warnings;
};

/// Fine-tunes a partial-ReLU model with gated branching and distillation
/// from `teacher` (evaluated with all-ones masks, eval-mode BN). Blocks in
/// `plan` are gated before the first epoch; at the first epoch whose gate
/// reaches 1 they are finalized into Fused blocks. Masks stay frozen.
FinetuneResult finetune_stage3(const Model& pr, const Model& teacher, const FusionPlan& plan,
                               const DataSplits& data, const TrainConfig& train,
                               const LossConfig& loss, const GatingSchedule& schedule,
                               const FinetuneOptions& options = {});

}  // namespace shallowpi
