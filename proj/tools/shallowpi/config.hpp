// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shallowpi/costmodel.hpp"
#include "shallowpi/data.hpp"
#include "shallowpi/netgraph.hpp"
#include "shallowpi/rewrite.hpp"
#include "shallowpi/trainer.hpp"

namespace shallowpi::cli {

enum class ModelKind { Tiny, ResNet18, Wrn22_8 };

struct ModelConfig {
  ModelKind kind = ModelKind::Tiny;
  std::vector<int> widths{16, 32};
  std::vector<int> blocks{2, 2};
  /// First group skipped by the AC head; null means no AC (tiny nets only).
  std::optional<int> aux_cut = 1;
};

enum class DatasetKind { SyntheticBlobs, TinyImages, Cifar10Binary };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::SyntheticBlobs;
  BlobOptions blobs;
  std::vector<std::filesystem::path> train_files;
  std::filesystem::path test_file;
  int image_size = 32;  // TinyImages target size
  Normalization normalization;
  double val_fraction = 0.1;
};

struct ExperimentConfig {
  ModelConfig model;
  DatasetConfig dataset;
  /// Absolute global budget; takes precedence over relu_budget_fraction.
  std::optional<std::int64_t> relu_budget;
  double relu_budget_fraction = 0.5;
  double pruning_density = kDefaultPruningDensity;
  double d_th = 0.05;
  /// Explicit block list replacing the thresholded selection.
  std::optional<std::vector<std::string>> fuse_blocks;
  ShallowInit shallow_init = ShallowInit::He;
  GatingSchedule schedule;
  LossConfig loss;
  TrainConfig baseline_train;
  TrainConfig stage2_train;
  TrainConfig finetune_train;
  std::optional<double> score_lr;
  std::optional<LatencyCoeffs> latency;
  std::filesystem::path output_dir = "shallowpi-out";
  std::uint64_t seed = 0;

  /// Throws Error(InvalidArgument) naming the offending key.
  void validate() const;
};

/// Parses and validates. Unknown keys anywhere are rejected. A missing
/// ramp_end_epoch follows the first finetune LR decay.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Re-seeds every stage from `seed`.
void apply_seed(ExperimentConfig& config, std::uint64_t seed);

NetworkSpec build_model(const ExperimentConfig& config, int num_classes, int input_size);
DataSplits load_data(const ExperimentConfig& config);
std::int64_t global_budget(const ExperimentConfig& config, const NetworkSpec& spec);

}  // namespace shallowpi::cli
