// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "shallowpi/rng.hpp"
#include "shallowpi/tensor.hpp"

namespace shallowpi {

/// Images stored as one contiguous [count, channels, size, size] array.
struct Dataset {
  std::vector<double> images;
  std::vector<int> labels;
  int channels = 3;
  int size = 0;

  std::size_t count() const noexcept { return labels.size(); }
  std::size_t image_numel() const noexcept {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(size) *
           static_cast<std::size_t>(size);
  }
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

struct DataSplits {
  Dataset train;
  Dataset val;
  Dataset test;
  int num_classes = 0;
};

/// Class prototypes are smooth random images; a sample is its class
/// prototype times a random amplitude plus i.i.d. Gaussian pixel noise.
struct BlobOptions {
  int classes = 8;
  int train_samples = 800;
  int test_samples = 400;
  int channels = 3;
  int image_size = 8;
  double noise = 1.0;
  std::uint64_t seed = 0;
};

Dataset make_blob_dataset(const BlobOptions& options, int samples, std::uint64_t stream);
DataSplits make_blob_splits(const BlobOptions& options, double val_fraction = 0.1);

/// Moves a seeded `val_fraction` of `train` into a validation split.
DataSplits split_validation(Dataset train, Dataset test, int num_classes, double val_fraction,
                            std::uint64_t seed);

inline constexpr std::size_t kCifarRecordBytes = 3073;

struct Normalization {
  std::vector<double> mean{0.4914, 0.4822, 0.4465};
  std::vector<double> std{0.2470, 0.2435, 0.2616};
};

/// Reads CIFAR-10 binary records (1 label byte, then 3072 channel-planar
/// R,G,B row-major 32x32 pixel bytes). Pixel p maps to (p/255 - mean_c)/std_c.
Dataset ingest_cifar10_binary(const std::filesystem::path& path,
                              const Normalization& norm = {});
Dataset parse_cifar10_binary(std::span<const std::uint8_t> bytes,
                             const Normalization& norm = {});

/// Box-filter downsampling to `size` (which must divide the current size).
Dataset downsample(const Dataset& data, int size);

/// Random horizontal flip plus pad-by-`pad` random crop, in place on a batch.
void augment_batch(Tensor& batch, Rng& rng, int pad = 2);

}  // namespace shallowpi
