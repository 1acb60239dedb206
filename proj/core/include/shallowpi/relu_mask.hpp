// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "shallowpi/netgraph.hpp"

namespace shallowpi {

/// Binary ReLU placement for one layer: 1 = ReLU unit, 0 = identity unit.
/// Bits are row-major over (channels, height, width).
class ReluMask {
 public:
  ReluMask() = default;
  ReluMask(std::string layer_id, int channels, int height, int width,
           std::vector<std::uint8_t> bits);

  static ReluMask ones(const ReluSite& site);
  static ReluMask zeros(const ReluSite& site);

  const std::string& layer_id() const noexcept { return layer_id_; }
  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return bits_.size(); }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
  std::int64_t popcount() const;

  bool frozen() const noexcept { return frozen_; }
  void freeze() noexcept { frozen_ = true; }
  /// Throws once frozen.
  void set_bits(std::vector<std::uint8_t> bits);

  /// A fresh [C,H,W] tensor of 0.0/1.0 values.
  Tensor tensor() const;

  bool operator==(const ReluMask& other) const {
    return layer_id_ == other.layer_id_ && channels_ == other.channels_ &&
           height_ == other.height_ && width_ == other.width_ && bits_ == other.bits_;
  }

 private:
  std::string layer_id_;
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
  bool frozen_ = false;
};

using MaskSet = std::map<std::string, ReluMask>;

MaskTensors to_tensors(const MaskSet& masks);
MaskSet full_mask_set(const NetworkSpec& spec);
void freeze_all(MaskSet& masks);

/// Drops masks for ReLU sites that no longer exist in `spec`.
MaskSet restrict_to_live(const MaskSet& masks, const NetworkSpec& spec, Head head = Head::Main);

}  // namespace shallowpi
