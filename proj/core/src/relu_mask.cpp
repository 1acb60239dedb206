// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/relu_mask.hpp"

#include <algorithm>
#include <numeric>

#include "shallowpi/error.hpp"

namespace shallowpi {

ReluMask::ReluMask(std::string layer_id, int channels, int height, int width,
                   std::vector<std::uint8_t> bits)
    : layer_id_(std::move(layer_id)), channels_(channels), height_(height), width_(width) {
  require(channels > 0 && height > 0 && width > 0, ErrorKind::InvalidArgument,
          "ReluMask '" + layer_id_ + "': dimensions must be positive");
  set_bits(std::move(bits));
}

ReluMask ReluMask::ones(const ReluSite& site) {
  return ReluMask(site.id, site.channels, site.size, site.size,
                  std::vector<std::uint8_t>(static_cast<std::size_t>(site.positions()), 1));
}

ReluMask ReluMask::zeros(const ReluSite& site) {
  return ReluMask(site.id, site.channels, site.size, site.size,
                  std::vector<std::uint8_t>(static_cast<std::size_t>(site.positions()), 0));
}

std::int64_t ReluMask::popcount() const {
  return std::count(bits_.begin(), bits_.end(), std::uint8_t{1});
}

void ReluMask::set_bits(std::vector<std::uint8_t> bits) {
  require(!frozen_, ErrorKind::InvalidState, "ReluMask '" + layer_id_ + "' is frozen");
  const auto n = static_cast<std::size_t>(channels_) * static_cast<std::size_t>(height_) *
                 static_cast<std::size_t>(width_);
  require(bits.size() == n, ErrorKind::ShapeMismatch,
          "ReluMask '" + layer_id_ + "': expected " + std::to_string(n) + " bits, got " +
              std::to_string(bits.size()));
  for (auto b : bits) {
    require(b <= 1, ErrorKind::InvalidArgument,
            "ReluMask '" + layer_id_ + "': bits must be 0 or 1");
  }
  bits_ = std::move(bits);
}

Tensor ReluMask::tensor() const {
  std::vector<double> v(bits_.begin(), bits_.end());
  return Tensor({static_cast<std::size_t>(channels_), static_cast<std::size_t>(height_),
                 static_cast<std::size_t>(width_)},
                std::move(v));
}

MaskTensors to_tensors(const MaskSet& masks) {
  MaskTensors out;
  for (const auto& [id, m] : masks) out.emplace(id, m.tensor());
  return out;
}

MaskSet full_mask_set(const NetworkSpec& spec) {
  MaskSet out;
  for (const auto& site : relu_sites(spec)) out.emplace(site.id, ReluMask::ones(site));
  return out;
}

void freeze_all(MaskSet& masks) {
  for (auto& [id, m] : masks) m.freeze();
}

MaskSet restrict_to_live(const MaskSet& masks, const NetworkSpec& spec, Head head) {
  MaskSet out;
  for (const auto& site : relu_sites(spec, head)) {
    auto it = masks.find(site.id);
    if (it != masks.end()) out.emplace(site.id, it->second);
  }
  return out;
}

}  // namespace shallowpi
