// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shallowpi/costmodel.hpp"
#include "shallowpi/netgraph.hpp"
#include "shallowpi/relu_mask.hpp"
#include "shallowpi/sensitivity.hpp"
#include "shallowpi/trainer.hpp"

namespace shallowpi {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

// Network specs. from_json rejects unknown enum names and missing keys.
nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

std::string to_string(BlockState state);
std::string to_string(Head head);

// Sensitivity profiles: layer_id,positions,eta_theta,eta_alpha,budget.
std::string profile_to_csv(const SensitivityProfile& profile);
/// Site metadata (block, stem and mid flags) is restored from `spec` when
/// given; the global budget is the sum of the layer budgets.
SensitivityProfile profile_from_csv(const std::string& csv, const NetworkSpec* spec = nullptr);

/// Mask checkpoint, all integers little-endian:
///   "SPIMASK1" | u32 version=1 | u32 layers
///   per layer: u32 id_len | id bytes | u32 C | u32 H | u32 W | u64 popcount
///              | ceil(C*H*W/8) bytes, row-major bit i in byte i/8 at bit i%8
std::vector<std::uint8_t> encode_masks(const MaskSet& masks);
/// Decoded masks are frozen. A popcount disagreeing with the bits is a
/// format error.
MaskSet decode_masks(std::span<const std::uint8_t> bytes);

/// Weights as one flat little-endian float64 block `<stem>.bin` plus a JSON
/// manifest `<stem>.json` listing name, shape, offset (in values) and
/// trainability of every tensor, and the SHA-256 of the block.
/// `extra` is merged into the manifest. Returns the digest.
std::string write_weights(const std::filesystem::path& stem, const ParamStore& params,
                          const nlohmann::json& extra = nlohmann::json::object());
/// Verifies the digest before loading.
ParamStore read_weights(const std::filesystem::path& stem);
nlohmann::json read_manifest(const std::filesystem::path& stem);

// epoch,lr,gamma,loss_total,loss_kl,loss_ce,loss_pram,acc_main,acc_aux
std::string history_to_csv(const std::vector<HistoryRow>& history);

nlohmann::json cost_report_to_json(const CostReport& report);
std::string cost_report_to_csv(const std::vector<CostReport>& reports,
                               const std::vector<std::string>& labels);

/// One row of a results table. Table-1 style rows compare with and without
/// gated branching; Table-2 style rows compare the two classifier outputs.
struct ResultRow {
  std::string label;
  bool gated_branching = false;
  bool ac_output = false;
  std::int64_t relus_kept = 0;
  double accuracy = 0.0;
  int depth = 0;
  double mac_saving = 1.0;
  double relu_ops_reduction = 1.0;
};

// label,gated_branching,ac_output,relus_k,accuracy,depth,mac_saving,relu_ops_reduction
std::string results_to_csv(const std::vector<ResultRow>& rows);

// label,accuracy,relus,macs (each normalized by its maximum)
std::string fig1_to_csv(const std::vector<Fig1Row>& rows);

}  // namespace shallowpi
