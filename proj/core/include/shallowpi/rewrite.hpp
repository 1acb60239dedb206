// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shallowpi/netgraph.hpp"
#include "shallowpi/sensitivity.hpp"

namespace shallowpi {

struct FusionPlan {
  double d_th = 0.0;
  std::vector<std::string> fuse_blocks;
  /// The stem ReLU never takes part in fusion.
  bool exempt_stem = true;
};

/// Plan from thresholding the realized per-layer sensitivity of `profile`.
FusionPlan make_fusion_plan(const SensitivityProfile& profile, double d_th);

enum class ShallowInit {
  He,
  /// Center 3x3 of the exact composition of the (BN-folded) main branch.
  CenterCrop,
};

/// A rewritten network. Tensors already present in the input store are
/// shared with it, not copied.
struct Rewritten {
  NetworkSpec spec;
  ParamStore params;
  std::vector<std::string> removed_relus;
};

/// Turns every planned Deep block into a Gated block with a fresh 3x3
/// conv-bn shallow branch (stride = product of the main strides, pad 1).
Rewritten apply_gating(const NetworkSpec& spec, const ParamStore& params, const FusionPlan& plan,
                       std::uint64_t init_seed, ShallowInit init = ShallowInit::He);

/// Discards the main branch of every Gated block. Only legal once the gate
/// has reached 1.
Rewritten finalize_fusion(const NetworkSpec& spec, const ParamStore& params, double gamma);

struct ConvParams {
  Tensor weight;  // [Cout,Cin,k,k]
  Tensor bias;    // [Cout]; undefined means zero
  int stride = 1;
  int padding = 0;
};

struct BnParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
};

ConvParams conv_params(const ParamStore& params, const ConvSpec& conv);
BnParams bn_params(const ParamStore& params, const BnSpec& bn);

/// Eval-mode BN folded into the preceding conv:
///   w'_o = w_o * g_o / sqrt(var_o + eps)
///   b'_o = (b_o - mean_o) * g_o / sqrt(var_o + eps) + beta_o
ConvParams fold_bn_into_conv(const ConvParams& conv, const BnParams& bn, double eps);

/// Single conv equal to b(a(x)). Requires b.stride == 1. The result has
/// stride a.stride, kernel a.k + (b.k - 1) * a.stride and padding
/// a.padding + b.padding * a.stride (k1 + k2 - 1 and p1 + p2 when a is
/// unstrided). Agreement with sequential application is exact everywhere
/// when b.padding == 0 and exact away from the border otherwise, because
/// the sequential form pads a's output (bias included) with zeros.
ConvParams compose_convs_exact(const ConvParams& a, const ConvParams& b);

}  // namespace shallowpi
