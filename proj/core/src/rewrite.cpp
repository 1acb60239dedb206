// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/rewrite.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "shallowpi/error.hpp"

namespace shallowpi {

FusionPlan make_fusion_plan(const SensitivityProfile& profile, double d_th) {
  FusionPlan plan;
  plan.d_th = d_th;
  plan.fuse_blocks = which_layers_to_fuse(profile, d_th).blocks;
  return plan;
}

ConvParams conv_params(const ParamStore& params, const ConvSpec& conv) {
  ConvParams p;
  p.weight = params.at(conv.name + ".weight");
  if (conv.bias) p.bias = params.at(conv.name + ".bias");
  p.stride = conv.stride;
  p.padding = conv.padding;
  return p;
}

BnParams bn_params(const ParamStore& params, const BnSpec& bn) {
  return {params.at(bn.name + ".gamma"), params.at(bn.name + ".beta"),
          params.at(bn.name + ".running_mean"), params.at(bn.name + ".running_var")};
}

ConvParams fold_bn_into_conv(const ConvParams& conv, const BnParams& bn, double eps) {
  require(conv.weight.defined() && conv.weight.rank() == 4, ErrorKind::ShapeMismatch,
          "fold_bn_into_conv: weight must be [Cout,Cin,k,k]");
  const auto cout = conv.weight.dim(0);
  for (const Tensor* t : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) {
    require(t->defined() && t->rank() == 1 && t->dim(0) == cout, ErrorKind::ShapeMismatch,
            "fold_bn_into_conv: BN parameter length must equal conv out-channels " +
                std::to_string(cout));
  }
  require(eps > 0.0, ErrorKind::InvalidArgument, "fold_bn_into_conv: eps must be positive");
  auto var = bn.running_var.data();
  for (double v : var) {
    require(v >= 0.0, ErrorKind::InvalidArgument, "fold_bn_into_conv: negative running variance");
  }
  const auto per = conv.weight.numel() / cout;
  auto w = conv.weight.data();
  std::vector<double> nw(w.begin(), w.end());
  std::vector<double> nb(cout);
  for (std::size_t o = 0; o < cout; ++o) {
    const double s = bn.gamma.data()[o] / std::sqrt(var[o] + eps);
    for (std::size_t j = 0; j < per; ++j) nw[o * per + j] *= s;
    const double b = conv.bias.defined() ? conv.bias.data()[o] : 0.0;
    nb[o] = (b - bn.running_mean.data()[o]) * s + bn.beta.data()[o];
  }
  ConvParams out;
  out.weight = Tensor(conv.weight.shape(), std::move(nw));
  out.bias = Tensor({cout}, std::move(nb));
  out.stride = conv.stride;
  out.padding = conv.padding;
  return out;
}

ConvParams compose_convs_exact(const ConvParams& a, const ConvParams& b) {
  require(b.stride == 1, ErrorKind::InvalidArgument,
          "compose_convs_exact: unsupported composition, outer conv stride must be 1 (got " +
              std::to_string(b.stride) + ")");
  require(a.weight.defined() && a.weight.rank() == 4 && b.weight.defined() && b.weight.rank() == 4,
          ErrorKind::ShapeMismatch, "compose_convs_exact: weights must be [Cout,Cin,k,k]");
  const auto c0 = a.weight.dim(1), c1 = a.weight.dim(0), c2 = b.weight.dim(0);
  require(b.weight.dim(1) == c1, ErrorKind::ShapeMismatch,
          "compose_convs_exact: outer conv in-channels " + std::to_string(b.weight.dim(1)) +
              " != inner conv out-channels " + std::to_string(c1));
  const auto k1 = a.weight.dim(2), k2 = b.weight.dim(2);
  const auto s1 = static_cast<std::size_t>(a.stride);
  const auto k = k1 + (k2 - 1) * s1;
  auto wa = a.weight.data();
  auto wb = b.weight.data();
  std::vector<double> w(c2 * c0 * k * k, 0.0);
  for (std::size_t o = 0; o < c2; ++o)
    for (std::size_t m = 0; m < c1; ++m)
      for (std::size_t p = 0; p < k2; ++p)
        for (std::size_t q = 0; q < k2; ++q) {
          const double bv = wb[((o * c1 + m) * k2 + p) * k2 + q];
          if (bv == 0.0) continue;
          for (std::size_t i = 0; i < c0; ++i)
            for (std::size_t t = 0; t < k1; ++t)
              for (std::size_t r = 0; r < k1; ++r)
                w[((o * c0 + i) * k + p * s1 + t) * k + q * s1 + r] +=
                    bv * wa[((m * c0 + i) * k1 + t) * k1 + r];
        }
  std::vector<double> bias(c2, 0.0);
  for (std::size_t o = 0; o < c2; ++o) {
    double s = b.bias.defined() ? b.bias.data()[o] : 0.0;
    if (a.bias.defined()) {
      for (std::size_t m = 0; m < c1; ++m)
        for (std::size_t j = 0; j < k2 * k2; ++j) s += wb[(o * c1 + m) * k2 * k2 + j] * a.bias.data()[m];
    }
    bias[o] = s;
  }
  ConvParams out;
  out.weight = Tensor({c2, c0, k, k}, std::move(w));
  out.bias = Tensor({c2}, std::move(bias));
  out.stride = a.stride;
  out.padding = a.padding + b.padding * a.stride;
  return out;
}

namespace {

void center_crop_init(const BlockSpec& blk, ParamStore& params) {
  ConvParams inner = conv_params(params, *blk.conv1);
  inner = fold_bn_into_conv(inner, bn_params(params, *blk.mid_bn), blk.mid_bn->eps);
  const ConvParams outer = conv_params(params, *blk.conv2);
  const ConvParams full = compose_convs_exact(inner, outer);
  const auto co = full.weight.dim(0), ci = full.weight.dim(1), k = full.weight.dim(2);
  const auto off = (k - 3) / 2;
  auto src = full.weight.data();
  auto dst = params.at(blk.shallow_conv->name + ".weight").data();
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 3; ++x)
          dst[((o * ci + i) * 3 + y) * 3 + x] = src[((o * ci + i) * k + y + off) * k + x + off];
  if (blk.exit_bn) {
    const auto from = bn_params(params, *blk.exit_bn);
    const auto to = bn_params(params, *blk.shallow_bn);
    auto copy = [](const Tensor& s, Tensor d) {
      auto sd = s.data();
      std::copy(sd.begin(), sd.end(), d.data().begin());
    };
    copy(from.gamma, to.gamma);
    copy(from.beta, to.beta);
    copy(from.running_mean, to.running_mean);
    copy(from.running_var, to.running_var);
  }
}

}  // namespace

Rewritten apply_gating(const NetworkSpec& spec, const ParamStore& params, const FusionPlan& plan,
                       std::uint64_t init_seed, ShallowInit init) {
  Rewritten out{spec, params, {}};
  std::set<std::string> seen;
  for (const auto& id : plan.fuse_blocks) {
    require(seen.insert(id).second, ErrorKind::InvalidArgument,
            "apply_gating: block '" + id + "' listed twice");
    require(id.rfind("stem", 0) != 0, ErrorKind::InvalidArgument,
            "apply_gating: the stem is exempt from fusion");
    auto& blk = out.spec.block(id);
    require(blk.state == BlockState::Deep, ErrorKind::InvalidState,
            "apply_gating: block '" + id + "' is not Deep");
    blk.state = BlockState::Gated;
    blk.shallow_conv = ConvSpec{id + ".shallow", blk.conv1->in_channels, blk.conv2->out_channels, 3,
                                blk.conv1->stride * blk.conv2->stride, 1, false};
    blk.shallow_bn = BnSpec{id + ".shallow_bn", blk.conv2->out_channels};
    init_conv(out.params, *blk.shallow_conv, init_seed);
    init_bn(out.params, *blk.shallow_bn);
    if (init == ShallowInit::CenterCrop) center_crop_init(blk, out.params);
  }
  validate(out.spec);
  return out;
}

Rewritten finalize_fusion(const NetworkSpec& spec, const ParamStore& params, double gamma) {
  require(gamma >= 1.0, ErrorKind::InvalidState,
          "finalize_fusion: gate is " + std::to_string(gamma) + ", fusion needs it to reach 1");
  Rewritten out{spec, params, {}};
  auto drop_conv = [&](const ConvSpec& c) {
    out.params.tensors.erase(c.name + ".weight");
    out.params.trainable.erase(c.name + ".weight");
    if (c.bias) {
      out.params.tensors.erase(c.name + ".bias");
      out.params.trainable.erase(c.name + ".bias");
    }
  };
  auto drop_bn = [&](const BnSpec& b) {
    for (const char* suffix : {".gamma", ".beta", ".running_mean", ".running_var"}) {
      out.params.tensors.erase(b.name + suffix);
      out.params.trainable.erase(b.name + suffix);
    }
  };
  for (auto& group : out.spec.groups) {
    for (auto& blk : group) {
      if (blk.state != BlockState::Gated) continue;
      drop_conv(*blk.conv1);
      drop_conv(*blk.conv2);
      drop_bn(*blk.mid_bn);
      if (blk.exit_bn) drop_bn(*blk.exit_bn);
      out.removed_relus.push_back(blk.mid_relu);
      blk.conv1.reset();
      blk.conv2.reset();
      blk.mid_bn.reset();
      blk.exit_bn.reset();
      blk.mid_relu.clear();
      blk.state = BlockState::Fused;
    }
  }
  validate(out.spec);
  return out;
}

}  // namespace shallowpi
