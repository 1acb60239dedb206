// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/error.hpp"
#include "shallowpi/netgraph.hpp"
#include "shallowpi/ops.hpp"

namespace shallowpi {
namespace {

class Runner {
 public:
  Runner(const NetworkSpec& spec, ParamStore& params, const MaskTensors& masks,
         const ForwardOptions& options, ForwardOutput& out)
      : spec_(spec), params_(params), masks_(masks), options_(options), out_(out) {}

  Tensor conv(const Tensor& x, const ConvSpec& c) {
    const Tensor bias = c.bias ? params_.at(c.name + ".bias") : Tensor();
    return conv2d(x, params_.at(c.name + ".weight"), bias, c.stride, c.padding);
  }

  Tensor bn(const Tensor& x, const BnSpec& b) {
    BatchNormArgs args;
    args.eps = b.eps;
    args.momentum = b.momentum;
    args.training = options_.training;
    return batchnorm2d(x, params_.at(b.name + ".gamma"), params_.at(b.name + ".beta"),
                       params_.at(b.name + ".running_mean"), params_.at(b.name + ".running_var"),
                       args);
  }

  Tensor relu_site(const Tensor& x, const std::string& id, bool tap) {
    auto it = masks_.find(id);
    require(it != masks_.end(), ErrorKind::InvalidArgument,
            "forward: no mask supplied for ReLU site '" + id + "'");
    Tensor y = masked_relu(x, it->second);
    if (tap) out_.taps.push_back({id, y});
    return y;
  }

  Tensor linear_head(const Tensor& x, const LinearSpec& l) {
    return linear(global_avg_pool(x), params_.at(l.name + ".weight"), params_.at(l.name + ".bias"));
  }

  Tensor body(const Tensor& a, const BlockSpec& b) {
    auto main = [&] {
      Tensor h = bn(conv(a, *b.conv1), *b.mid_bn);
      h = relu_site(h, b.mid_relu, b.state == BlockState::Deep);
      h = conv(h, *b.conv2);
      return b.exit_bn ? bn(h, *b.exit_bn) : h;
    };
    auto shallow = [&] { return bn(conv(a, *b.shallow_conv), *b.shallow_bn); };
    switch (b.state) {
      case BlockState::Deep: return main();
      case BlockState::Fused: return shallow();
      case BlockState::Gated: {
        Tensor s = shallow();
        Tensor m = main();
        return gate_mix(s, m, *options_.gate);
      }
    }
    fail(ErrorKind::InvalidState, "unknown block state");
  }

  Tensor block(const Tensor& x, const BlockSpec& b) {
    if (b.layout == BlockLayout::PostActivation) {
      Tensor y = body(x, b);
      Tensor skip = b.proj ? bn(conv(x, *b.proj), *b.proj_bn) : x;
      return relu_site(add(y, skip), b.out_relu, true);
    }
    Tensor a = relu_site(bn(x, *b.entry_bn), b.entry_relu, true);
    Tensor y = body(a, b);
    Tensor skip = b.proj ? conv(a, *b.proj) : x;
    return add(y, skip);
  }

  void run(const Tensor& x) {
    require(x.defined() && x.rank() == 4, ErrorKind::ShapeMismatch,
            "forward: input must be [N,C,H,W]");
    require(x.dim(1) == static_cast<std::size_t>(spec_.in_channels) &&
                x.dim(2) == static_cast<std::size_t>(spec_.input_size) &&
                x.dim(3) == static_cast<std::size_t>(spec_.input_size),
            ErrorKind::ShapeMismatch,
            "forward: input shape " + shape_str(x.shape()) + " does not match network '" +
                spec_.name + "'");
    if (spec_.has_gated()) {
      require(options_.gate.has_value(), ErrorKind::InvalidArgument,
              "forward: network has Gated blocks but no gate value was given");
      require(*options_.gate >= 0.0 && *options_.gate <= 1.0, ErrorKind::OutOfRange,
              "forward: gate must lie in [0,1]");
    }
    const bool want_aux = options_.want_aux && spec_.aux.has_value();
    require(options_.want_main || want_aux, ErrorKind::InvalidArgument,
            "forward: neither head requested");
    const int last_group = options_.want_main ? static_cast<int>(spec_.groups.size())
                                              : spec_.aux->cut_group;

    Tensor h = conv(x, spec_.stem_conv);
    if (spec_.stem_bn) h = bn(h, *spec_.stem_bn);
    if (!spec_.stem_relu.empty()) h = relu_site(h, spec_.stem_relu, true);
    for (int gi = 0; gi < last_group; ++gi) {
      for (const auto& b : spec_.groups[static_cast<std::size_t>(gi)]) h = block(h, b);
      if (want_aux && gi + 1 == spec_.aux->cut_group) {
        out_.logits_ac = linear_head(h, spec_.aux->head);
      }
    }
    if (!options_.want_main) return;
    if (spec_.head_bn) h = relu_site(bn(h, *spec_.head_bn), spec_.head_relu, true);
    out_.logits_main = linear_head(h, spec_.classifier);
  }

 private:
  const NetworkSpec& spec_;
  ParamStore& params_;
  const MaskTensors& masks_;
  const ForwardOptions& options_;
  ForwardOutput& out_;
};

}  // namespace

ForwardOutput forward(const NetworkSpec& spec, ParamStore& params, const Tensor& x,
                      const MaskTensors& masks, const ForwardOptions& options) {
  ForwardOutput out;
  Runner(spec, params, masks, options, out).run(x);
  return out;
}

}  // namespace shallowpi
