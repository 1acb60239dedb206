// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/netgraph.hpp"

#include <cmath>
#include <cstring>
#include <set>

#include "shallowpi/error.hpp"
#include "shallowpi/rng.hpp"

namespace shallowpi {

int BlockSpec::in_channels() const {
  if (conv1) return conv1->in_channels;
  return shallow_conv->in_channels;
}

int BlockSpec::out_channels() const {
  if (conv2) return conv2->out_channels;
  return shallow_conv->out_channels;
}

int BlockSpec::stride() const {
  if (conv1) return conv1->stride * conv2->stride;
  return shallow_conv->stride;
}

const BlockSpec& NetworkSpec::block(const std::string& id) const {
  for (const auto& g : groups)
    for (const auto& b : g)
      if (b.id == id) return b;
  fail(ErrorKind::InvalidArgument, "unknown block '" + id + "'");
}

BlockSpec& NetworkSpec::block(const std::string& id) {
  return const_cast<BlockSpec&>(std::as_const(*this).block(id));
}

bool NetworkSpec::has_gated() const {
  for (const auto& g : groups)
    for (const auto& b : g)
      if (b.state == BlockState::Gated) return true;
  return false;
}

std::vector<std::string> NetworkSpec::block_ids() const {
  std::vector<std::string> ids;
  for (const auto& g : groups)
    for (const auto& b : g) ids.push_back(b.id);
  return ids;
}

namespace {

int executed_groups(const NetworkSpec& spec, Head head) {
  if (head == Head::Main) return static_cast<int>(spec.groups.size());
  require(spec.aux.has_value(), ErrorKind::InvalidArgument,
          "network '" + spec.name + "' has no auxiliary classifier");
  return spec.aux->cut_group;
}

int conv_out(int size, const ConvSpec& c) {
  return (size + 2 * c.padding - c.kernel) / c.stride + 1;
}

std::string last_conv_name(const BlockSpec& b) {
  return b.state == BlockState::Fused ? b.shallow_conv->name : b.conv2->name;
}

}  // namespace

std::vector<ReluSite> relu_sites(const NetworkSpec& spec, Head head) {
  const int groups = executed_groups(spec, head);
  std::vector<ReluSite> sites;
  std::string prev_conv = spec.stem_conv.name;
  if (!spec.stem_relu.empty()) {
    sites.push_back({spec.stem_relu, spec.stem_conv.out_channels, spec.input_size, "",
                     spec.stem_conv.name, -1, true, false});
  }
  for (int gi = 0; gi < groups; ++gi) {
    for (const auto& b : spec.groups[static_cast<std::size_t>(gi)]) {
      if (b.layout == BlockLayout::PreActivation) {
        sites.push_back({b.entry_relu, b.in_channels(), b.in_size, b.id, prev_conv, gi, false,
                         false});
      }
      if (b.state != BlockState::Fused) {
        sites.push_back({b.mid_relu, b.conv1->out_channels, b.out_size, b.id, b.conv1->name, gi,
                         false, true});
      }
      if (b.layout == BlockLayout::PostActivation) {
        sites.push_back({b.out_relu, b.out_channels(), b.out_size, b.id, last_conv_name(b), gi,
                         false, false});
      }
      prev_conv = last_conv_name(b);
    }
  }
  if (head == Head::Main && !spec.head_relu.empty()) {
    const auto& last = spec.groups.back().back();
    sites.push_back({spec.head_relu, last.out_channels(), last.out_size, "", prev_conv,
                     static_cast<int>(spec.groups.size()), false, false});
  }
  return sites;
}

std::vector<ConvSite> conv_sites(const NetworkSpec& spec, Head head) {
  const int groups = executed_groups(spec, head);
  std::vector<ConvSite> sites;
  sites.push_back({spec.stem_conv, conv_out(spec.input_size, spec.stem_conv), "", false});
  for (int gi = 0; gi < groups; ++gi) {
    for (const auto& b : spec.groups[static_cast<std::size_t>(gi)]) {
      const bool fused = b.state == BlockState::Fused;
      if (!fused) {
        sites.push_back({*b.conv1, b.out_size, b.id, true});
        sites.push_back({*b.conv2, b.out_size, b.id, true});
      }
      if (b.shallow_conv) sites.push_back({*b.shallow_conv, b.out_size, b.id, fused});
      if (b.proj) sites.push_back({*b.proj, b.out_size, b.id, false});
    }
  }
  return sites;
}

int depth_metric(const NetworkSpec& spec, Head head) {
  int depth = 0;
  for (const auto& site : conv_sites(spec, head)) depth += site.counts_toward_depth ? 1 : 0;
  return depth;
}

std::int64_t count_relu_positions(const NetworkSpec& spec, bool include_stem, Head head) {
  std::int64_t total = 0;
  for (const auto& s : relu_sites(spec, head)) {
    if (s.is_stem && !include_stem) continue;
    total += s.positions();
  }
  return total;
}

namespace {

std::string block_id(int g, int b) {
  return "g" + std::to_string(g) + ".b" + std::to_string(b);
}

BlockSpec make_post_block(int g, int b, int in_ch, int out_ch, int stride, int in_size) {
  BlockSpec blk;
  blk.id = block_id(g, b);
  blk.layout = BlockLayout::PostActivation;
  blk.in_size = in_size;
  blk.out_size = (in_size + 2 - 3) / stride + 1;
  blk.conv1 = ConvSpec{blk.id + ".conv1", in_ch, out_ch, 3, stride, 1, false};
  blk.mid_bn = BnSpec{blk.id + ".bn1", out_ch};
  blk.mid_relu = blk.id + ".mid_relu";
  blk.conv2 = ConvSpec{blk.id + ".conv2", out_ch, out_ch, 3, 1, 1, false};
  blk.exit_bn = BnSpec{blk.id + ".bn2", out_ch};
  if (stride != 1 || in_ch != out_ch) {
    blk.proj = ConvSpec{blk.id + ".proj", in_ch, out_ch, 1, stride, 0, false};
    blk.proj_bn = BnSpec{blk.id + ".proj_bn", out_ch};
  }
  blk.out_relu = blk.id + ".out_relu";
  return blk;
}

BlockSpec make_pre_block(int g, int b, int in_ch, int out_ch, int stride, int in_size) {
  BlockSpec blk;
  blk.id = block_id(g, b);
  blk.layout = BlockLayout::PreActivation;
  blk.in_size = in_size;
  blk.out_size = (in_size + 2 - 3) / stride + 1;
  blk.entry_bn = BnSpec{blk.id + ".bn1", in_ch};
  blk.entry_relu = blk.id + ".in_relu";
  blk.conv1 = ConvSpec{blk.id + ".conv1", in_ch, out_ch, 3, stride, 1, false};
  blk.mid_bn = BnSpec{blk.id + ".bn2", out_ch};
  blk.mid_relu = blk.id + ".mid_relu";
  blk.conv2 = ConvSpec{blk.id + ".conv2", out_ch, out_ch, 3, 1, 1, false};
  if (stride != 1 || in_ch != out_ch) {
    blk.proj = ConvSpec{blk.id + ".proj", in_ch, out_ch, 1, stride, 0, false};
  }
  return blk;
}

NetworkSpec build_generic(std::string name, BlockLayout layout, int in_channels,
                          int stem_width, const std::vector<int>& widths,
                          const std::vector<int>& blocks, int input_size, int num_classes) {
  require(num_classes >= 2, ErrorKind::InvalidArgument, "num_classes must be at least 2");
  require(!widths.empty(), ErrorKind::InvalidArgument, "widths must be non-empty");
  require(widths.size() == blocks.size(), ErrorKind::InvalidArgument,
          "widths and blocks_per_group must have the same length");
  require(input_size >= 1 && in_channels >= 1 && stem_width >= 1, ErrorKind::InvalidArgument,
          "input size and channel counts must be positive");
  for (std::size_t i = 0; i < widths.size(); ++i) {
    require(widths[i] >= 1 && blocks[i] >= 1, ErrorKind::InvalidArgument,
            "group widths and block counts must be positive");
  }
  NetworkSpec spec;
  spec.name = std::move(name);
  spec.layout = layout;
  spec.in_channels = in_channels;
  spec.input_size = input_size;
  spec.num_classes = num_classes;
  spec.stem_conv = ConvSpec{"stem.conv", in_channels, stem_width, 3, 1, 1, false};
  if (layout == BlockLayout::PostActivation) {
    spec.stem_bn = BnSpec{"stem.bn", stem_width};
    spec.stem_relu = "stem.relu";
  }
  int ch = stem_width;
  int size = input_size;
  for (std::size_t g = 0; g < widths.size(); ++g) {
    std::vector<BlockSpec> group;
    for (int b = 0; b < blocks[g]; ++b) {
      const int stride = (g > 0 && b == 0) ? 2 : 1;
      require(size >= 1 && (size + 2 - 3) / stride + 1 >= 1, ErrorKind::InvalidArgument,
              "input too small for the requested depth");
      auto blk = layout == BlockLayout::PostActivation
                     ? make_post_block(static_cast<int>(g), b, ch, widths[g], stride, size)
                     : make_pre_block(static_cast<int>(g), b, ch, widths[g], stride, size);
      ch = widths[g];
      size = blk.out_size;
      group.push_back(std::move(blk));
    }
    spec.groups.push_back(std::move(group));
  }
  if (layout == BlockLayout::PreActivation) {
    spec.head_bn = BnSpec{"head.bn", ch};
    spec.head_relu = "head.relu";
  }
  spec.classifier = LinearSpec{"fc", ch, num_classes};
  return spec;
}

}  // namespace

NetworkSpec build_resnet18_cifar(int num_classes, int input_size) {
  auto spec = build_generic("resnet18", BlockLayout::PostActivation, 3, 64, {64, 128, 256, 512},
                            {2, 2, 2, 2}, input_size, num_classes);
  return with_aux_classifier(std::move(spec), 3);
}

NetworkSpec build_wrn22_8_cifar(int num_classes, int input_size) {
  constexpr int widen = 8;
  auto spec = build_generic("wrn22_8", BlockLayout::PreActivation, 3, 16,
                            {16 * widen, 32 * widen, 64 * widen}, {3, 3, 3}, input_size,
                            num_classes);
  return with_aux_classifier(std::move(spec), 2);
}

NetworkSpec build_tiny_net(const TinyNetOptions& o) {
  require(!o.widths.empty(), ErrorKind::InvalidArgument, "widths must be non-empty");
  auto spec = build_generic("tiny", o.layout, o.in_channels, o.widths.front(), o.widths,
                            o.blocks_per_group, o.input_size, o.num_classes);
  if (o.aux_classifier) {
    spec = with_aux_classifier(std::move(spec), static_cast<int>(o.widths.size()) - 1);
  }
  return spec;
}

NetworkSpec build_tiny_net(const std::vector<int>& widths,
                           const std::vector<int>& blocks_per_group, int input_size,
                           int num_classes) {
  TinyNetOptions o;
  o.widths = widths;
  o.blocks_per_group = blocks_per_group;
  o.input_size = input_size;
  o.num_classes = num_classes;
  return build_tiny_net(o);
}

NetworkSpec with_aux_classifier(NetworkSpec spec, int cut_group) {
  const int groups = static_cast<int>(spec.groups.size());
  require(cut_group >= 1 && cut_group < groups, ErrorKind::InvalidArgument,
          "auxiliary classifier cut must lie strictly inside the group range [1," +
              std::to_string(groups - 1) + "], got " + std::to_string(cut_group));
  const auto& feed = spec.groups[static_cast<std::size_t>(cut_group - 1)].back();
  spec.aux = AuxClassifier{cut_group, LinearSpec{"aux_fc", feed.out_channels(), spec.num_classes}};
  return spec;
}

void validate(const NetworkSpec& spec) {
  auto bad = [&](const std::string& what) {
    fail(ErrorKind::InvalidArgument, "network '" + spec.name + "': " + what);
  };
  if (spec.groups.empty()) bad("no residual groups");
  if (spec.num_classes < 2) bad("num_classes must be at least 2");
  if (spec.stem_conv.in_channels != spec.in_channels) bad("stem in-channels mismatch");
  int ch = spec.stem_conv.out_channels;
  int size = conv_out(spec.input_size, spec.stem_conv);
  std::set<std::string> relu_ids;
  for (const auto& s : relu_sites(spec)) {
    if (!relu_ids.insert(s.id).second) bad("duplicate ReLU site '" + s.id + "'");
  }
  for (const auto& g : spec.groups) {
    if (g.empty()) bad("empty group");
    for (const auto& b : g) {
      if (b.layout != spec.layout) bad(b.id + ": layout differs from network");
      if (b.in_size != size) bad(b.id + ": input size mismatch");
      const bool has_main = b.conv1 && b.conv2 && b.mid_bn && !b.mid_relu.empty();
      const bool has_shallow = b.shallow_conv && b.shallow_bn;
      switch (b.state) {
        case BlockState::Deep:
          if (!has_main || has_shallow) bad(b.id + ": Deep block needs exactly the main branch");
          break;
        case BlockState::Gated:
          if (!has_main || !has_shallow) bad(b.id + ": Gated block needs both branches");
          break;
        case BlockState::Fused:
          if (b.conv1 || b.conv2 || !b.mid_relu.empty() || !has_shallow)
            bad(b.id + ": Fused block must hold only the shallow conv-bn");
          break;
      }
      if (has_main) {
        if (b.conv1->in_channels != ch) bad(b.id + ": conv1 in-channels mismatch");
        if (b.conv2->in_channels != b.conv1->out_channels) bad(b.id + ": conv chain mismatch");
        if (conv_out(conv_out(size, *b.conv1), *b.conv2) != b.out_size)
          bad(b.id + ": main branch output size mismatch");
      }
      if (has_shallow) {
        if (b.shallow_conv->in_channels != ch) bad(b.id + ": shallow in-channels mismatch");
        if (has_main) {
          if (b.shallow_conv->out_channels != b.conv2->out_channels)
            bad(b.id + ": shallow out-channels mismatch");
          if (b.shallow_conv->stride != b.conv1->stride * b.conv2->stride)
            bad(b.id + ": shallow stride must equal the product of the main strides");
        }
        if (conv_out(size, *b.shallow_conv) != b.out_size)
          bad(b.id + ": shallow branch output size mismatch");
      }
      const bool reshapes = b.in_channels() != b.out_channels() || b.out_size != size;
      if (reshapes != b.proj.has_value()) bad(b.id + ": skip path does not match block shape");
      if (b.proj && conv_out(size, *b.proj) != b.out_size) bad(b.id + ": skip output size mismatch");
      if (b.layout == BlockLayout::PostActivation && b.out_relu.empty())
        bad(b.id + ": post-activation block needs an output ReLU");
      if (b.layout == BlockLayout::PreActivation && (!b.entry_bn || b.entry_relu.empty()))
        bad(b.id + ": pre-activation block needs an entry bn-relu");
      ch = b.out_channels();
      size = b.out_size;
    }
  }
  if (spec.classifier.in_features != ch || spec.classifier.out_features != spec.num_classes)
    bad("classifier shape mismatch");
  if (spec.aux) {
    const int groups = static_cast<int>(spec.groups.size());
    if (spec.aux->cut_group < 1 || spec.aux->cut_group >= groups)
      bad("auxiliary classifier must sit strictly before the last group");
    const auto& feed = spec.groups[static_cast<std::size_t>(spec.aux->cut_group - 1)].back();
    if (spec.aux->head.in_features != feed.out_channels() ||
        spec.aux->head.out_features != spec.num_classes)
      bad("auxiliary classifier shape mismatch");
  }
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors.find(name);
  require(it != tensors.end(), ErrorKind::InvalidArgument, "missing parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

void ParamStore::put(const std::string& name, Tensor t, bool is_trainable) {
  tensors[name] = std::move(t);
  trainable[name] = is_trainable;
}

std::vector<Tensor> ParamStore::trainable_tensors() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : tensors) {
    if (trainable.at(name)) out.push_back(t);
  }
  return out;
}

std::int64_t ParamStore::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& t : trainable_tensors()) n += static_cast<std::int64_t>(t.numel());
  return n;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, t] : tensors) {
    Tensor c = t.clone();
    c.set_requires_grad(t.requires_grad());
    out.put(name, std::move(c), trainable.at(name));
  }
  return out;
}

void ParamStore::set_requires_grad(bool value) {
  for (auto& [name, t] : tensors) t.set_requires_grad(value && trainable.at(name));
}

bool ParamStore::equals(const ParamStore& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (const auto& [name, t] : tensors) {
    auto it = other.tensors.find(name);
    if (it == other.tensors.end() || it->second.shape() != t.shape()) return false;
    auto a = t.data();
    auto b = it->second.data();
    if (std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

void init_conv(ParamStore& params, const ConvSpec& conv, std::uint64_t seed) {
  Rng rng(derive_seed(seed, conv.name));
  const auto fan_in = static_cast<double>(conv.in_channels * conv.kernel * conv.kernel);
  const double std = std::sqrt(2.0 / fan_in);
  Shape shape{static_cast<std::size_t>(conv.out_channels), static_cast<std::size_t>(conv.in_channels),
              static_cast<std::size_t>(conv.kernel), static_cast<std::size_t>(conv.kernel)};
  std::vector<double> w(shape_numel(shape));
  fill_standard_normal(rng, w);
  for (auto& v : w) v *= std;
  params.put(conv.name + ".weight", Tensor(shape, std::move(w)), true);
  if (conv.bias) {
    params.put(conv.name + ".bias", Tensor::zeros({static_cast<std::size_t>(conv.out_channels)}),
               true);
  }
}

void init_bn(ParamStore& params, const BnSpec& bn) {
  const auto c = static_cast<std::size_t>(bn.channels);
  params.put(bn.name + ".gamma", Tensor::full({c}, 1.0), true);
  params.put(bn.name + ".beta", Tensor::zeros({c}), true);
  params.put(bn.name + ".running_mean", Tensor::zeros({c}), false);
  params.put(bn.name + ".running_var", Tensor::full({c}, 1.0), false);
}

void init_linear(ParamStore& params, const LinearSpec& lin, std::uint64_t seed) {
  Rng rng(derive_seed(seed, lin.name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(lin.in_features));
  const auto o = static_cast<std::size_t>(lin.out_features);
  const auto f = static_cast<std::size_t>(lin.in_features);
  std::vector<double> w(o * f), b(o);
  for (auto& v : w) v = bound * (2.0 * uniform01(rng) - 1.0);
  for (auto& v : b) v = bound * (2.0 * uniform01(rng) - 1.0);
  params.put(lin.name + ".weight", Tensor({o, f}, std::move(w)), true);
  params.put(lin.name + ".bias", Tensor({o}, std::move(b)), true);
}

ParamStore init_params(const NetworkSpec& spec, std::uint64_t seed) {
  validate(spec);
  ParamStore p;
  init_conv(p, spec.stem_conv, seed);
  if (spec.stem_bn) init_bn(p, *spec.stem_bn);
  for (const auto& g : spec.groups) {
    for (const auto& b : g) {
      if (b.entry_bn) init_bn(p, *b.entry_bn);
      if (b.conv1) init_conv(p, *b.conv1, seed);
      if (b.mid_bn) init_bn(p, *b.mid_bn);
      if (b.conv2) init_conv(p, *b.conv2, seed);
      if (b.exit_bn) init_bn(p, *b.exit_bn);
      if (b.shallow_conv) init_conv(p, *b.shallow_conv, seed);
      if (b.shallow_bn) init_bn(p, *b.shallow_bn);
      if (b.proj) init_conv(p, *b.proj, seed);
      if (b.proj_bn) init_bn(p, *b.proj_bn);
    }
  }
  if (spec.head_bn) init_bn(p, *spec.head_bn);
  init_linear(p, spec.classifier, seed);
  if (spec.aux) init_linear(p, spec.aux->head, seed);
  return p;
}

MaskTensors full_masks(const NetworkSpec& spec) {
  MaskTensors masks;
  for (const auto& s : relu_sites(spec)) {
    masks[s.id] = Tensor::full({static_cast<std::size_t>(s.channels),
                                static_cast<std::size_t>(s.size),
                                static_cast<std::size_t>(s.size)},
                               1.0);
  }
  return masks;
}

const Tensor* ForwardOutput::find_tap(const std::string& id) const {
  for (const auto& t : taps)
    if (t.id == id) return &t.value;
  return nullptr;
}

}  // namespace shallowpi
