// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shallowpi/tensor.hpp"

namespace shallowpi {

struct ConvSpec {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  bool bias = false;

  bool operator==(const ConvSpec&) const = default;
};

struct BnSpec {
  std::string name;
  int channels = 0;
  double eps = 1e-5;
  double momentum = 0.1;

  bool operator==(const BnSpec&) const = default;
};

struct LinearSpec {
  std::string name;
  int in_features = 0;
  int out_features = 0;

  bool operator==(const LinearSpec&) const = default;
};

/// Post-activation: conv1-bn-relu-conv2-bn (+skip) then relu.
/// Pre-activation: bn-relu then conv1-bn-relu-conv2 (+skip).
enum class BlockLayout { PostActivation, PreActivation };

enum class BlockState { Deep, Gated, Fused };

/// One residual basic block. The mid ReLU (between conv1 and conv2) is the
/// one that fusion removes; it lives in `mid_relu`.
struct BlockSpec {
  std::string id;  // "g<group>.b<block>"
  BlockLayout layout = BlockLayout::PostActivation;
  BlockState state = BlockState::Deep;
  int in_size = 0;   // input spatial size (square)
  int out_size = 0;  // output spatial size

  // Pre-activation entry (bn + relu on the block input).
  std::optional<BnSpec> entry_bn;
  std::string entry_relu;

  // Deep main branch. Absent once the block is Fused.
  std::optional<ConvSpec> conv1;
  std::optional<BnSpec> mid_bn;
  std::string mid_relu;
  std::optional<ConvSpec> conv2;
  std::optional<BnSpec> exit_bn;  // post-activation only

  // Shallow single conv-bn branch; present when Gated or Fused.
  std::optional<ConvSpec> shallow_conv;
  std::optional<BnSpec> shallow_bn;

  // Projection shortcut, when channel count or resolution changes.
  std::optional<ConvSpec> proj;
  std::optional<BnSpec> proj_bn;

  std::string out_relu;  // post-activation only

  int in_channels() const;
  int out_channels() const;
  int stride() const;

  bool operator==(const BlockSpec&) const = default;
};

struct AuxClassifier {
  /// Index of the first group that the AC head skips. The AC reads the
  /// output of group cut_group - 1 through global pooling and a linear map.
  int cut_group = 0;
  LinearSpec head;

  bool operator==(const AuxClassifier&) const = default;
};

/// Declarative residual network. Parameters live separately in ParamStore.
struct NetworkSpec {
  std::string name;
  BlockLayout layout = BlockLayout::PostActivation;
  int in_channels = 3;
  int input_size = 32;
  int num_classes = 10;

  ConvSpec stem_conv;
  std::optional<BnSpec> stem_bn;
  std::string stem_relu;  // empty for pre-activation nets

  std::vector<std::vector<BlockSpec>> groups;

  std::optional<BnSpec> head_bn;  // pre-activation final bn + relu
  std::string head_relu;
  LinearSpec classifier;
  std::optional<AuxClassifier> aux;

  const BlockSpec& block(const std::string& id) const;
  BlockSpec& block(const std::string& id);
  bool has_gated() const;
  std::vector<std::string> block_ids() const;

  bool operator==(const NetworkSpec&) const = default;
};

enum class Head { Main, Aux };

/// A ReLU layer of the network in execution order.
struct ReluSite {
  std::string id;
  int channels = 0;
  int size = 0;             // spatial (square)
  std::string block_id;     // empty for stem/head sites
  std::string preceding;    // name of the conv whose output feeds this ReLU
  int group = -1;           // -1 for the stem, groups.size() for the head
  bool is_stem = false;
  bool is_mid = false;      // removable by fusion

  std::int64_t positions() const {
    return static_cast<std::int64_t>(channels) * size * size;
  }
};

/// ReLU sites that execute for the given head. Gated blocks still carry
/// their mid ReLU; Fused blocks do not.
std::vector<ReluSite> relu_sites(const NetworkSpec& spec, Head head = Head::Main);

/// Convolutions executed for the given head, in order, with output size.
struct ConvSite {
  ConvSpec conv;
  int out_size = 0;
  std::string block_id;
  bool counts_toward_depth = false;
};
std::vector<ConvSite> conv_sites(const NetworkSpec& spec, Head head = Head::Main);

/// Block-internal conv layers along the inference path (stem, projection
/// shortcuts and classifier excluded). Deep and Gated blocks count two,
/// Fused blocks one. With Head::Aux the skipped groups do not count.
int depth_metric(const NetworkSpec& spec, Head head = Head::Main);

std::int64_t count_relu_positions(const NetworkSpec& spec, bool include_stem,
                                  Head head = Head::Main);

NetworkSpec build_resnet18_cifar(int num_classes, int input_size = 32);
NetworkSpec build_wrn22_8_cifar(int num_classes, int input_size = 32);

struct TinyNetOptions {
  std::vector<int> widths;
  std::vector<int> blocks_per_group;
  int input_size = 16;
  int num_classes = 10;
  int in_channels = 3;
  BlockLayout layout = BlockLayout::PostActivation;
  /// Attach an AC before the last group (requires at least two groups).
  bool aux_classifier = false;
};
NetworkSpec build_tiny_net(const TinyNetOptions& options);
NetworkSpec build_tiny_net(const std::vector<int>& widths,
                           const std::vector<int>& blocks_per_group, int input_size,
                           int num_classes);

/// Returns a copy with an AC whose head skips groups >= cut_group.
NetworkSpec with_aux_classifier(NetworkSpec spec, int cut_group);

/// Checks structural invariants; throws Error on violation.
void validate(const NetworkSpec& spec);

/// Named parameter tensors plus non-trainable buffers (BN running stats).
/// std::map keeps iteration order deterministic.
struct ParamStore {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, bool> trainable;

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  void put(const std::string& name, Tensor t, bool is_trainable);

  std::vector<Tensor> trainable_tensors() const;
  std::int64_t trainable_count() const;
  ParamStore clone() const;
  void set_requires_grad(bool value);
  bool equals(const ParamStore& other) const;  // bitwise
};

/// He-normal conv weights, unit BN, uniform linear layers; seeded.
ParamStore init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Adds freshly initialized parameters for the named conv/bn without
/// touching existing ones.
void init_conv(ParamStore& params, const ConvSpec& conv, std::uint64_t seed);
void init_bn(ParamStore& params, const BnSpec& bn);
void init_linear(ParamStore& params, const LinearSpec& lin, std::uint64_t seed);

/// Mask tensors of shape [C,H,W] keyed by ReLU site id.
using MaskTensors = std::map<std::string, Tensor>;

struct ForwardOptions {
  bool training = false;
  std::optional<double> gate;
  /// Compute the AC logits (when the spec has an AC).
  bool want_aux = true;
  /// Compute the main logits. Disabling skips the groups after the AC cut.
  bool want_main = true;
};

struct Tap {
  std::string id;
  Tensor value;
};

struct ForwardOutput {
  Tensor logits_main;
  std::optional<Tensor> logits_ac;
  std::vector<Tap> taps;

  const Tensor* find_tap(const std::string& id) const;
};

/// Runs the network. Every live ReLU site needs a mask; a gate value is
/// required iff some block is Gated. Taps are recorded at every post-ReLU
/// site except the mid ReLU of Gated blocks, whose ReLU is being removed.
ForwardOutput forward(const NetworkSpec& spec, ParamStore& params, const Tensor& x,
                      const MaskTensors& masks, const ForwardOptions& options = {});

/// All-ones masks for every ReLU site of the spec (the all-ReLU model).
MaskTensors full_masks(const NetworkSpec& spec);

}  // namespace shallowpi
