// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/config.hpp"

#include <fstream>
#include <set>

#include "shallowpi/error.hpp"
#include "shallowpi/io.hpp"

namespace shallowpi::cli {

using nlohmann::json;

namespace {

/// Reads keys of one JSON object and rejects any it was not asked about.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j.is_object(), ErrorKind::InvalidArgument, "config: '" + path_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      fail(ErrorKind::InvalidArgument, "config: '" + where(key) + "' has the wrong type");
    }
  }

  template <class T>
  void get_opt(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (it->is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = std::move(v);
  }

  std::optional<Section> sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return std::nullopt;
    return Section(*it, where(key));
  }

  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      require(seen_.count(k) != 0, ErrorKind::InvalidArgument,
              "config: unknown key '" + (path_.empty() ? k : path_ + "." + k) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class E>
E pick(const std::string& value, const std::string& where,
       std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, e] : options) {
    if (value == name) return e;
    names += names.empty() ? name : std::string(", ") + name;
  }
  fail(ErrorKind::InvalidArgument,
       "config: '" + where + "' is '" + value + "', expected one of: " + names);
}

void read_train(Section s, TrainConfig& t) {
  s.get("epochs", t.epochs);
  s.get("lr", t.lr);
  s.get("lr_decay_epochs", t.lr_decay_epochs);
  s.get("lr_decay_factor", t.lr_decay_factor);
  s.get("batch_size", t.batch_size);
  s.get("momentum", t.sgd.momentum);
  s.get("weight_decay", t.sgd.weight_decay);
  s.get("augment", t.augment);
  s.finish();
}

}  // namespace

void ExperimentConfig::validate() const {
  require(relu_budget_fraction > 0.0 && relu_budget_fraction <= 1.0, ErrorKind::InvalidArgument,
          "config: relu_budget_fraction must lie in (0,1]");
  require(!relu_budget || *relu_budget > 0, ErrorKind::InvalidArgument,
          "config: relu_budget must be positive");
  require(pruning_density > 0.0 && pruning_density <= 1.0, ErrorKind::InvalidArgument,
          "config: pruning_density must lie in (0,1]");
  require(d_th >= 0.0 && d_th < 1.0, ErrorKind::InvalidArgument, "config: d_th must lie in [0,1)");
  require(schedule.ramp_end_epoch >= 0, ErrorKind::InvalidArgument,
          "config: schedule.ramp_end_epoch must be non-negative");
  require(!score_lr || *score_lr > 0.0, ErrorKind::InvalidArgument,
          "config: score_lr must be positive");
  require(dataset.val_fraction > 0.0 && dataset.val_fraction < 1.0, ErrorKind::InvalidArgument,
          "config: dataset.val_fraction must lie in (0,1)");
  loss.validate();
  baseline_train.validate();
  stage2_train.validate();
  finetune_train.validate();
  if (model.kind == ModelKind::Tiny) {
    require(!model.widths.empty() && model.widths.size() == model.blocks.size(),
            ErrorKind::InvalidArgument, "config: model.widths and model.blocks must align");
  }
  if (model.aux_cut) {
    require(*model.aux_cut >= 1, ErrorKind::InvalidArgument, "config: model.aux_cut must be >= 1");
  }
  if (loss.kd_target == KdTarget::AuxClassifier || loss.aux_ce) {
    require(model.aux_cut.has_value(), ErrorKind::InvalidArgument,
            "config: loss.kd_target 'aux' needs model.aux_cut");
  }
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  if (auto m = root.sub("model")) {
    std::string name = "tiny";
    m->get("name", name);
    c.model.kind = pick<ModelKind>(name, "model.name",
                                   {{"tiny", ModelKind::Tiny},
                                    {"resnet18", ModelKind::ResNet18},
                                    {"wrn22_8", ModelKind::Wrn22_8}});
    if (c.model.kind == ModelKind::ResNet18) c.model.aux_cut = 3;
    if (c.model.kind == ModelKind::Wrn22_8) c.model.aux_cut = 2;
    m->get("widths", c.model.widths);
    m->get("blocks", c.model.blocks);
    m->get_opt("aux_cut", c.model.aux_cut);
    m->finish();
  }
  if (auto d = root.sub("dataset")) {
    std::string kind = "synthetic_blobs";
    d->get("kind", kind);
    c.dataset.kind = pick<DatasetKind>(kind, "dataset.kind",
                                       {{"synthetic_blobs", DatasetKind::SyntheticBlobs},
                                        {"tiny_images", DatasetKind::TinyImages},
                                        {"cifar10_binary", DatasetKind::Cifar10Binary}});
    auto& b = c.dataset.blobs;
    d->get("classes", b.classes);
    d->get("train_samples", b.train_samples);
    d->get("test_samples", b.test_samples);
    d->get("channels", b.channels);
    d->get("image_size", b.image_size);
    d->get("noise", b.noise);
    std::vector<std::string> train_files;
    d->get("train_files", train_files);
    for (auto& f : train_files) c.dataset.train_files.emplace_back(f);
    std::string test_file;
    d->get("test_file", test_file);
    c.dataset.test_file = test_file;
    c.dataset.image_size = b.image_size;
    d->get("val_fraction", c.dataset.val_fraction);
    if (auto n = d->sub("normalization")) {
      n->get("mean", c.dataset.normalization.mean);
      n->get("std", c.dataset.normalization.std);
      n->finish();
    }
    d->finish();
  }
  root.get_opt("relu_budget", c.relu_budget);
  root.get("relu_budget_fraction", c.relu_budget_fraction);
  root.get("pruning_density", c.pruning_density);
  root.get("d_th", c.d_th);
  root.get_opt("fuse_blocks", c.fuse_blocks);
  std::string init = "he";
  root.get("shallow_init", init);
  c.shallow_init = pick<ShallowInit>(init, "shallow_init",
                                     {{"he", ShallowInit::He}, {"center_crop", ShallowInit::CenterCrop}});
  if (auto t = root.sub("baseline_train")) read_train(*t, c.baseline_train);
  if (auto t = root.sub("stage2_train")) read_train(*t, c.stage2_train);
  if (auto t = root.sub("finetune_train")) read_train(*t, c.finetune_train);
  std::optional<int> ramp_end;
  if (auto s = root.sub("schedule")) {
    std::string kind = "linear";
    s->get("kind", kind);
    c.schedule.kind = pick<ScheduleKind>(kind, "schedule.kind",
                                         {{"linear", ScheduleKind::Linear},
                                          {"cosine", ScheduleKind::Cosine}});
    s->get_opt("ramp_end_epoch", ramp_end);
    s->finish();
  }
  c.schedule.ramp_end_epoch =
      ramp_end.value_or(c.finetune_train.lr_decay_epochs.empty() ? c.finetune_train.epochs
                                                                 : c.finetune_train.lr_decay_epochs.front());
  if (auto l = root.sub("loss")) {
    l->get("lambda", c.loss.lambda);
    l->get("beta", c.loss.beta);
    l->get("rho", c.loss.rho);
    std::string target = "final";
    l->get("kd_target", target);
    c.loss.kd_target = pick<KdTarget>(target, "loss.kd_target",
                                      {{"final", KdTarget::FinalClassifier},
                                       {"aux", KdTarget::AuxClassifier}});
    l->get("aux_ce", c.loss.aux_ce);
    l->finish();
  }
  root.get_opt("score_lr", c.score_lr);
  if (auto lat = root.sub("latency")) {
    LatencyCoeffs coeffs;
    lat->get("per_relu", coeffs.per_relu);
    lat->get("per_mac", coeffs.per_mac);
    lat->finish();
    c.latency = coeffs;
  }
  std::string out = c.output_dir.string();
  root.get("output_dir", out);
  c.output_dir = out;
  root.get("seed", c.seed);
  root.finish();
  apply_seed(c, c.seed);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, "config '" + path.string() + "': " + e.what());
  }
  return parse_config(j);
}

void apply_seed(ExperimentConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.baseline_train.seed = derive_seed(seed, "baseline");
  config.stage2_train.seed = derive_seed(seed, "stage2");
  config.finetune_train.seed = derive_seed(seed, "finetune");
  config.dataset.blobs.seed = derive_seed(seed, "data");
}

NetworkSpec build_model(const ExperimentConfig& config, int num_classes, int input_size) {
  NetworkSpec spec;
  switch (config.model.kind) {
    case ModelKind::ResNet18: spec = build_resnet18_cifar(num_classes, input_size); break;
    case ModelKind::Wrn22_8: spec = build_wrn22_8_cifar(num_classes, input_size); break;
    case ModelKind::Tiny: {
      TinyNetOptions o;
      o.widths = config.model.widths;
      o.blocks_per_group = config.model.blocks;
      o.input_size = input_size;
      o.num_classes = num_classes;
      o.in_channels = config.dataset.blobs.channels;
      spec = build_tiny_net(o);
      break;
    }
  }
  if (config.model.aux_cut) {
    spec = with_aux_classifier(std::move(spec), *config.model.aux_cut);
  } else {
    spec.aux.reset();
  }
  validate(spec);
  return spec;
}

DataSplits load_data(const ExperimentConfig& config) {
  const auto& d = config.dataset;
  if (d.kind == DatasetKind::SyntheticBlobs) return make_blob_splits(d.blobs, d.val_fraction);
  require(!d.train_files.empty() && !d.test_file.empty(), ErrorKind::InvalidArgument,
          "config: dataset.train_files and dataset.test_file are required for CIFAR data");
  Dataset train;
  for (const auto& f : d.train_files) {
    Dataset part = ingest_cifar10_binary(f, d.normalization);
    if (train.count() == 0) {
      train = std::move(part);
    } else {
      train.images.insert(train.images.end(), part.images.begin(), part.images.end());
      train.labels.insert(train.labels.end(), part.labels.begin(), part.labels.end());
    }
  }
  Dataset test = ingest_cifar10_binary(d.test_file, d.normalization);
  if (d.kind == DatasetKind::TinyImages) {
    train = downsample(train, d.image_size);
    test = downsample(test, d.image_size);
  }
  return split_validation(std::move(train), std::move(test), 10, d.val_fraction,
                          derive_seed(config.seed, "val_split"));
}

std::int64_t global_budget(const ExperimentConfig& config, const NetworkSpec& spec) {
  const auto total = count_relu_positions(spec, true);
  if (config.relu_budget) {
    require(*config.relu_budget <= total, ErrorKind::InvalidArgument,
            "config: relu_budget " + std::to_string(*config.relu_budget) + " exceeds the " +
                std::to_string(total) + " ReLU positions of '" + spec.name + "'");
    return *config.relu_budget;
  }
  return std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::llround(config.relu_budget_fraction * static_cast<double>(total))));
}

}  // namespace shallowpi::cli
