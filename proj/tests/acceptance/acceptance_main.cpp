// SPDX-License-Identifier: Apache-2.0
// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. `--only 3,5` runs a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "properties.hpp"
#include "shallowpi/commands.hpp"
#include "shallowpi/config.hpp"
#include "shallowpi/costmodel.hpp"
#include "shallowpi/io.hpp"
#include "shallowpi/masklearn.hpp"
#include "shallowpi/rng.hpp"
#include "shallowpi/sensitivity.hpp"
#include "shallowpi/trainer.hpp"
#include "tempdir.hpp"

using namespace shallowpi;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Accumulates sub-checks; the criterion passes only if all of them do.
class Verdict {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      failures_.push_back(what);
    }
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool pass() const { return pass_; }
  std::string detail() const {
    std::string out;
    for (const auto& f : failures_) out += (out.empty() ? "" : "; ") + ("failed: " + f);
    for (const auto& n : notes_) out += (out.empty() ? "" : "; ") + n;
    return out;
  }

 private:
  bool pass_ = true;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

MaskSet masks_with(const NetworkSpec& spec, std::int64_t kept) {
  MaskSet out;
  for (const auto& s : relu_sites(spec)) {
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(s.positions()), 0);
    const auto take = std::min<std::int64_t>(kept, s.positions());
    std::fill_n(bits.begin(), take, 1);
    kept -= take;
    out.emplace(s.id, ReluMask(s.id, s.channels, s.size, s.size, bits));
  }
  return out;
}

Verdict criterion1() {
  Verdict v;
  const auto r18 = build_resnet18_cifar(100);
  const auto wrn = build_wrn22_8_cifar(100);
  v.check(depth_metric(r18) == 16, "ResNet18 depth " + std::to_string(depth_metric(r18)));
  v.check(depth_metric(wrn) == 18, "WRN22-8 depth " + std::to_string(depth_metric(wrn)));
  struct Row {
    std::int64_t kept;
    double published;
    double tol;
  };
  const Row rows[] = {{82000, 6.8, 0.03},   {76800, 7.3, 0.03},  {49600, 11.2, 0.03},
                      {47400, 11.8, 0.03},  {21100, 26.4, 0.03}, {24900, 21.8, 0.05}};
  double worst = 0.0;
  for (const auto& row : rows) {
    const auto rep = report(r18, r18, masks_with(r18, row.kept));
    const double got = rep.relu_ops_reduction.value();
    const double dev = std::abs(got / row.published - 1.0);
    v.check(dev <= row.tol, std::to_string(row.kept) + " kept gives " + fmt(got) + "x vs " +
                                fmt(row.published) + "x");
    if (row.tol == 0.03) worst = std::max(worst, dev);
    if (row.kept == 24900) v.note("24.9k row " + fmt(got) + "x vs 21.8x (" + fmt(100 * dev, 3) + "%)");
  }
  v.note("worst deviation of the 3% rows " + fmt(100 * worst, 3) + "%");
  return v;
}

Verdict criterion2() {
  Verdict v;
  const auto r18 = build_resnet18_cifar(10);
  const auto ac = with_aux_classifier(r18, 3);
  // gating only adds tensors and shares the rest, so one store serves every plan
  const auto params = init_params(ac, 1);
  auto fused_depth = [&](const NetworkSpec& spec, std::vector<std::string> blocks, Head head) {
    FusionPlan plan;
    plan.fuse_blocks = std::move(blocks);
    const auto g = apply_gating(spec, params, plan, 2);
    return depth_metric(finalize_fusion(g.spec, g.params, 1.0).spec, head);
  };
  const auto ids = r18.block_ids();
  for (std::size_t n = 0; n <= ids.size(); ++n) {
    const std::vector<std::string> first(ids.begin(), ids.begin() + static_cast<long>(n));
    const int d = fused_depth(r18, first, Head::Main);
    v.check(d == 16 - static_cast<int>(n), std::to_string(n) + " fusions give depth " + std::to_string(d));
  }
  const int d4 = fused_depth(r18, {"g0.b0", "g0.b1", "g1.b0", "g1.b1"}, Head::Main);
  const int d2 = fused_depth(r18, {"g0.b0", "g0.b1"}, Head::Main);
  const int dac = fused_depth(ac, {"g0.b0", "g0.b1"}, Head::Aux);
  v.check(d4 == 12, "4 fusions depth " + std::to_string(d4));
  v.check(d2 == 14, "2 fusions depth " + std::to_string(d2));
  v.check(dac == 10, "AC head with 2 fusions depth " + std::to_string(dac));
  v.note("depths 12/14/AC 10 = " + std::to_string(d4) + "/" + std::to_string(d2) + "/" + std::to_string(dac));
  return v;
}

Verdict criterion3() {
  Verdict v;
  std::mt19937_64 rng(2024);
  double fold = 0.0, compose = 0.0;
  const int cases = 150;
  for (int i = 0; i < cases; ++i) fold = std::max(fold, property::fold_case_error(rng));
  for (int i = 0; i < cases; ++i) compose = std::max(compose, property::compose_case_error(rng));
  v.check(fold <= 1e-10, "fold max error " + fmt(fold));
  v.check(compose <= 1e-10, "compose max error " + fmt(compose));
  v.note(std::to_string(cases) + " cases each, max |diff| fold " + fmt(fold, 3) + ", compose " + fmt(compose, 3));
  return v;
}

Verdict criterion4() {
  Verdict v;
  struct Arch {
    std::string name;
    NetworkSpec spec;
    std::vector<std::string> blocks;
  };
  TinyNetOptions post;
  post.widths = {8, 16};
  post.blocks_per_group = {2, 2};
  post.input_size = 8;
  post.num_classes = 5;
  post.aux_classifier = true;
  TinyNetOptions pre = post;
  pre.layout = BlockLayout::PreActivation;
  std::vector<Arch> archs{
      {"tiny post-activation", build_tiny_net(post), {"g0.b0", "g1.b0", "g1.b1"}},
      {"tiny pre-activation", build_tiny_net(pre), {"g0.b1", "g1.b0"}},
      {"ResNet18", with_aux_classifier(build_resnet18_cifar(10, 8), 3), {"g0.b0", "g1.b0", "g2.b1"}},
      {"WRN22-8", build_wrn22_8_cifar(10, 8), {"g0.b0", "g1.b0", "g2.b2"}},
  };
  const int samples = 20;
  for (const auto& a : archs) {
    const auto r = property::gate_endpoints(a.spec, a.blocks, samples, 7);
    v.check(r.gamma0_matches_deep, a.name + " gate 0 differs from Deep");
    v.check(r.gamma1_matches_fused, a.name + " gate 1 differs from Fused");
  }
  v.note(std::to_string(archs.size()) + " architectures, " + std::to_string(samples) +
         " inputs each, bitwise");
  return v;
}

Verdict criterion5() {
  Verdict v;
  double worst = 0.0;
  std::string worst_op;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& [op, err] : property::op_gradchecks(seed)) {
      v.check(err <= 1e-5, op + " error " + fmt(err));
      if (err > worst) {
        worst = err;
        worst_op = op;
      }
    }
  }
  double net = 0.0;
  for (std::uint64_t seed : {5u, 6u}) net = std::max(net, property::finetune_loss_gradcheck(seed));
  v.check(net <= 1e-5, "fine-tuning loss through the gated network error " + fmt(net));
  v.note("worst operator " + worst_op + " " + fmt(worst, 3) + ", full loss " + fmt(net, 3));
  return v;
}

Verdict criterion6() {
  Verdict v;
  TinyNetOptions o;
  o.widths = {8, 16};
  o.blocks_per_group = {1, 1};
  o.input_size = 8;
  o.num_classes = 4;
  o.aux_classifier = true;
  const auto spec = build_tiny_net(o);
  std::mt19937_64 rng(3);

  // student identical to teacher
  auto params = init_params(spec, 1);
  property::randomize_bn(params, 2);
  const auto x = oracle::random_tensor({8, 3, 8, 8}, rng);
  const std::vector<int> labels{0, 1, 2, 3, 3, 2, 1, 0};
  const auto teacher = forward(spec, params, x, full_masks(spec));
  double worst_identity = 0.0, worst_sum = 0.0;
  for (double lambda : {0.0, 0.3, 0.9, 1.0}) {
    for (auto target : {KdTarget::FinalClassifier, KdTarget::AuxClassifier}) {
      LossConfig cfg;
      cfg.lambda = lambda;
      cfg.kd_target = target;
      auto student = forward(spec, params, x, full_masks(spec));
      const auto t = finetune_loss(student, teacher, labels, cfg);
      const double ce = cross_entropy(student.logits_main, labels).item();
      if (target == KdTarget::FinalClassifier) {
        v.check(t.kl == 0.0 && t.pram == 0.0, "KL or PRAM nonzero for identical models");
        worst_identity = std::max(worst_identity, std::abs(t.total.item() - (1.0 - lambda) * ce));
      }
      worst_sum = std::max(worst_sum, std::abs(t.kl + t.ce + t.aux_ce + t.pram - t.total.item()));
    }
  }
  v.check(worst_identity <= 1e-12, "identity total deviates by " + fmt(worst_identity));

  // breakdown on unrelated models
  auto other = init_params(spec, 9);
  for (int trial = 0; trial < 10; ++trial) {
    LossConfig cfg;
    cfg.lambda = 0.1 * trial;
    cfg.kd_target = trial % 2 ? KdTarget::AuxClassifier : KdTarget::FinalClassifier;
    cfg.aux_ce = trial % 3 == 0;
    const auto t = finetune_loss(forward(spec, other, x, full_masks(spec)), teacher, labels, cfg);
    worst_sum = std::max(worst_sum, std::abs(t.kl + t.ce + t.aux_ce + t.pram - t.total.item()));
  }
  v.check(worst_sum <= 1e-12, "term breakdown off by " + fmt(worst_sum));

  // teacher untouched through fine-tuning
  BlobOptions b;
  b.classes = 4;
  b.train_samples = 120;
  b.test_samples = 40;
  b.seed = 5;
  const auto data = make_blob_splits(b, 0.1);
  Model t{spec, init_params(spec, 1), full_mask_set(spec)};
  const auto before = t.params.clone();
  Model pr{spec, init_params(spec, 2), full_mask_set(spec)};
  freeze_all(pr.masks);
  auto cfg = fixture::train_config(10, 0.01, 4, 8);
  FusionPlan plan;
  plan.fuse_blocks = {"g0.b0"};
  LossConfig loss;
  loss.kd_target = KdTarget::AuxClassifier;
  finetune_stage3(pr, t, plan, data, cfg, loss, {ScheduleKind::Linear, 4});
  const auto steps = cfg.epochs * epoch_batches(data.train.count(), cfg.batch_size, cfg.seed, 0).size();
  v.check(steps >= 100, "only " + std::to_string(steps) + " steps");
  v.check(t.params.equals(before), "teacher weights changed");
  v.note("identity residual " + fmt(worst_identity, 3) + ", breakdown residual " + fmt(worst_sum, 3) +
         ", teacher bit-identical after " + std::to_string(steps) + " steps");
  return v;
}

Verdict criterion7() {
  Verdict v;
  const GatingSchedule lin{ScheduleKind::Linear, 90};
  const GatingSchedule cos{ScheduleKind::Cosine, 90};
  for (const auto& s : {lin, cos}) {
    v.check(gamma_at(s, 0) == 0.0, "gate at 0");
    v.check(gamma_at(s, 90) == 1.0, "gate at ramp end");
    for (int e = 0; e < 180; ++e) v.check(gamma_at(s, e + 1) >= gamma_at(s, e), "monotone at " + std::to_string(e));
  }
  double worst = 0.0;
  for (int e = 0; e < 90; ++e)
    worst = std::max(worst, std::abs(gamma_at(lin, e + 1) - gamma_at(lin, e) - 1.0 / 90.0));
  v.check(worst <= 1e-12, "linear increment off by " + fmt(worst));
  for (int e = 0; e <= 90; ++e)
    v.check(std::abs(gamma_at(lin, e) - e / 90.0) <= 1e-15, "linear gate at " + std::to_string(e));
  const TrainConfig train;
  const std::pair<int, double> expect[] = {{0, 0.01}, {89, 0.01}, {90, 0.001}, {139, 0.001},
                                           {140, 1e-4}, {159, 1e-4}, {160, 1e-5}, {179, 1e-5}};
  for (const auto& [e, lr] : expect)
    v.check(std::abs(lr_at(train, e) / lr - 1.0) <= 1e-12,
            "lr at " + std::to_string(e) + " is " + fmt(lr_at(train, e)));
  v.note("max linear increment error " + fmt(worst, 3));
  return v;
}

Verdict criterion8() {
  Verdict v;
  const auto r18 = build_resnet18_cifar(10);
  const auto spec = build_tiny_net({8, 16}, {1, 1}, 8, 4);
  std::mt19937_64 rng(8);
  int trials = 0;
  for (const auto* s : {&r18, &spec}) {
    const auto base = build_profile(*s, init_params(*s, 3), kDefaultPruningDensity);
    const auto total = base.total_positions();
    for (int i = 0; i < 100; ++i, ++trials) {
      const auto budget = 1 + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(total));
      const auto p = allocate_budget(base, budget);
      std::int64_t sum = 0;
      for (const auto& l : p.layers) sum += l.budget;
      v.check(sum == budget, "allocation sums to " + std::to_string(sum) + " not " + std::to_string(budget));
      if (i % 10 == 0) {
        for (const auto& sc : init_scores(*s, p, rng())) {
          const auto& l = p.layer(sc.layer_id);
          v.check(project_topk(sc, l.budget).popcount() == l.budget, "projected popcount of " + l.layer_id);
        }
      }
    }
  }

  // stage 2 emits masks at their budgets; stage 3 keeps them bit-identical
  const auto data = fixture::blobs(4, 1.5, 8, 120, 40);
  const auto init = init_params(spec, 4);
  const auto profile = allocate_budget(build_profile(spec, init, kDefaultPruningDensity),
                                       count_relu_positions(spec, true) / 2);
  const auto s2 = stage2_train(spec, init, profile, data, fixture::train_config(2, 0.01, 5));
  for (const auto& l : profile.layers)
    v.check(s2.masks.at(l.layer_id).popcount() == l.budget, "stage-2 popcount of " + l.layer_id);
  const Model teacher{spec, init, full_mask_set(spec)};
  const Model pr{spec, s2.params, s2.masks};
  FusionPlan plan;
  plan.fuse_blocks = {"g1.b0"};
  const auto r = finetune_stage3(pr, teacher, plan, data, fixture::train_config(3, 0.01, 6), {},
                                 {ScheduleKind::Linear, 1});
  for (const auto& [id, m] : r.model.masks) {
    v.check(m == s2.masks.at(id), "mask " + id + " changed in stage 3");
    v.check(m.frozen(), "mask " + id + " not frozen");
  }
  v.check(r.model.masks.size() + 1 == s2.masks.size(), "fused block mask not removed");
  v.note(std::to_string(trials) + " random budgets exact; stage-2 masks at budget; stage-3 masks bit-identical");
  return v;
}

// ---- end-to-end runs on the default experiment ----

json read_json_file(const fs::path& p) {
  const auto b = read_file(p);
  return json::parse(b.begin(), b.end());
}

int cli(const std::vector<std::string>& args) {
  std::vector<std::string> a{"shallowpi"};
  a.insert(a.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : a) argv.push_back(s.data());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

fs::path default_config_path() {
  return fs::path(SHALLOWPI_SOURCE_DIR) / "tools" / "configs" / "default.json";
}

struct SeedRun {
  double stage2_acc = 0.0;
  double nogb_acc = 0.0;
  double gb_acc = 0.0;
  double abrupt_acc = 0.0;
  double ac_acc = 0.0;
  std::int64_t ac_macs = 0;
  std::int64_t main_macs = 0;
  double seconds = 0.0;  // CLI pipeline only
};

/// The CLI pipeline for one seed, plus a fine-tune with the gate switched
/// on at epoch 0 from the same stage-2 checkpoint.
SeedRun run_seed(const fs::path& root, std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  SeedRun r;
  const auto out = root / ("seed" + std::to_string(seed));
  const auto cfg = default_config_path().string();
  const auto start = clock::now();
  for (const char* cmd : {"baseline", "sensitivity", "stage2", "finetune"}) {
    if (cli({cmd, "--config", cfg, "--seed", std::to_string(seed), "--out", out.string()}) != 0)
      throw std::runtime_error(std::string("shallowpi ") + cmd + " failed");
  }
  r.seconds = std::chrono::duration<double>(clock::now() - start).count();

  const cli::Layout layout{out};
  r.stage2_acc = read_manifest(layout.stage2() / "weights").at("test_acc").get<double>();
  const auto summary = read_json_file(layout.finetune() / "summary.json");
  r.nogb_acc = summary.at("nogb_test_acc").get<double>();
  r.gb_acc = summary.at("gb_test_acc").get<double>();
  r.ac_acc = summary.at("ac_test_acc").get<double>();
  const auto ac_spec = spec_from_json(read_json_file(layout.finetune() / "ac_spec.json"));
  r.ac_macs = count_macs(ac_spec, Head::Aux);
  r.main_macs = count_macs(ac_spec, Head::Main);

  auto config = cli::load_config(default_config_path());
  cli::apply_seed(config, seed);
  const auto data = cli::load_data(config);
  const auto base_spec = spec_from_json(read_json_file(layout.baseline() / "spec.json"));
  const Model teacher{base_spec, read_weights(layout.baseline() / "weights"), full_mask_set(base_spec)};
  const Model pr{base_spec, read_weights(layout.stage2() / "weights"),
                 decode_masks(read_file(layout.stage2() / "masks.bin"))};
  FusionPlan plan;
  plan.d_th = config.d_th;
  plan.fuse_blocks = summary.at("fuse_blocks").get<std::vector<std::string>>();
  FinetuneOptions options;
  options.init_seed = derive_seed(config.seed, "shallow");
  options.shallow_init = config.shallow_init;
  GatingSchedule abrupt = config.schedule;
  abrupt.ramp_end_epoch = 0;
  r.abrupt_acc = finetune_stage3(pr, teacher, plan, data, config.finetune_train, config.loss, abrupt,
                                 options)
                     .test_acc_main;
  return r;
}

double mean_of(const std::vector<SeedRun>& runs, double SeedRun::*field) {
  double s = 0.0;
  for (const auto& r : runs) s += r.*field;
  return s / static_cast<double>(runs.size());
}

std::string list_of(const std::vector<SeedRun>& runs, double SeedRun::*field) {
  std::string s;
  for (const auto& r : runs) s += (s.empty() ? "" : "/") + fmt(r.*field, 3);
  return s;
}

Verdict criterion9(const fs::path& root, int seeds) {
  using clock = std::chrono::steady_clock;
  Verdict v;
  const auto start = clock::now();
  std::vector<SeedRun> runs;
  for (int s = 0; s < seeds; ++s) runs.push_back(run_seed(root, static_cast<std::uint64_t>(s)));
  const double total = std::chrono::duration<double>(clock::now() - start).count();

  const auto config = cli::load_config(default_config_path());
  const double chance = 1.0 / config.dataset.blobs.classes;
  const double s2 = mean_of(runs, &SeedRun::stage2_acc);
  const double nogb = mean_of(runs, &SeedRun::nogb_acc);
  const double gb = mean_of(runs, &SeedRun::gb_acc);
  const double abrupt = mean_of(runs, &SeedRun::abrupt_acc);
  const double ac = mean_of(runs, &SeedRun::ac_acc);
  for (const auto& r : runs) {
    v.check(r.stage2_acc >= chance + 0.25, "(a) stage-2 accuracy " + fmt(r.stage2_acc));
    v.check(r.ac_acc >= chance + 0.20, "(d) AC accuracy " + fmt(r.ac_acc));
    v.check(r.ac_macs < r.main_macs, "(d) AC MACs not below main");
  }
  v.check(std::abs(gb - nogb) <= 0.05, "(b) GB mean " + fmt(gb) + " vs ungated " + fmt(nogb));
  v.check(gb >= abrupt, "(c) gradual mean " + fmt(gb) + " below abrupt " + fmt(abrupt));
  v.check(total <= 1800.0, "runtime " + fmt(total) + " s");
  double slowest = 0.0;
  for (const auto& r : runs) slowest = std::max(slowest, r.seconds);
  v.check(slowest <= 600.0, "single pipeline took " + fmt(slowest) + " s");
  v.note("(a) stage-2 " + list_of(runs, &SeedRun::stage2_acc) + " mean " + fmt(s2, 3));
  v.note("(b) GB " + list_of(runs, &SeedRun::gb_acc) + " mean " + fmt(gb, 3) + " vs ungated " +
         list_of(runs, &SeedRun::nogb_acc) + " mean " + fmt(nogb, 3));
  v.note("(c) abrupt " + list_of(runs, &SeedRun::abrupt_acc) + " mean " + fmt(abrupt, 3));
  v.note("(d) AC " + list_of(runs, &SeedRun::ac_acc) + " mean " + fmt(ac, 3) + ", MACs " +
         std::to_string(runs.front().ac_macs) + " < " + std::to_string(runs.front().main_macs));
  v.note("chance " + fmt(chance, 3) + ", slowest pipeline " + fmt(slowest, 3) + " s, total " +
         fmt(total, 4) + " s");
  return v;
}

Verdict criterion10(const fs::path& root) {
  Verdict v;
  const auto out = root / "sensitivity";
  const auto cfg = default_config_path().string();
  if (!fs::exists(out / "baseline" / "weights.json") &&
      cli({"baseline", "--config", cfg, "--seed", "0", "--out", out.string()}) != 0) {
    v.check(false, "baseline training failed");
    return v;
  }
  const auto config = cli::load_config(default_config_path());
  const auto spec = spec_from_json(read_json_file(out / "baseline" / "spec.json"));
  const auto params = read_weights(out / "baseline" / "weights");
  const auto profile = build_profile(spec, params, config.pruning_density);
  const double r18_total = static_cast<double>(count_relu_positions(build_resnet18_cifar(100), true));
  const double tiny_total = static_cast<double>(profile.total_positions());
  const std::size_t n = profile.layers.size();
  const std::size_t half = n / 2;
  for (double k : {25000.0, 49500.0, 100000.0}) {
    const auto budget = static_cast<std::int64_t>(std::llround(k / r18_total * tiny_total));
    const auto p = allocate_budget(profile, budget);
    double early = 0.0, late = 0.0;
    for (std::size_t i = 0; i < half; ++i) early += p.layers[i].realized() / static_cast<double>(half);
    for (std::size_t i = n - half; i < n; ++i) late += p.layers[i].realized() / static_cast<double>(half);
    v.check(early <= late, "budget " + std::to_string(budget) + ": early " + fmt(early) + " > late " + fmt(late));
    v.note("budget " + std::to_string(budget) + " early " + fmt(early, 3) + " late " + fmt(late, 3));
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  int seeds = 5;
  std::string work;
  app.add_option("--only", only, "Criteria to run (default all)")->delimiter(',');
  app.add_option("--seeds", seeds, "Seeds for the end-to-end check")->check(CLI::PositiveNumber);
  app.add_option("--work", work, "Keep run artifacts under this directory");
  CLI11_PARSE(app, argc, argv);

  std::optional<fixture::TempDir> tmp;
  fs::path root;
  if (work.empty()) {
    tmp.emplace("acceptance");
    root = tmp->path();
  } else {
    root = work;
    fs::create_directories(root);
  }

  const std::vector<std::pair<int, std::function<Verdict()>>> criteria{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
      {5, criterion5}, {6, criterion6}, {7, criterion7}, {8, criterion8},
      {9, [&] { return criterion9(root, seeds); }},
      {10, [&] { return criterion10(root); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && selected.count(id) == 0) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v.check(false, std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += v.pass() ? 0 : 1;
    std::cout << "criterion " << id << ": " << (v.pass() ? "PASS" : "FAIL") << " (" << fmt(secs, 3)
              << " s) " << v.detail() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
