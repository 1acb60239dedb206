// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/commands.hpp"

#include <CLI11.hpp>

#include "shallowpi/costmodel.hpp"
#include "shallowpi/error.hpp"
#include "shallowpi/io.hpp"
#include "shallowpi/masklearn.hpp"
#include "shallowpi/sensitivity.hpp"

namespace shallowpi::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Baseline {
  NetworkSpec spec;
  ParamStore params;
  double test_acc = 0.0;
};

struct Stage2 {
  MaskSet masks;
  ParamStore params;
  SensitivityProfile profile;
};

json read_json(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, "'" + path.string() + "': " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

Baseline load_baseline(const ExperimentConfig& config, std::ostream& log) {
  const Layout layout{config.output_dir};
  if (!fs::exists(layout.baseline() / "weights.json")) cmd_baseline(config, log);
  Baseline b;
  b.spec = spec_from_json(read_json(layout.baseline() / "spec.json"));
  b.params = read_weights(layout.baseline() / "weights");
  b.test_acc = read_manifest(layout.baseline() / "weights").at("test_acc").get<double>();
  return b;
}

SensitivityProfile load_profile(const ExperimentConfig& config, const NetworkSpec& spec,
                                std::ostream& log) {
  const Layout layout{config.output_dir};
  const auto path = layout.sensitivity() / "profile.csv";
  if (!fs::exists(path)) cmd_sensitivity(config, log);
  const auto bytes = read_file(path);
  return profile_from_csv(std::string(bytes.begin(), bytes.end()), &spec);
}

Stage2 load_stage2(const ExperimentConfig& config, const NetworkSpec& spec, std::ostream& log) {
  const Layout layout{config.output_dir};
  const auto masks = layout.stage2() / "masks.bin";
  const auto weights = layout.stage2() / "weights";
  require(fs::exists(masks) && fs::exists(weights.string() + ".json"), ErrorKind::InvalidState,
          "no stage-2 checkpoint under '" + layout.stage2().string() +
              "'; run `shallowpi stage2 --config <file>` with the same output directory first");
  Stage2 s;
  s.masks = decode_masks(read_file(masks));
  s.params = read_weights(weights);
  s.profile = load_profile(config, spec, log);
  for (const auto& site : relu_sites(spec)) {
    require(s.masks.count(site.id) != 0, ErrorKind::Format,
            "stage-2 checkpoint has no mask for '" + site.id + "'; it belongs to another network");
  }
  return s;
}

FusionPlan fusion_plan(const ExperimentConfig& config, const SensitivityProfile& profile) {
  FusionPlan plan = make_fusion_plan(profile, config.d_th);
  if (config.fuse_blocks) plan.fuse_blocks = *config.fuse_blocks;
  return plan;
}

ResultRow result_row(std::string label, bool gated, bool ac, const CostReport& r, double acc) {
  ResultRow row;
  row.label = std::move(label);
  row.gated_branching = gated;
  row.ac_output = ac;
  row.relus_kept = r.relus_kept;
  row.accuracy = acc;
  row.depth = r.depth;
  row.mac_saving = r.mac_saving.value();
  row.relu_ops_reduction = r.relu_ops_reduction.value();
  return row;
}

}  // namespace

void cmd_baseline(const ExperimentConfig& config, std::ostream& log) {
  const Layout layout{config.output_dir};
  const DataSplits data = load_data(config);
  const NetworkSpec spec = build_model(config, data.num_classes, data.train.size);
  TrainResult r = train_baseline(spec, init_params(spec, derive_seed(config.seed, "init")), data,
                                 config.baseline_train);
  const double test_acc = evaluate(spec, r.params, full_masks(spec), data.test, Head::Main);
  write_json(layout.baseline() / "spec.json", spec_to_json(spec));
  const auto digest = write_weights(layout.baseline() / "weights", r.params,
                                    {{"stage", "baseline"},
                                     {"best_epoch", r.best_epoch},
                                     {"best_val_acc", r.best_val_acc},
                                     {"test_acc", test_acc}});
  write_text(layout.baseline() / "history.csv", history_to_csv(r.history));
  log << "baseline: best epoch " << r.best_epoch << ", val " << r.best_val_acc << ", test "
      << test_acc << ", weights " << digest << "\n";
}

void cmd_sensitivity(const ExperimentConfig& config, std::ostream& log) {
  const Layout layout{config.output_dir};
  const Baseline b = load_baseline(config, log);
  const auto budget = global_budget(config, b.spec);
  const SensitivityProfile profile =
      allocate_budget(build_profile(b.spec, b.params, config.pruning_density), budget);
  write_text(layout.sensitivity() / "profile.csv", profile_to_csv(profile));
  log << "sensitivity: " << profile.layers.size() << " layers, budget " << budget << " of "
      << profile.total_positions() << "\n";
}

void cmd_stage2(const ExperimentConfig& config, std::ostream& log) {
  const Layout layout{config.output_dir};
  const Baseline b = load_baseline(config, log);
  const SensitivityProfile profile = load_profile(config, b.spec, log);
  const DataSplits data = load_data(config);
  Stage2Options options;
  options.score_lr = config.score_lr;
  options.score_seed = derive_seed(config.seed, "scores");
  Stage2Result r = stage2_train(b.spec, b.params, profile, data, config.stage2_train, options);
  const double test_acc =
      evaluate(b.spec, r.params, to_tensors(r.masks), data.test, Head::Main);
  const auto mask_bytes = encode_masks(r.masks);
  write_file(layout.stage2() / "masks.bin", mask_bytes);
  const auto digest = write_weights(layout.stage2() / "weights", r.params,
                                    {{"stage", "stage2"},
                                     {"best_epoch", r.best_epoch},
                                     {"best_val_acc", r.best_val_acc},
                                     {"test_acc", test_acc},
                                     {"relus_kept", count_relus_kept(r.masks)},
                                     {"masks_sha256", sha256_hex(mask_bytes)}});
  write_text(layout.stage2() / "history.csv", history_to_csv(r.history));
  log << "stage2: best epoch " << r.best_epoch << ", val " << r.best_val_acc << ", test "
      << test_acc << ", weights " << digest << "\n";
}

void cmd_finetune(const ExperimentConfig& config, std::ostream& log) {
  const Layout layout{config.output_dir};
  const Baseline b = load_baseline(config, log);
  Stage2 s = load_stage2(config, b.spec, log);
  const DataSplits data = load_data(config);
  const FusionPlan plan = fusion_plan(config, s.profile);

  const Model teacher{b.spec, b.params, full_mask_set(b.spec)};
  const Model pr{b.spec, s.params, s.masks};
  FinetuneOptions options;
  options.init_seed = derive_seed(config.seed, "shallow");
  options.shallow_init = config.shallow_init;

  FinetuneResult nogb = finetune_stage3(pr, teacher, FusionPlan{config.d_th, {}, true}, data,
                                        config.finetune_train, config.loss, config.schedule,
                                        options);
  FinetuneResult gb = finetune_stage3(pr, teacher, plan, data, config.finetune_train, config.loss,
                                      config.schedule, options);
  std::optional<FinetuneResult> akd;
  if (b.spec.aux && config.loss.kd_target != KdTarget::AuxClassifier) {
    LossConfig loss = config.loss;
    loss.kd_target = KdTarget::AuxClassifier;
    akd = finetune_stage3(pr, teacher, plan, data, config.finetune_train, loss, config.schedule,
                          options);
  }
  const FinetuneResult& ac_run = akd ? *akd : gb;

  const auto cost_nogb = report(b.spec, nogb.model.spec, nogb.model.masks, Head::Main, config.latency);
  const auto cost_gb = report(b.spec, gb.model.spec, gb.model.masks, Head::Main, config.latency);
  std::vector<ResultRow> table1{result_row("w/o GB", false, false, cost_nogb, nogb.test_acc_main),
                                result_row("w/ GB", true, false, cost_gb, gb.test_acc_main)};
  std::vector<ResultRow> table2;
  std::vector<CostReport> reports{cost_nogb, cost_gb};
  std::vector<std::string> labels{"w/o GB", "w/ GB"};
  if (b.spec.aux) {
    const auto main = report(b.spec, ac_run.model.spec, ac_run.model.masks, Head::Main, config.latency);
    const auto aux = report(b.spec, ac_run.model.spec, ac_run.model.masks, Head::Aux, config.latency);
    table2.push_back(result_row("final classifier", true, false, main, ac_run.test_acc_main));
    table2.push_back(result_row("AC output", true, true, aux, ac_run.test_acc_aux.value_or(0.0)));
    reports.push_back(aux);
    labels.emplace_back("AC output");
  }

  const auto out = layout.finetune();
  write_json(out / "spec.json", spec_to_json(gb.model.spec));
  write_file(out / "masks.bin", encode_masks(gb.model.masks));
  write_weights(out / "weights", gb.model.params, {{"stage", "finetune"}});
  write_text(out / "history_nogb.csv", history_to_csv(nogb.history));
  write_text(out / "history_gb.csv", history_to_csv(gb.history));
  if (akd) {
    write_json(out / "ac_spec.json", spec_to_json(akd->model.spec));
    write_file(out / "ac_masks.bin", encode_masks(akd->model.masks));
    write_text(out / "history_akd.csv", history_to_csv(akd->history));
  }
  write_text(out / "table1.csv", results_to_csv(table1));
  write_text(out / "table2.csv", results_to_csv(table2));
  write_text(out / "cost_report.csv", cost_report_to_csv(reports, labels));
  json warnings = json::array();
  for (const auto* r : {&nogb, &gb}) {
    for (const auto& w : r->warnings) warnings.push_back(w);
  }
  json summary = {{"fuse_blocks", plan.fuse_blocks},
                  {"baseline_test_acc", b.test_acc},
                  {"nogb_test_acc", nogb.test_acc_main},
                  {"gb_test_acc", gb.test_acc_main},
                  {"finalized_epoch", gb.finalized_epoch},
                  {"ac_test_acc", ac_run.test_acc_aux ? json(*ac_run.test_acc_aux) : json(nullptr)},
                  {"ac_main_test_acc", ac_run.test_acc_main},
                  {"warnings", std::move(warnings)}};
  write_json(out / "summary.json", summary);
  for (const auto& w : summary["warnings"]) log << "warning: " << w.get<std::string>() << "\n";
  log << "finetune: fused " << plan.fuse_blocks.size() << " blocks, test w/o GB "
      << nogb.test_acc_main << ", w/ GB " << gb.test_acc_main << ", depth " << cost_gb.depth
      << "\n";
}

void cmd_cost(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log) {
  const Layout layout{config.output_dir};
  require(fs::exists(layout.baseline() / "spec.json"), ErrorKind::InvalidState,
          "no baseline under '" + layout.baseline().string() +
              "'; run `shallowpi baseline --config <file>` with the same output directory first");
  const NetworkSpec baseline = spec_from_json(read_json(layout.baseline() / "spec.json"));
  const double baseline_acc =
      read_manifest(layout.baseline() / "weights").at("test_acc").get<double>();

  std::vector<CostReport> reports;
  std::vector<std::string> labels;
  std::vector<Fig1Entry> fig1;
  reports.push_back(report(baseline, baseline, full_mask_set(baseline), Head::Main, config.latency));
  labels.emplace_back("baseline");
  fig1.push_back({"baseline", baseline_acc, reports.back().relus_kept, reports.back().macs});

  const auto summary_path = layout.finetune() / "summary.json";
  if (fs::exists(summary_path)) {
    const json summary = read_json(summary_path);
    const NetworkSpec reduced = spec_from_json(read_json(layout.finetune() / "spec.json"));
    const MaskSet masks = decode_masks(read_file(layout.finetune() / "masks.bin"));
    reports.push_back(report(baseline, reduced, masks, Head::Main, config.latency));
    labels.emplace_back("ours");
    fig1.push_back({"ours", summary.at("gb_test_acc").get<double>(), reports.back().relus_kept,
                    reports.back().macs});
    if (baseline.aux && !summary.at("ac_test_acc").is_null()) {
      const bool separate = fs::exists(layout.finetune() / "ac_spec.json");
      const NetworkSpec ac_spec =
          separate ? spec_from_json(read_json(layout.finetune() / "ac_spec.json")) : reduced;
      const MaskSet ac_masks =
          separate ? decode_masks(read_file(layout.finetune() / "ac_masks.bin")) : masks;
      reports.push_back(report(baseline, ac_spec, ac_masks, Head::Aux, config.latency));
      labels.emplace_back("ours-AC");
      fig1.push_back({"ours-AC", summary.at("ac_test_acc").get<double>(),
                      reports.back().relus_kept, reports.back().macs});
    }
  } else {
    const auto masks_path = layout.stage2() / "masks.bin";
    require(fs::exists(masks_path), ErrorKind::InvalidState,
            "no stage-2 or finetune checkpoint under '" + layout.root.string() +
                "'; run `shallowpi stage2 --config <file>` first");
    const MaskSet masks = decode_masks(read_file(masks_path));
    reports.push_back(report(baseline, baseline, masks, Head::Main, config.latency));
    labels.emplace_back("stage2");
    fig1.push_back({"stage2",
                    read_manifest(layout.stage2() / "weights").at("test_acc").get<double>(),
                    reports.back().relus_kept, reports.back().macs});
  }

  json all = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    json j = cost_report_to_json(reports[i]);
    j["label"] = labels[i];
    all.push_back(std::move(j));
  }
  write_json(layout.cost() / "cost_report.json", all);
  write_text(layout.cost() / "cost_report.csv", cost_report_to_csv(reports, labels));
  if (options.fig1) write_text(layout.cost() / "fig1.csv", fig1_to_csv(normalize_fig1(fig1)));
  const auto& last = reports.back();
  log << "cost: " << labels.back() << " keeps " << last.relus_kept << " ReLUs ("
      << last.relu_ops_reduction.value() << "x), depth " << last.depth << ", MAC saving "
      << last.mac_saving.value() << "x\n";
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  auto emit_error = [&](const std::string& kind, const std::string& message) {
    err << json{{"error", kind}, {"message", message}}.dump() << "\n";
  };
  CLI::App app{"Joint ReLU and depth reduction for private inference"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  CommandOptions options;
  app.add_option("--config", config_path, "Experiment config (JSON)")->required();
  app.add_option("--seed", seed, "Overrides the config seed");
  app.add_option("--out", out_dir, "Overrides the config output directory");
  app.fallthrough();
  auto* baseline = app.add_subcommand("baseline", "Train the all-ReLU teacher");
  auto* sensitivity = app.add_subcommand("sensitivity", "Per-layer ReLU sensitivity and budgets");
  auto* stage2 = app.add_subcommand("stage2", "Learn budgeted ReLU masks");
  auto* finetune = app.add_subcommand("finetune", "Gated-branching fine-tuning with distillation");
  auto* cost = app.add_subcommand("cost", "ReLU, MAC and depth cost report");
  cost->add_flag("--fig1", options.fig1, "Also write the normalized three-metric CSV");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    emit_error("Usage", e.what());
    return 2;
  }
  try {
    ExperimentConfig config = load_config(config_path);
    if (seed) apply_seed(config, *seed);
    if (!out_dir.empty()) config.output_dir = out_dir;
    if (baseline->parsed()) cmd_baseline(config, out);
    if (sensitivity->parsed()) cmd_sensitivity(config, out);
    if (stage2->parsed()) cmd_stage2(config, out);
    if (finetune->parsed()) cmd_finetune(config, out);
    if (cost->parsed()) cmd_cost(config, options, out);
  } catch (const Error& e) {
    emit_error(std::string(to_string(e.kind())), e.what());
    return 1;
  } catch (const std::exception& e) {
    emit_error("Internal", e.what());
    return 1;
  }
  return 0;
}

}  // namespace shallowpi::cli
