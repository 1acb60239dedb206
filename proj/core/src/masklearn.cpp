// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/masklearn.hpp"

#include <algorithm>
#include <numeric>
#include <utility>

#include "shallowpi/error.hpp"
#include "shallowpi/ops.hpp"
#include "shallowpi/rng.hpp"

namespace shallowpi {

std::vector<MaskScores> init_scores(const NetworkSpec& spec, const SensitivityProfile& profile,
                                    std::uint64_t seed) {
  std::map<std::string, ReluSite> sites;
  for (const auto& s : relu_sites(spec)) sites.emplace(s.id, s);
  std::vector<MaskScores> out;
  for (const auto& layer : profile.layers) {
    auto it = sites.find(layer.layer_id);
    require(it != sites.end(), ErrorKind::InvalidArgument,
            "init_scores: profile layer '" + layer.layer_id + "' is not a ReLU site of '" +
                spec.name + "'");
    const auto& site = it->second;
    Rng rng(derive_seed(seed, site.id));
    const auto c = static_cast<std::size_t>(site.channels);
    const auto s = static_cast<std::size_t>(site.size);
    std::vector<double> v(c * s * s);
    for (auto& x : v) x = uniform01(rng);
    out.push_back({site.id, Tensor({c, s, s}, std::move(v))});
  }
  return out;
}

namespace {

std::vector<std::uint8_t> topk_bits(std::span<const double> scores, std::int64_t budget) {
  const auto n = static_cast<std::int64_t>(scores.size());
  require(budget >= 0 && budget <= n, ErrorKind::OutOfRange,
          "project_topk: budget " + std::to_string(budget) + " outside [0," + std::to_string(n) +
              "]");
  std::vector<std::uint8_t> bits(scores.size(), 0);
  if (budget == 0) return bits;
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto before = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + (budget - 1), idx.end(), before);
  for (std::int64_t i = 0; i < budget; ++i) bits[idx[static_cast<std::size_t>(i)]] = 1;
  return bits;
}

}  // namespace

ReluMask project_topk(const MaskScores& scores, std::int64_t budget) {
  const Tensor& s = scores.scores;
  require(s.defined() && s.rank() == 3, ErrorKind::ShapeMismatch,
          "project_topk: scores for '" + scores.layer_id + "' must be [C,H,W]");
  return ReluMask(scores.layer_id, static_cast<int>(s.dim(0)), static_cast<int>(s.dim(1)),
                  static_cast<int>(s.dim(2)), topk_bits(s.data(), budget));
}

Tensor ste_topk(const Tensor& scores, std::int64_t budget) {
  const auto bits = topk_bits(scores.data(), budget);
  std::vector<double> v(bits.begin(), bits.end());
  Tape* tape = active_tape();
  const bool track = tape != nullptr && scores.requires_grad();
  Tensor out(scores.shape(), std::move(v), track);
  if (track) {
    tape->record("ste_topk", [scores = scores, out = out]() mutable {
      if (!out.has_grad()) return;
      auto g = std::as_const(out).grad();
      auto gs = scores.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
    });
  }
  return out;
}

Stage2Result stage2_train(const NetworkSpec& spec, const ParamStore& init,
                          const SensitivityProfile& profile, const DataSplits& data,
                          const TrainConfig& config, const Stage2Options& options) {
  config.validate();
  validate(spec);
  const double score_lr = options.score_lr.value_or(config.lr);
  require(score_lr > 0.0, ErrorKind::InvalidArgument, "stage2: score_lr must be positive");

  Stage2Result result;
  ParamStore params = init.clone();
  params.set_requires_grad(true);
  auto scores = init_scores(spec, profile, options.score_seed);
  std::vector<std::int64_t> budgets;
  std::vector<Tensor> score_tensors;
  for (auto& s : scores) {
    budgets.push_back(profile.layer(s.layer_id).budget);
    s.scores.set_requires_grad(true);
    score_tensors.push_back(s.scores);
  }
  std::vector<Tensor> weights;
  const std::string aux_prefix = spec.aux ? spec.aux->head.name + "." : std::string("\x01");
  for (const auto& [name, t] : params.tensors) {
    if (params.trainable.at(name) && name.rfind(aux_prefix, 0) != 0) weights.push_back(t);
  }
  Sgd opt(std::move(weights), config.sgd);
  Sgd score_opt(score_tensors, SgdOptions{0.0, 0.0});

  auto current_masks = [&] {
    MaskSet m;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      m.emplace(scores[i].layer_id, project_topk(scores[i], budgets[i]));
    }
    return m;
  };

  ForwardOptions fwd;
  fwd.training = true;
  fwd.want_aux = false;
  result.best_val_acc = -1.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config, epoch);
    const double slr = score_lr * lr / config.lr;
    double loss_sum = 0.0;
    std::size_t seen = 0;
    const auto batches = epoch_batches(data.train.count(), config.batch_size, config.seed, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& idx = batches[b];
      Tensor x = data.train.batch(idx);
      if (config.augment) {
        Rng rng(derive_seed(derive_seed(config.seed, "augment"),
                            static_cast<std::uint64_t>(epoch) * 1000003ULL + b));
        augment_batch(x, rng);
      }
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        MaskTensors masks;
        for (std::size_t i = 0; i < scores.size(); ++i) {
          masks.emplace(scores[i].layer_id, ste_topk(scores[i].scores, budgets[i]));
        }
        const auto out = forward(spec, params, x, masks, fwd);
        loss = cross_entropy(out.logits_main, data.train.batch_labels(idx));
      }
      tape.backward(loss);
      opt.step(lr);
      score_opt.step(slr);
      opt.zero_grad();
      score_opt.zero_grad();
      loss_sum += loss.item() * static_cast<double>(idx.size());
      seen += idx.size();
    }
    MaskSet masks = current_masks();
    HistoryRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.loss_total = loss_sum / static_cast<double>(seen);
    row.loss_ce = row.loss_total;
    row.acc_main = evaluate(spec, params, to_tensors(masks), data.val, Head::Main);
    result.history.push_back(row);
    if (row.acc_main > result.best_val_acc) {
      result.best_val_acc = row.acc_main;
      result.best_epoch = epoch;
      result.params = params.clone();
      result.masks = std::move(masks);
    }
  }
  freeze_all(result.masks);
  result.params.set_requires_grad(false);
  for (auto& s : scores) s.scores.set_requires_grad(false);
  result.scores = std::move(scores);
  return result;
}

}  // namespace shallowpi
