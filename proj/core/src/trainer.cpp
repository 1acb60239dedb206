// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "shallowpi/error.hpp"
#include "shallowpi/ops.hpp"

namespace shallowpi {

double gamma_at(const GatingSchedule& schedule, int epoch) {
  require(epoch >= 0, ErrorKind::OutOfRange, "gamma_at: epoch must be non-negative");
  require(schedule.ramp_end_epoch >= 0, ErrorKind::InvalidArgument,
          "gamma_at: ramp end must be non-negative");
  if (schedule.ramp_end_epoch == 0 || epoch >= schedule.ramp_end_epoch) return 1.0;
  const double t = static_cast<double>(epoch) / static_cast<double>(schedule.ramp_end_epoch);
  switch (schedule.kind) {
    case ScheduleKind::Linear: return t;
    case ScheduleKind::Cosine: return 0.5 * (1.0 - std::cos(std::numbers::pi * t));
  }
  return 1.0;
}

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorKind::InvalidArgument, "train config: epochs must be >= 1");
  require(lr > 0.0 && std::isfinite(lr), ErrorKind::InvalidArgument,
          "train config: lr must be positive");
  require(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0, ErrorKind::InvalidArgument,
          "train config: lr_decay_factor must lie in (0,1]");
  require(batch_size >= 1, ErrorKind::InvalidArgument, "train config: batch_size must be >= 1");
  require(sgd.weight_decay >= 0.0, ErrorKind::InvalidArgument,
          "train config: weight_decay must be >= 0");
  require(sgd.momentum >= 0.0 && sgd.momentum < 1.0, ErrorKind::InvalidArgument,
          "train config: momentum must lie in [0,1)");
  for (std::size_t i = 0; i < lr_decay_epochs.size(); ++i) {
    require(lr_decay_epochs[i] > 0 && lr_decay_epochs[i] < epochs, ErrorKind::InvalidArgument,
            "train config: decay epochs must lie in (0, epochs)");
    require(i == 0 || lr_decay_epochs[i] > lr_decay_epochs[i - 1], ErrorKind::InvalidArgument,
            "train config: decay epochs must be strictly increasing");
  }
}

double lr_at(const TrainConfig& config, int epoch) {
  require(epoch >= 0 && epoch < config.epochs, ErrorKind::OutOfRange,
          "lr_at: epoch " + std::to_string(epoch) + " outside [0," + std::to_string(config.epochs) +
              ")");
  double lr = config.lr;
  for (int d : config.lr_decay_epochs) {
    if (d <= epoch) lr *= config.lr_decay_factor;
  }
  return lr;
}

void LossConfig::validate() const {
  require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::InvalidArgument,
          "loss config: lambda must lie in [0,1]");
  require(beta >= 0.0 && std::isfinite(beta), ErrorKind::InvalidArgument,
          "loss config: beta must be non-negative");
  require(rho > 0.0 && std::isfinite(rho), ErrorKind::InvalidArgument,
          "loss config: rho must be positive");
}

LossTerms finetune_loss(const ForwardOutput& student, const ForwardOutput& teacher,
                        std::span<const int> labels, const LossConfig& config) {
  config.validate();
  require(student.logits_main.defined() && teacher.logits_main.defined(),
          ErrorKind::InvalidArgument, "finetune_loss: main logits missing");
  require(!teacher.logits_main.requires_grad(), ErrorKind::InvalidArgument,
          "finetune_loss: teacher outputs must be detached");
  const Tensor* target = &student.logits_main;
  if (config.kd_target == KdTarget::AuxClassifier) {
    require(student.logits_ac.has_value(), ErrorKind::InvalidArgument,
            "finetune_loss: distillation into the auxiliary classifier requested, but the "
            "student has none");
    target = &*student.logits_ac;
  }

  std::vector<Tensor> terms;
  LossTerms out;
  const Tensor kl = kl_div(softmax_t(teacher.logits_main, config.rho),
                           softmax_t(*target, config.rho));
  terms.push_back(scale(kl, config.lambda));
  out.kl = terms.back().item();

  terms.push_back(scale(cross_entropy(student.logits_main, labels), 1.0 - config.lambda));
  out.ce = terms.back().item();

  if (config.aux_ce && config.kd_target == KdTarget::AuxClassifier) {
    terms.push_back(scale(cross_entropy(*student.logits_ac, labels), 1.0 - config.lambda));
    out.aux_ce = terms.back().item();
  }

  std::vector<Tensor> taps_s, taps_t;
  for (const auto& tap : student.taps) {
    if (const Tensor* t = teacher.find_tap(tap.id)) {
      require(!t->requires_grad(), ErrorKind::InvalidArgument,
              "finetune_loss: teacher taps must be detached");
      taps_s.push_back(tap.value);
      taps_t.push_back(*t);
    }
  }
  terms.push_back(pram_loss(taps_s, taps_t, config.beta));
  out.pram = terms.back().item();

  out.total = sum_scalars(terms);
  return out;
}

Model clone_model(const Model& model) {
  return {model.spec, model.params.clone(), model.masks};
}

double evaluate(const NetworkSpec& spec, ParamStore& params, const MaskTensors& masks,
                const Dataset& data, Head head, int batch_size, std::optional<double> gate) {
  if (head == Head::Aux) {
    require(spec.aux.has_value(), ErrorKind::InvalidArgument,
            "evaluate: auxiliary head requested but network '" + spec.name + "' has none");
  }
  require(data.count() > 0, ErrorKind::InvalidArgument, "evaluate: empty dataset");
  ForwardOptions opts;
  opts.training = false;
  opts.gate = gate;
  opts.want_main = head == Head::Main;
  opts.want_aux = head == Head::Aux;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.count(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(data.count(), start + static_cast<std::size_t>(batch_size));
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto out = forward(spec, params, data.batch(idx), masks, opts);
    const Tensor& logits = head == Head::Main ? out.logits_main : *out.logits_ac;
    const auto k = logits.dim(1);
    auto d = logits.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* row = d.data() + i * k;
      const auto pred = static_cast<int>(std::max_element(row, row + k) - row);
      if (pred == data.labels[idx[i]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.count());
}

double evaluate(Model& model, const Dataset& data, Head head, int batch_size) {
  return evaluate(model.spec, model.params, to_tensors(model.masks), data, head, batch_size);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, int batch_size,
                                                    std::uint64_t seed, int epoch) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(derive_seed(seed, "epoch.shuffle"), static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng() % i)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < count; s += static_cast<std::size_t>(batch_size)) {
    const auto e = std::min(count, s + static_cast<std::size_t>(batch_size));
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                         idx.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return batches;
}

namespace {

/// Trainable tensors that the loss actually reaches. The AC head is left
/// out when nothing trains it.
std::vector<Tensor> optimized_params(const NetworkSpec& spec, const ParamStore& params,
                                     bool use_aux) {
  std::vector<Tensor> out;
  const std::string aux_prefix = spec.aux ? spec.aux->head.name + "." : std::string("\x01");
  for (const auto& [name, t] : params.tensors) {
    if (!params.trainable.at(name)) continue;
    if (!use_aux && name.rfind(aux_prefix, 0) == 0) continue;
    out.push_back(t);
  }
  return out;
}

Tensor training_batch(const Dataset& data, std::span<const std::size_t> idx,
                      const TrainConfig& config, int epoch, std::size_t batch_no) {
  Tensor x = data.batch(idx);
  if (config.augment) {
    Rng rng(derive_seed(derive_seed(config.seed, "augment"),
                        static_cast<std::uint64_t>(epoch) * 1000003ULL + batch_no));
    augment_batch(x, rng);
  }
  return x;
}

}  // namespace

TrainResult train_baseline(const NetworkSpec& spec, ParamStore init, const DataSplits& data,
                           const TrainConfig& config) {
  config.validate();
  validate(spec);
  TrainResult result;
  ParamStore params = std::move(init);
  params.set_requires_grad(true);
  const MaskTensors masks = full_masks(spec);
  Sgd opt(optimized_params(spec, params, false), config.sgd);
  ForwardOptions fwd;
  fwd.training = true;
  fwd.want_aux = false;
  result.best_val_acc = -1.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config, epoch);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    const auto batches = epoch_batches(data.train.count(), config.batch_size, config.seed, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& idx = batches[b];
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        const auto out = forward(spec, params, training_batch(data.train, idx, config, epoch, b),
                                 masks, fwd);
        loss = cross_entropy(out.logits_main, data.train.batch_labels(idx));
      }
      tape.backward(loss);
      opt.step(lr);
      opt.zero_grad();
      loss_sum += loss.item() * static_cast<double>(idx.size());
      seen += idx.size();
    }
    HistoryRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.loss_total = loss_sum / static_cast<double>(seen);
    row.loss_ce = row.loss_total;
    row.acc_main = evaluate(spec, params, masks, data.val, Head::Main);
    result.history.push_back(row);
    if (row.acc_main > result.best_val_acc) {
      result.best_val_acc = row.acc_main;
      result.best_epoch = epoch;
      result.params = params.clone();
    }
  }
  result.params.set_requires_grad(false);
  return result;
}

FinetuneResult finetune_stage3(const Model& pr, const Model& teacher, const FusionPlan& plan,
                               const DataSplits& data, const TrainConfig& train,
                               const LossConfig& loss, const GatingSchedule& schedule,
                               const FinetuneOptions& options) {
  train.validate();
  loss.validate();
  FinetuneResult result;
  if (loss.kd_target == KdTarget::AuxClassifier) {
    require(pr.spec.aux.has_value(), ErrorKind::InvalidArgument,
            "finetune: distillation into the auxiliary classifier requested, but network '" +
                pr.spec.name + "' has none");
  }
  if (!plan.fuse_blocks.empty()) {
    const int first_decay = train.lr_decay_epochs.empty() ? train.epochs : train.lr_decay_epochs.front();
    if (schedule.ramp_end_epoch != first_decay) {
      result.warnings.push_back("gate ramp ends at epoch " + std::to_string(schedule.ramp_end_epoch) +
                                " but the first LR decay is at epoch " + std::to_string(first_decay));
    }
  }
  for (const auto& [id, mask] : pr.masks) {
    require(mask.frozen(), ErrorKind::InvalidState,
            "finetune: mask '" + id + "' must be frozen before fine-tuning");
  }

  Model student = clone_model(pr);
  {
    auto gated = apply_gating(student.spec, student.params, plan, options.init_seed,
                              options.shallow_init);
    student.spec = std::move(gated.spec);
    student.params = std::move(gated.params);
  }
  student.params.set_requires_grad(true);
  MaskTensors student_masks = to_tensors(student.masks);

  Model tea = clone_model(teacher);
  tea.params.set_requires_grad(false);
  const MaskTensors teacher_masks = full_masks(tea.spec);
  ForwardOptions tfwd;
  tfwd.training = false;
  tfwd.want_aux = false;

  const bool use_aux = loss.kd_target == KdTarget::AuxClassifier;
  Sgd opt(optimized_params(student.spec, student.params, use_aux), train.sgd);

  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    const double gamma = gamma_at(schedule, epoch);
    const double lr = lr_at(train, epoch);
    if (student.spec.has_gated() && gamma >= 1.0) {
      auto fused = finalize_fusion(student.spec, student.params, gamma);
      student.spec = std::move(fused.spec);
      student.params = std::move(fused.params);
      for (const auto& id : fused.removed_relus) student.masks.erase(id);
      student_masks = to_tensors(student.masks);
      opt.rebind(optimized_params(student.spec, student.params, use_aux));
      result.finalized_epoch = epoch;
    }
    ForwardOptions sfwd;
    sfwd.training = true;
    sfwd.want_aux = use_aux;
    if (student.spec.has_gated()) sfwd.gate = gamma;

    HistoryRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.gamma = gamma;
    std::size_t seen = 0;
    const auto batches = epoch_batches(data.train.count(), train.batch_size, train.seed, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& idx = batches[b];
      const Tensor x = training_batch(data.train, idx, train, epoch, b);
      const auto labels = data.train.batch_labels(idx);
      const auto t_out = forward(tea.spec, tea.params, x, teacher_masks, tfwd);
      Tape tape;
      LossTerms terms;
      {
        TapeScope scope(tape);
        const auto s_out = forward(student.spec, student.params, x, student_masks, sfwd);
        terms = finetune_loss(s_out, t_out, labels, loss);
      }
      tape.backward(terms.total);
      opt.step(lr);
      opt.zero_grad();
      const auto w = static_cast<double>(idx.size());
      row.loss_total += terms.total.item() * w;
      row.loss_kl += terms.kl * w;
      row.loss_ce += (terms.ce + terms.aux_ce) * w;
      row.loss_pram += terms.pram * w;
      seen += idx.size();
    }
    const auto n = static_cast<double>(seen);
    row.loss_total /= n;
    row.loss_kl /= n;
    row.loss_ce /= n;
    row.loss_pram /= n;
    row.acc_main = evaluate(student.spec, student.params, student_masks, data.val, Head::Main, 256,
                            sfwd.gate);
    if (student.spec.aux) {
      row.acc_aux = evaluate(student.spec, student.params, student_masks, data.val, Head::Aux, 256,
                             sfwd.gate);
    }
    result.history.push_back(row);
  }
  if (student.spec.has_gated()) {
    result.warnings.push_back("gate never reached 1; gated blocks were left unfused");
  }
  student.params.set_requires_grad(false);
  std::optional<double> gate;
  if (student.spec.has_gated()) gate = gamma_at(schedule, train.epochs - 1);
  result.test_acc_main =
      evaluate(student.spec, student.params, student_masks, data.test, Head::Main, 256, gate);
  if (student.spec.aux) {
    result.test_acc_aux =
        evaluate(student.spec, student.params, student_masks, data.test, Head::Aux, 256, gate);
  }
  result.model = std::move(student);
  return result;
}

}  // namespace shallowpi
