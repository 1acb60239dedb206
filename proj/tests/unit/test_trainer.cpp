// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "properties.hpp"
#include "shallowpi/costmodel.hpp"
#include "shallowpi/error.hpp"
#include "shallowpi/masklearn.hpp"
#include "shallowpi/ops.hpp"
#include "shallowpi/optim.hpp"
#include "shallowpi/trainer.hpp"

using namespace shallowpi;

namespace {

ForwardOutput outputs(Tensor main, std::optional<Tensor> ac = std::nullopt,
                      std::vector<Tap> taps = {}) {
  ForwardOutput o;
  o.logits_main = std::move(main);
  o.logits_ac = std::move(ac);
  o.taps = std::move(taps);
  return o;
}

NetworkSpec aux_net() {
  TinyNetOptions o;
  o.widths = {8, 16};
  o.blocks_per_group = {1, 1};
  o.input_size = 8;
  o.num_classes = 4;
  o.aux_classifier = true;
  return build_tiny_net(o);
}

/// A stage-2 style partial-ReLU model: half the positions of every layer.
Model half_relu_model(const NetworkSpec& spec, ParamStore params) {
  Model m{spec, std::move(params), {}};
  for (const auto& s : relu_sites(spec)) {
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(s.positions()));
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = i % 2 == 0;
    m.masks.emplace(s.id, ReluMask(s.id, s.channels, s.size, s.size, bits));
  }
  freeze_all(m.masks);
  return m;
}

}  // namespace

TEST_SUITE("gamma_at") {
  TEST_CASE("linear ramp examples") {
    GatingSchedule s{ScheduleKind::Linear, 90};
    CHECK(gamma_at(s, 0) == 0.0);
    CHECK(gamma_at(s, 45) == 0.5);
    CHECK(gamma_at(s, 90) == 1.0);
    CHECK(gamma_at(s, 120) == 1.0);
  }

  TEST_CASE("linear increments are 1/ramp per epoch") {
    GatingSchedule s{ScheduleKind::Linear, 90};
    for (int e = 0; e < 90; ++e)
      CHECK(gamma_at(s, e + 1) - gamma_at(s, e) == doctest::Approx(1.0 / 90.0).epsilon(1e-12));
  }

  TEST_CASE("both kinds are nondecreasing with shared endpoints") {
    for (int ramp : {1, 7, 12, 90}) {
      GatingSchedule lin{ScheduleKind::Linear, ramp};
      GatingSchedule cos{ScheduleKind::Cosine, ramp};
      CHECK(gamma_at(lin, 0) == 0.0);
      CHECK(gamma_at(cos, 0) == 0.0);
      CHECK(gamma_at(lin, ramp) == 1.0);
      CHECK(gamma_at(cos, ramp) == 1.0);
      for (int e = 0; e < ramp + 5; ++e) {
        CHECK(gamma_at(lin, e + 1) >= gamma_at(lin, e));
        CHECK(gamma_at(cos, e + 1) >= gamma_at(cos, e));
      }
    }
    CHECK(gamma_at({ScheduleKind::Cosine, 90}, 45) == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("a zero ramp is an abrupt switch") {
    CHECK(gamma_at({ScheduleKind::Linear, 0}, 0) == 1.0);
    CHECK(gamma_at({ScheduleKind::Cosine, 0}, 0) == 1.0);
  }

  TEST_CASE("negative epochs are rejected") {
    CHECK_THROWS_AS(gamma_at({}, -1), Error);
  }
}

TEST_SUITE("lr_at") {
  TEST_CASE("step schedule examples") {
    TrainConfig c;
    CHECK(lr_at(c, 0) == 0.01);
    CHECK(lr_at(c, 89) == 0.01);
    CHECK(lr_at(c, 90) == doctest::Approx(0.001).epsilon(1e-14));
    CHECK(lr_at(c, 140) == doctest::Approx(1e-4).epsilon(1e-14));
    CHECK(lr_at(c, 160) == doctest::Approx(1e-5).epsilon(1e-14));
    CHECK(lr_at(c, 170) == doctest::Approx(1e-5).epsilon(1e-14));
  }

  TEST_CASE("exactly one downward jump per decay epoch") {
    TrainConfig c;
    int jumps = 0;
    for (int e = 1; e < c.epochs; ++e) {
      const double prev = lr_at(c, e - 1), cur = lr_at(c, e);
      if (cur != prev) {
        ++jumps;
        CHECK(cur / prev == doctest::Approx(c.lr_decay_factor).epsilon(1e-14));
      }
    }
    CHECK(jumps == static_cast<int>(c.lr_decay_epochs.size()));
  }

  TEST_CASE("epochs beyond the run are rejected") {
    TrainConfig c;
    CHECK_THROWS_AS(lr_at(c, 180), Error);
  }

  TEST_CASE("config validation") {
    TrainConfig c;
    c.lr_decay_epochs = {90, 80};
    CHECK_THROWS_AS(c.validate(), Error);
    c.lr_decay_epochs = {180};
    CHECK_THROWS_AS(c.validate(), Error);
    c = TrainConfig{};
    c.lr = 0.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK_NOTHROW(TrainConfig{}.validate());
  }
}

TEST_SUITE("finetune_loss") {
  TEST_CASE("identical student and teacher leave only the CE share") {
    auto spec = aux_net();
    auto params = init_params(spec, 1);
    std::mt19937_64 rng(2);
    auto x = oracle::random_tensor({6, 3, 8, 8}, rng);
    std::vector<int> labels{0, 1, 2, 3, 0, 1};
    auto teacher = forward(spec, params, x, full_masks(spec));
    params.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    auto student = forward(spec, params, x, full_masks(spec));
    for (double beta : {0.0, 1.0, 1000.0}) {
      LossConfig cfg;
      cfg.beta = beta;
      auto t = finetune_loss(student, teacher, labels, cfg);
      const double ce = cross_entropy(student.logits_main, labels).item();
      CHECK(t.kl == 0.0);
      CHECK(t.pram == 0.0);
      CHECK(std::abs(t.total.item() - 0.1 * ce) <= 1e-12);
    }
  }

  TEST_CASE("lambda 0 and beta 0 is plain CE") {
    std::mt19937_64 rng(3);
    auto zs = oracle::random_tensor({3, 4}, rng);
    auto zt = oracle::random_tensor({3, 4}, rng);
    std::vector<int> labels{3, 0, 2};
    LossConfig cfg;
    cfg.lambda = 0.0;
    cfg.beta = 0.0;
    auto t = finetune_loss(outputs(zs), outputs(zt), labels, cfg);
    CHECK(t.total.item() == cross_entropy(zs, labels).item());
  }

  TEST_CASE("closed-form KL into the AC logits") {
    auto teacher = outputs(Tensor({1, 2}, {0.0, std::log(3.0)}));
    auto student = outputs(Tensor({1, 2}, {5.0, -1.0}), Tensor({1, 2}, {0.0, 0.0}));
    LossConfig cfg;
    cfg.lambda = 1.0;
    cfg.beta = 0.0;
    cfg.rho = 1.0;
    cfg.kd_target = KdTarget::AuxClassifier;
    std::vector<int> labels{1};
    auto t = finetune_loss(student, teacher, labels, cfg);
    const double expect = 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5);
    CHECK(std::abs(t.total.item() - expect) <= 1e-15);
    CHECK(t.ce == 0.0);
  }

  TEST_CASE("the term breakdown sums to the total") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Tap> ts{{"a", oracle::random_tensor({3, 2, 2, 2}, rng)},
                          {"b", oracle::random_tensor({3, 5}, rng)}};
      std::vector<Tap> tt{{"a", oracle::random_tensor({3, 2, 2, 2}, rng)},
                          {"c", oracle::random_tensor({3, 5}, rng)}};
      auto student = outputs(oracle::random_tensor({3, 4}, rng, -3, 3),
                             oracle::random_tensor({3, 4}, rng, -3, 3), ts);
      auto teacher = outputs(oracle::random_tensor({3, 4}, rng, -3, 3), std::nullopt, tt);
      LossConfig cfg;
      cfg.lambda = 0.3 + 0.03 * trial;
      cfg.kd_target = trial % 2 ? KdTarget::AuxClassifier : KdTarget::FinalClassifier;
      cfg.aux_ce = trial % 3 == 0;
      std::vector<int> labels{0, 3, 1};
      auto t = finetune_loss(student, teacher, labels, cfg);
      CHECK(std::abs(t.kl + t.ce + t.aux_ce + t.pram - t.total.item()) <= 1e-12);
      // only the shared tap "a" is paired
      std::vector<Tensor> a{ts[0].value};
      std::vector<Tensor> b{tt[0].value};
      CHECK(t.pram == doctest::Approx(pram_loss(a, b, cfg.beta).item()).epsilon(1e-14));
    }
  }

  TEST_CASE("an AC target without an AC is an error") {
    LossConfig cfg;
    cfg.kd_target = KdTarget::AuxClassifier;
    std::vector<int> labels{0};
    CHECK_THROWS_AS(finetune_loss(outputs(Tensor({1, 2}, {0, 0})), outputs(Tensor({1, 2}, {0, 0})),
                                  labels, cfg),
                    Error);
  }

  TEST_CASE("teacher outputs must be detached") {
    std::vector<int> labels{0};
    auto t = outputs(Tensor({1, 2}, {0, 0}, true));
    CHECK_THROWS_AS(finetune_loss(outputs(Tensor({1, 2}, {0, 0})), t, labels, LossConfig{}), Error);
  }

  TEST_CASE("loss config validation") {
    LossConfig c;
    c.lambda = 1.5;
    CHECK_THROWS_AS(c.validate(), Error);
    c = LossConfig{};
    c.rho = 0.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = LossConfig{};
    c.beta = -1.0;
    CHECK_THROWS_AS(c.validate(), Error);
  }

  TEST_CASE("gradients through a gated partial-ReLU network match finite differences") {
    CHECK(property::finetune_loss_gradcheck(5) <= 1e-5);
  }
}

TEST_SUITE("evaluate") {
  TEST_CASE("random weights sit at chance on balanced data") {
    auto spec = build_tiny_net({8, 16}, {1, 1}, 8, 10);
    BlobOptions o;
    o.classes = 10;
    o.image_size = 8;
    o.noise = 1.0;
    auto data = make_blob_dataset(o, 2000, 99);
    double mean = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
      auto params = init_params(spec, 1000 + s);
      mean += evaluate(spec, params, full_masks(spec), data, Head::Main) / 5.0;
    }
    MESSAGE("random-weight accuracy " << mean);
    CHECK(std::abs(mean - 0.1) <= 0.03);
  }

  TEST_CASE("the AC head needs an AC and is cheaper") {
    auto spec = build_tiny_net({8, 16}, {1, 1}, 8, 4);
    auto params = init_params(spec, 1);
    auto data = fixture::blobs(4, 1.0, 1).test;
    CHECK_THROWS_AS(evaluate(spec, params, full_masks(spec), data, Head::Aux), Error);
    auto with_ac = aux_net();
    auto p2 = init_params(with_ac, 1);
    CHECK_NOTHROW(evaluate(with_ac, p2, full_masks(with_ac), data, Head::Aux));
    CHECK(count_macs(with_ac, Head::Aux) < count_macs(with_ac, Head::Main));
  }

  TEST_CASE("the AC head does not need masks of the skipped group") {
    auto spec = aux_net();
    auto params = init_params(spec, 1);
    auto data = fixture::blobs(4, 1.0, 1).test;
    auto masks = full_masks(spec);
    for (const auto& s : relu_sites(spec))
      if (s.group == 1) masks.erase(s.id);
    CHECK_NOTHROW(evaluate(spec, params, masks, data, Head::Aux));
    CHECK_THROWS_AS(evaluate(spec, params, masks, data, Head::Main), Error);
  }
}

TEST_SUITE("epoch_batches") {
  TEST_CASE("a seeded permutation split into batches") {
    auto a = epoch_batches(70, 32, 5, 0);
    CHECK(a.size() == 3);
    CHECK(a[2].size() == 6);
    std::vector<std::size_t> all;
    for (const auto& b : a) all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 70; ++i) CHECK(all[i] == i);
    CHECK(epoch_batches(70, 32, 5, 0) == a);
    CHECK(epoch_batches(70, 32, 5, 1) != a);
    CHECK(epoch_batches(70, 32, 6, 0) != a);
  }
}

TEST_SUITE("train_baseline") {
  TEST_CASE("reaches 90% validation accuracy on blobs within 60 epochs") {
    auto spec = build_tiny_net({16, 32}, {2, 2}, 8, 8);
    BlobOptions o;
    o.noise = 2.0;
    o.seed = 3;
    auto data = make_blob_splits(o, 0.1);
    auto cfg = fixture::train_config(20, 0.05, 4);
    cfg.lr_decay_epochs = {10, 16};
    auto r = train_baseline(spec, init_params(spec, 5), data, cfg);
    MESSAGE("best validation accuracy " << r.best_val_acc << " at epoch " << r.best_epoch);
    CHECK(r.best_val_acc >= 0.90);
    CHECK(cfg.epochs <= 60);
    for (int e = 1; e < 5; ++e) CHECK(r.history[e].loss_total < r.history[e - 1].loss_total);
  }

  TEST_CASE("deterministic under a fixed seed") {
    auto spec = build_tiny_net({8}, {1}, 8, 4);
    auto data = fixture::blobs(4, 1.0, 7);
    auto cfg = fixture::train_config(3, 0.05, 8);
    cfg.augment = true;
    auto a = train_baseline(spec, init_params(spec, 1), data, cfg);
    auto b = train_baseline(spec, init_params(spec, 1), data, cfg);
    CHECK(a.params.equals(b.params));
    for (std::size_t e = 0; e < a.history.size(); ++e)
      CHECK(a.history[e].loss_total == b.history[e].loss_total);
  }
}

TEST_SUITE("finetune_stage3") {
  TEST_CASE("teacher untouched and masks frozen through 100+ steps") {
    auto spec = aux_net();
    auto data = fixture::blobs(4, 1.5, 11);
    Model teacher{spec, init_params(spec, 1), full_mask_set(spec)};
    const auto teacher_before = teacher.params.clone();
    auto pr = half_relu_model(spec, init_params(spec, 2));
    FusionPlan plan;
    plan.fuse_blocks = {"g0.b0"};
    auto cfg = fixture::train_config(15, 0.01, 3);
    cfg.lr_decay_epochs = {5};
    LossConfig loss;
    loss.kd_target = KdTarget::AuxClassifier;
    auto r = finetune_stage3(pr, teacher, plan, data, cfg, loss, {ScheduleKind::Linear, 5});
    const auto steps = 15 * epoch_batches(data.train.count(), 32, 3, 0).size();
    CHECK(steps >= 100);
    CHECK(teacher.params.equals(teacher_before));
    CHECK(r.finalized_epoch == 5);
    CHECK(r.warnings.empty());
    CHECK(r.model.spec.block("g0.b0").state == BlockState::Fused);
    CHECK(r.model.masks.count("g0.b0.mid_relu") == 0);
    for (const auto& [id, m] : r.model.masks) {
      CHECK(m == pr.masks.at(id));
      CHECK(m.frozen());
    }
    CHECK(r.history.size() == 15);
    CHECK(r.history[0].gamma == 0.0);
    CHECK(r.history[5].gamma == 1.0);
    CHECK(r.test_acc_aux.has_value());
  }

  TEST_CASE("an empty plan with lambda 0 and beta 0 is plain fine-tuning") {
    auto spec = build_tiny_net({8, 16}, {1, 1}, 8, 4);
    auto data = fixture::blobs(4, 1.5, 12);
    Model teacher{spec, init_params(spec, 1), full_mask_set(spec)};
    auto pr = half_relu_model(spec, init_params(spec, 2));
    auto cfg = fixture::train_config(3, 0.02, 4);
    LossConfig loss;
    loss.lambda = 0.0;
    loss.beta = 0.0;
    auto r = finetune_stage3(pr, teacher, FusionPlan{}, data, cfg, loss, {});

    // Reference: CE-only SGD on the same batches.
    auto params = pr.params.clone();
    params.set_requires_grad(true);
    Sgd opt(params.trainable_tensors(), cfg.sgd);
    const auto masks = to_tensors(pr.masks);
    ForwardOptions f;
    f.training = true;
    for (int e = 0; e < cfg.epochs; ++e)
      for (const auto& idx : epoch_batches(data.train.count(), cfg.batch_size, cfg.seed, e)) {
        Tape tape;
        Tensor l;
        {
          TapeScope scope(tape);
          l = cross_entropy(forward(spec, params, data.train.batch(idx), masks, f).logits_main,
                            data.train.batch_labels(idx));
        }
        tape.backward(l);
        opt.step(lr_at(cfg, e));
        opt.zero_grad();
      }
    double worst = 0.0;
    for (const auto& [name, t] : params.tensors)
      worst = std::max(worst, oracle::max_abs_diff(t.data(), r.model.params.at(name).data()));
    CHECK(worst <= 1e-12);
    CHECK(r.finalized_epoch == -1);
  }

  TEST_CASE("full-run determinism") {
    auto spec = aux_net();
    auto data = fixture::blobs(4, 1.5, 13);
    Model teacher{spec, init_params(spec, 1), full_mask_set(spec)};
    auto pr = half_relu_model(spec, init_params(spec, 2));
    FusionPlan plan;
    plan.fuse_blocks = {"g1.b0"};
    auto cfg = fixture::train_config(3, 0.01, 5);
    auto run = [&] { return finetune_stage3(pr, teacher, plan, data, cfg, {}, {ScheduleKind::Cosine, 2}); };
    auto a = run();
    auto b = run();
    CHECK(a.model.params.equals(b.model.params));
    for (std::size_t e = 0; e < a.history.size(); ++e) {
      CHECK(a.history[e].loss_total == b.history[e].loss_total);
      CHECK(a.history[e].acc_main == b.history[e].acc_main);
    }
    CHECK(a.test_acc_main == b.test_acc_main);
  }

  TEST_CASE("schedule warnings") {
    auto spec = build_tiny_net({8, 16}, {1, 1}, 8, 4);
    auto data = fixture::blobs(4, 1.5, 14, 60, 30);
    Model teacher{spec, init_params(spec, 1), full_mask_set(spec)};
    auto pr = half_relu_model(spec, init_params(spec, 2));
    FusionPlan plan;
    plan.fuse_blocks = {"g0.b0"};
    auto cfg = fixture::train_config(2, 0.01, 5);
    auto r = finetune_stage3(pr, teacher, plan, data, cfg, {}, {ScheduleKind::Linear, 5});
    REQUIRE(r.warnings.size() == 2);
    CHECK(r.warnings[0].find("first LR decay") != std::string::npos);
    CHECK(r.warnings[1].find("never reached 1") != std::string::npos);
    CHECK(r.model.spec.has_gated());
  }

  TEST_CASE("unfrozen masks and a missing AC are rejected") {
    auto spec = build_tiny_net({8, 16}, {1, 1}, 8, 4);
    auto data = fixture::blobs(4, 1.5, 15, 60, 30);
    Model teacher{spec, init_params(spec, 1), full_mask_set(spec)};
    Model pr{spec, init_params(spec, 2), full_mask_set(spec)};
    auto cfg = fixture::train_config(1, 0.01, 5);
    CHECK_THROWS_AS(finetune_stage3(pr, teacher, {}, data, cfg, {}, {}), Error);
    freeze_all(pr.masks);
    LossConfig ac;
    ac.kd_target = KdTarget::AuxClassifier;
    CHECK_THROWS_AS(finetune_stage3(pr, teacher, {}, data, cfg, ac, {}), Error);
  }
}
