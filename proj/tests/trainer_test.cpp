#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <vector>

#include "xtune/synthetic.hpp"
#include "xtune/trainer.hpp"

using namespace xtune;

namespace {

SyntheticSpec spec_for(Task task, std::size_t n_train = 60, std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.task = task;
  s.train_examples = n_train;
  s.test_examples = 20;
  s.unlabeled_per_language = 100;
  s.seed = seed;
  return s;
}

const SyntheticBench& bench(Task task) {
  static std::map<Task, std::unique_ptr<SyntheticBench>> cache;
  auto& b = cache[task];
  if (!b) b = std::make_unique<SyntheticBench>(make_synthetic_bench(spec_for(task)));
  return *b;
}

TrainConfig quick(Task task, Mode mode) {
  TrainConfig c;
  c.task = task;
  c.mode = mode;
  c.epochs = 2;
  c.batch_size = 8;  // 8 batches per epoch on 60 examples, so the warmup spans at least a step
  c.a_star = c.a = c.a_prime = task == Task::classification ? Strategy::CS : Strategy::SS;
  return c;
}

}  // namespace

TEST(Schedule, LinearWarmupAndDecay) {
  EXPECT_DOUBLE_EQ(lr_at(10, 100, 1.0, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(lr_at(100, 100, 1.0, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(5, 100, 2.0, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(lr_at(55, 100, 1.0, 0.1), 0.5);
  EXPECT_DOUBLE_EQ(lr_at(1, 4, 1.0, 0.0), 0.75);
  EXPECT_THROW(lr_at(1, 5, 1.0, 0.1), ContractError);
  EXPECT_THROW(lr_at(1, 0, 1.0, 0.1), ContractError);
}

TEST(Adam, FirstTwoStepsMatchHandFormula) {
  auto p = ad::Tensor::from({2}, {1.0, -2.0});
  std::vector<ad::Tensor> params{p};
  AdamState st;
  const double g1[2] = {0.5, -3.0}, g2[2] = {0.1, 1.0};
  const double lr = 0.1;
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -2.0};
  for (int t = 1; t <= 2; ++t) {
    const double* g = t == 1 ? g1 : g2;
    for (int i = 0; i < 2; ++i) p.mutable_grad()[i] = g[i];
    adam_step(params, st, lr);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p.values()[i], x[i], 1e-15);
    }
  }
  EXPECT_EQ(st.step, 2u);
}

TEST(Presets, CrossLingualXnli) {
  const auto& p = find_preset("xnli", Setting::cross_lingual);
  EXPECT_EQ(p.a_star, Strategy::CS);
  EXPECT_EQ(p.a, Strategy::CS);
  EXPECT_EQ(p.a_prime, Strategy::CS);
  EXPECT_EQ(p.lambda1, 5.0);
  EXPECT_EQ(p.lambda2, 5.0);
}

TEST(Presets, TranslateTrainPosAndTydiqa) {
  for (const char* d : {"pos", "tydiqa"}) {
    const auto& p = find_preset(d, Setting::translate_train_all);
    EXPECT_EQ(p.a_star, Strategy::SS);
    EXPECT_EQ(p.a, Strategy::MT);
    EXPECT_EQ(p.a_prime, Strategy::SS);
    EXPECT_EQ(p.lambda1, 5.0);
    EXPECT_EQ(p.lambda2, 0.3);
  }
  EXPECT_EQ(presets().size(), 14u);
  EXPECT_THROW(find_preset("squad", Setting::cross_lingual), ValidationError);
}

TEST(Presets, ApplyCopiesStrategiesAndWeights) {
  TrainConfig c;
  apply_preset(c, find_preset("mlqa", Setting::translate_train_all));
  EXPECT_EQ(c.task, Task::span);
  EXPECT_EQ(c.a_star, Strategy::CS);
  EXPECT_EQ(c.a, Strategy::MT);
  EXPECT_EQ(c.lambda2, 0.5);
}

TEST(Config, Validation) {
  TrainConfig c;
  c.lambda1 = -1;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.warmup = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Stage1, IdentityAugmentationReducesToPlainFineTuning) {
  const auto& b = bench(Task::classification);
  auto in = b.inputs();
  auto base = quick(Task::classification, Mode::baseline);
  auto r1 = quick(Task::classification, Mode::r1_only);
  r1.a_star = Strategy::none;
  auto rb = xtune_train(in, base), rr = xtune_train(in, r1);
  ASSERT_EQ(rb.trace.size(), rr.trace.size());
  for (std::size_t i = 0; i < rb.trace.size(); ++i) {
    EXPECT_EQ(rr.trace[i].r1, 0.0);
    EXPECT_NEAR(rr.trace[i].total, rb.trace[i].total, 1e-9) << "step " << i;
  }
}

TEST(Stage1, LossDecreasesOverSeeds) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto b = make_synthetic_bench(spec_for(Task::classification, 60, seed));
    auto in = b.inputs();
    auto cfg = quick(Task::classification, Mode::r1_only);
    cfg.seed = seed;
    cfg.epochs = 5;
    auto r = xtune_train(in, cfg);
    for (const auto& s : r.trace) ASSERT_TRUE(std::isfinite(s.total));
    // first and last epoch means; single batches are noisy
    const std::size_t per_epoch = r.trace.size() / cfg.epochs;
    double first = 0, last = 0;
    for (std::size_t i = 0; i < per_epoch; ++i) {
      first += r.trace[i].total;
      last += r.trace[r.trace.size() - 1 - i].total;
    }
    EXPECT_LT(last, first) << "seed " << seed;
  }
}

TEST(Stage2, ZeroWeightsIdentityMatchesBaselineBitForBit) {
  for (Task task : {Task::classification, Task::labeling}) {
    const auto& b = bench(task);
    auto in = b.inputs();
    auto x = quick(task, Mode::xtune);
    x.lambda1 = x.lambda2 = 0;
    x.a = x.a_prime = Strategy::none;
    auto rx = xtune_train(in, x);
    auto rb = xtune_train(in, quick(task, Mode::baseline));
    std::vector<StepLog> s2;
    for (const auto& s : rx.trace)
      if (s.stage == 2) s2.push_back(s);
    ASSERT_EQ(s2.size(), rb.trace.size());
    for (std::size_t i = 0; i < s2.size(); ++i) {
      EXPECT_EQ(s2[i].total, rb.trace[i].total);
      EXPECT_EQ(s2[i].lr, rb.trace[i].lr);
    }
    EXPECT_EQ(checkpoint_text(rx.model), checkpoint_text(rb.model));
  }
}

TEST(Stage2, LossComponentsAddUp) {
  const auto& b = bench(Task::classification);
  auto in = b.inputs();
  auto cfg = quick(Task::classification, Mode::xtune);
  cfg.lambda1 = 5.0;
  cfg.lambda2 = 2.0;
  auto r = xtune_train(in, cfg);
  bool saw_stage2 = false;
  for (const auto& s : r.trace) {
    EXPECT_NEAR(s.total, s.task + s.w_r1 * s.r1 + s.w_r2 * s.r2, 1e-9);
    if (s.stage == 2) {
      saw_stage2 = true;
      EXPECT_EQ(s.w_r1, 5.0);
      EXPECT_EQ(s.w_r2, 2.0);
    }
  }
  EXPECT_TRUE(saw_stage2);
}

TEST(Stage2, TeacherUnchangedByStudentTraining) {
  const auto& b = bench(Task::classification);
  auto in = b.inputs();
  // the stage-1 model of xtune is exactly an r1-only run under cross-lingual transfer
  auto r1 = xtune_train(in, quick(Task::classification, Mode::r1_only));
  auto x = xtune_train(in, quick(Task::classification, Mode::xtune));
  ASSERT_TRUE(x.teacher.has_value());
  EXPECT_EQ(checkpoint_text(*x.teacher), checkpoint_text(r1.model));

  auto cfg = quick(Task::classification, Mode::xtune);
  TrainContext ctx(in, cfg);
  Model teacher = fresh_model(cfg, b.vocab, 2);
  const Model snapshot = teacher;
  Model student = fresh_model(cfg, b.vocab, 2);
  AugmentationStrategy none;
  Rng rng(1);
  auto items = make_items(ctx, build_augmented_corpus(b.corpus.train, none, ctx.augment_context(), rng), false);
  TrainResult res;
  train_stage(student, &teacher, items, StageSpec{2, 1.0, Strategy::CS, 1.0}, ctx, res);
  EXPECT_TRUE(teacher.same_values(snapshot));
  EXPECT_FALSE(student.same_values(snapshot));
}

TEST(Stage2, UnlabeledTranslationsGiveNoTaskGradient) {
  const auto& b = bench(Task::labeling);
  auto in = b.inputs();
  auto cfg = quick(Task::labeling, Mode::r2_only);
  cfg.setting = Setting::translate_train_all;
  cfg.a = Strategy::MT;
  TrainContext ctx(in, cfg);
  AugmentationStrategy mt = ctx.strategy(Strategy::MT);
  Rng rng(1);
  std::vector<Example> few(b.corpus.train.begin(), b.corpus.train.begin() + 4);
  auto corpus = build_augmented_corpus(few, mt, ctx.augment_context(), rng);
  auto items = make_items(ctx, corpus, false);
  ASSERT_EQ(items.size(), 12u);
  Model teacher = fresh_model(cfg, b.vocab, 4), student = teacher;
  for (auto& t : student.params())
    for (double& v : t.mutable_values()) v *= 3.0;

  std::vector<TrainItem*> all, labeled;
  for (auto& it : items) {
    all.push_back(&it);
    if (it.aug.label_available) labeled.push_back(&it);
  }
  ASSERT_EQ(labeled.size(), 4u);
  auto params = student.params();
  auto task_grads = [&](std::vector<TrainItem*>& batch, LabelMaskStats* mask) {
    ad::zero_grad(params);
    Rng s(0);
    auto bt = batch_loss(student, &teacher, batch, StageSpec{2, 0.0, Strategy::none, 1.0}, ctx, s, mask);
    ad::backward(bt.task_term);
    std::vector<double> g;
    for (const auto& p : params) g.insert(g.end(), p.grad().begin(), p.grad().end());
    return std::make_pair(g, bt);
  };
  LabelMaskStats mask;
  auto [g_all, bt_all] = task_grads(all, &mask);
  auto [g_lab, bt_lab] = task_grads(labeled, nullptr);
  EXPECT_EQ(g_all, g_lab);
  EXPECT_EQ(bt_all.task, bt_lab.task);
  EXPECT_EQ(mask.labeled_terms, 4u);
  EXPECT_EQ(mask.unlabeled_seen, 8u);
  EXPECT_EQ(mask.unlabeled_task_terms, 0u);

  // a batch of unlabeled items alone is pure lambda2 * R2
  std::vector<TrainItem*> unl;
  for (auto* it : all)
    if (!it->aug.label_available) unl.push_back(it);
  Rng s(0);
  auto bt = batch_loss(student, &teacher, unl, StageSpec{2, 0.0, Strategy::none, 0.7}, ctx, s);
  EXPECT_FALSE(bt.task_term.defined());
  EXPECT_GT(bt.r2, 0.0);
  EXPECT_NEAR(bt.total.item(), 0.7 * bt.r2, 1e-15);
}

TEST(Training, DeterministicGivenSeed) {
  const auto& b = bench(Task::span);
  auto in = b.inputs();
  auto cfg = quick(Task::span, Mode::xtune);
  cfg.a_star = Strategy::CS;
  auto r1 = xtune_train(in, cfg), r2 = xtune_train(in, cfg);
  ASSERT_EQ(r1.trace.size(), r2.trace.size());
  for (std::size_t i = 0; i < r1.trace.size(); ++i) EXPECT_EQ(r1.trace[i].total, r2.trace[i].total);
  EXPECT_EQ(checkpoint_text(r1.model), checkpoint_text(r2.model));
  EXPECT_EQ(checkpoint_text(*r1.teacher), checkpoint_text(*r2.teacher));
}

TEST(Training, EndToEndTwoHundredExamples) {
  auto b = make_synthetic_bench(spec_for(Task::classification, 200));
  auto in = b.inputs();
  TrainConfig cfg;
  const auto t0 = std::chrono::steady_clock::now();
  auto r = xtune_train(in, cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 60.0);
  ASSERT_TRUE(r.teacher.has_value());
  EXPECT_EQ(r.stage1_items, 200u);
  EXPECT_EQ(r.stage2_items, 400u);
  EXPECT_FALSE(r.teacher->same_values(r.model));
}

TEST(Training, StrategyErrorsSurface) {
  const auto& b = bench(Task::span);
  auto in = b.inputs();
  auto cfg = quick(Task::span, Mode::xtune);
  cfg.setting = Setting::translate_train_all;
  cfg.a_prime = Strategy::MT;
  try {
    xtune_train(in, cfg);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("MT cannot be used for R1"), std::string::npos);
  }
  cfg = quick(Task::span, Mode::xtune);
  cfg.a = Strategy::MT;
  EXPECT_THROW(xtune_train(in, cfg), ValidationError);  // MT under cross-lingual transfer
  auto no_dicts = in;
  no_dicts.dictionaries.clear();
  cfg = quick(Task::classification, Mode::xtune);
  EXPECT_THROW(xtune_train(no_dicts, cfg), ValidationError);
}

TEST(Training, NonFiniteLossAborts) {
  const auto& b = bench(Task::classification);
  auto in = b.inputs();
  auto cfg = quick(Task::classification, Mode::baseline);
  TrainContext ctx(in, cfg);
  Model m = fresh_model(cfg, b.vocab, 2);
  for (double& v : m.mix_w.mutable_values()) v = NAN;
  AugmentationStrategy none;
  Rng rng(1);
  auto items = make_items(ctx, build_augmented_corpus(b.corpus.train, none, ctx.augment_context(), rng), true);
  TrainResult res;
  EXPECT_THROW(train_stage(m, nullptr, items, StageSpec{}, ctx, res), Error);
}
