#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "xtune/consistency.hpp"
#include "fixtures.hpp"

using namespace xtune;

namespace {

ad::Tensor logp(std::vector<double> p) {
  for (double& v : p) v = std::log(v);
  const std::size_t n = p.size();
  return ad::Tensor::from({n}, std::move(p));
}

// sum p log(p/q) by plain loops
double kl_direct(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

std::vector<double> random_dist(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  double z = 0;
  for (double& v : p) z += v = std::exp(rng.normal(0.0, 1.5));
  for (double& v : p) v /= z;
  return p;
}

std::vector<double> renorm(const std::vector<double>& p, const std::vector<std::size_t>& at) {
  std::vector<double> out;
  double z = 0;
  for (auto i : at) z += p[i];
  for (auto i : at) out.push_back(p[i] / z);
  return out;
}

Segmentation hand_seg(const std::vector<std::vector<std::size_t>>& words) {
  Segmentation s;
  for (const auto& w : words) s.append_word(w);
  return s;
}

Prediction span_pred(const std::vector<double>& start, const std::vector<double>& end) {
  Prediction p;
  p.task = Task::span;
  p.start = logp(start);
  p.end = logp(end);
  return p;
}

}  // namespace

TEST(Kl, HandValues) {
  EXPECT_NEAR(kl(logp({0.5, 0.5}), logp({0.25, 0.75})).item(), 0.14384, 1e-5);
  EXPECT_NEAR(kl(logp({0.5, 0.5}), logp({0.25, 0.75})).item(), kl_direct({0.5, 0.5}, {0.25, 0.75}), 1e-15);
  EXPECT_NEAR(kl(logp({0.25, 0.75}), logp({0.5, 0.5})).item(), 0.13081, 1e-5);
  EXPECT_EQ(kl(logp({0.3, 0.7}), logp({0.3, 0.7})).item(), 0.0);
}

TEST(Kl, NonNegativeOnRandomPairs) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.index(6);
    auto p = random_dist(rng, n), q = random_dist(rng, n);
    const double v = kl(logp(p), logp(q)).item();
    EXPECT_GE(v, -1e-12);
    EXPECT_NEAR(v, kl_direct(p, q), 1e-12);
  }
}

TEST(Kl, ZeroProbabilityIsFloored) {
  auto p = ad::Tensor::from({2}, {0.0, -INFINITY});
  auto q = logp({0.5, 0.5});
  EXPECT_NEAR(kl(p, q).item(), std::log(2.0), 1e-12);
  EXPECT_TRUE(std::isfinite(kl(q, p).item()));
}

TEST(Kl, ShapeMismatch) { EXPECT_THROW(kl(logp({0.5, 0.5}), logp({0.2, 0.3, 0.5})), ContractError); }

TEST(SymmetricKl, HandValue) {
  EXPECT_NEAR(symmetric_kl_stopgrad(logp({0.5, 0.5}), logp({0.25, 0.75})).item(), 0.27465, 1e-5);
}

TEST(SymmetricKl, EqualInputsZeroValueAndGradient) {
  auto x = ad::Tensor::from({3}, {0.3, -1.0, 2.0});
  auto y = ad::Tensor::from({3}, {0.3, -1.0, 2.0});
  auto loss = symmetric_kl_stopgrad(ad::log_softmax(x), ad::log_softmax(y));
  EXPECT_EQ(loss.item(), 0.0);
  ad::backward(loss);
  for (double g : x.grad()) EXPECT_NEAR(g, 0.0, 1e-15);
  for (double g : y.grad()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(SymmetricKl, DetachedArgumentGetsNoGradient) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    auto x = ad::Tensor::from({4}, {rng.normal(), rng.normal(), rng.normal(), rng.normal()});
    auto y = ad::Tensor::from({4}, {rng.normal(), rng.normal(), rng.normal(), rng.normal()});
    auto loss = kl(ad::detach(ad::log_softmax(x)), ad::log_softmax(y));
    ad::backward(loss);
    for (double g : x.grad()) EXPECT_EQ(g, 0.0);
    double gy = 0;
    for (double g : y.grad()) gy += std::abs(g);
    EXPECT_GT(gy, 0.0);
  }
}

TEST(SymmetricKl, ValueIsSumOfDirectionsWithOrWithoutBarrier) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    auto p = random_dist(rng, 5), q = random_dist(rng, 5);
    const double expect = kl_direct(p, q) + kl_direct(q, p);
    EXPECT_NEAR(symmetric_kl(logp(p), logp(q), true).item(), expect, 1e-12);
    EXPECT_NEAR(symmetric_kl(logp(p), logp(q), false).item(), expect, 1e-12);
  }
}

TEST(R1, IdentityAugmentationIsZeroForEveryTask) {
  const auto vocab = fixtures::word_vocab();
  Example ex;
  ex.words = {"the", "chat", "zq"};
  ex.question = {"dog"};
  ex.label = 0;
  ex.n_label = 3;
  ex.tags = {0, 1, 2};
  ex.answer_start = 0;
  ex.answer_end = 1;
  for (Task task : {Task::classification, Task::span, Task::labeling}) {
    auto m = fixtures::scaled_model(fixtures::model_config(task, vocab.size()), 3);
    Example e = ex;
    if (task != Task::span) e.question.clear();
    Rng rng(1);
    EXPECT_EQ(r1_example_consistency(m, e, identity_augmentation(e), vocab, rng).item(), 0.0) << task_name(task);
  }
}

TEST(R1, SpanRestrictedToUnchangedWords) {
  // word 2 re-tokenized into two pieces on the augmented side
  auto a = hand_seg({{10}, {11}, {12}});
  auto b = hand_seg({{10}, {20, 21}, {12}});
  std::vector<int> align{0, 1, 2};
  std::vector<bool> modified{false, true, false};
  for (auto mode : {SpanPositions::unchanged_words, SpanPositions::first_subwords}) {
    auto al = span_alignment(a, b, align, modified, mode);
    EXPECT_EQ(al.p, (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(al.q, (std::vector<std::size_t>{0, 3}));
  }
  // a word with different pieces but no modified flag is excluded too
  auto al2 = span_alignment(a, b, align, {false, false, false});
  EXPECT_EQ(al2.p, (std::vector<std::size_t>{0, 2}));

  const std::vector<double> ps{0.2, 0.5, 0.3}, pe{0.6, 0.1, 0.3};
  const std::vector<double> qs{0.1, 0.4, 0.2, 0.3}, qe{0.25, 0.25, 0.25, 0.25};
  auto al = span_alignment(a, b, align, modified);
  const double got = r1_from_predictions(span_pred(ps, pe), span_pred(qs, qe), &al).item();

  auto rps = renorm(ps, {0, 2}), rqs = renorm(qs, {0, 3});
  auto rpe = renorm(pe, {0, 2}), rqe = renorm(qe, {0, 3});
  // start: (0.4, 0.6) vs (0.25, 0.75); end: (2/3, 1/3) vs (0.5, 0.5)
  EXPECT_NEAR(rps[0], 0.4, 1e-15);
  EXPECT_NEAR(rqs[1], 0.75, 1e-15);
  const double want = kl_direct(rps, rqs) + kl_direct(rqs, rps) + kl_direct(rpe, rqe) + kl_direct(rqe, rpe);
  EXPECT_NEAR(got, want, 1e-9);
}

TEST(R1, SpanZeroModificationEqualsFullPositions) {
  auto a = hand_seg({{10}, {11, 13}, {12}});
  auto al = span_alignment(a, a, {0, 1, 2}, {false, false, false});
  EXPECT_EQ(al.p.size(), 4u);
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    auto ps = random_dist(rng, 4), pe = random_dist(rng, 4), qs = random_dist(rng, 4), qe = random_dist(rng, 4);
    const double got = r1_from_predictions(span_pred(ps, pe), span_pred(qs, qe), &al).item();
    const double full = kl_direct(ps, qs) + kl_direct(qs, ps) + kl_direct(pe, qe) + kl_direct(qe, pe);
    EXPECT_NEAR(got, full, 1e-12);
  }
}

TEST(R1, SpanEmptyAlignmentIsZero) {
  SpanAlignment none;
  EXPECT_EQ(r1_from_predictions(span_pred({0.5, 0.5}, {0.5, 0.5}), span_pred({0.9, 0.1}, {0.1, 0.9}), &none).item(),
            0.0);
}

TEST(R1, LabelingIsMeanOverWords) {
  Prediction p, q;
  p.task = q.task = Task::labeling;
  p.labels = ad::Tensor::from({2, 2}, {std::log(0.5), std::log(0.5), std::log(0.1), std::log(0.9)});
  q.labels = ad::Tensor::from({2, 2}, {std::log(0.25), std::log(0.75), std::log(0.1), std::log(0.9)});
  EXPECT_NEAR(r1_from_predictions(p, q).item(), 0.27465 / 2, 1e-5);
  Prediction short_q;
  short_q.task = Task::labeling;
  short_q.labels = ad::Tensor::from({1, 2}, {std::log(0.5), std::log(0.5)});
  EXPECT_THROW(r1_from_predictions(p, short_q), ContractError);
}

TEST(R1, StopgradChangesGradientNotValue) {
  const auto vocab = fixtures::word_vocab();
  auto m = fixtures::scaled_model(fixtures::model_config(Task::classification, vocab.size()), 5);
  Example ex;
  ex.words = {"the", "cat", "sat"};
  ex.label = 0;
  ex.n_label = 3;
  std::vector<BilingualDictionary> dicts(1);
  dicts[0].add("cat", "chat");
  Rng rng(1);
  auto aug = code_switch(ex, dicts, 1.0, rng);
  auto params = m.params();
  auto grads = [&](bool stop, double& value) {
    ad::zero_grad(params);
    Rng r(0);
    R1Options opt;
    opt.stopgrad = stop;
    auto loss = r1_example_consistency(m, ex, aug, vocab, r, opt);
    value = loss.item();
    ad::backward(loss);
    return std::vector<double>(params[0].grad().begin(), params[0].grad().end());
  };
  double v1 = 0, v2 = 0;
  auto g1 = grads(true, v1), g2 = grads(false, v2);
  EXPECT_NEAR(v1, v2, 1e-12);
  double diff = 0;
  for (std::size_t i = 0; i < g1.size(); ++i) diff += std::abs(g1[i] - g2[i]);
  EXPECT_GT(diff, 1e-8);
}

TEST(R2, SameModelIsZero) {
  const auto vocab = fixtures::word_vocab();
  for (Task task : {Task::classification, Task::span, Task::labeling}) {
    auto m = fixtures::scaled_model(fixtures::model_config(task, vocab.size()), 6);
    Model teacher = m;
    auto s = segment_words(vocab, std::vector<std::string>{"the", "chat", "sat"});
    EXPECT_EQ(r2_model_consistency(teacher, m, s).item(), 0.0);
  }
}

TEST(R2, HandValueAndTeacherGetsNoGradient) {
  const auto vocab = fixtures::word_vocab();
  auto teacher = fixtures::scaled_model(fixtures::model_config(Task::classification, vocab.size(), 2), 7);
  auto student = fixtures::scaled_model(fixtures::model_config(Task::classification, vocab.size(), 2), 8);
  auto s = segment_words(vocab, std::vector<std::string>{"the", "cat"});
  const auto tp = predict(teacher, s), sp = predict(student, s);
  auto pt = tp.cls.values(), ps = sp.cls.values();
  std::vector<double> p{std::exp(pt[0]), std::exp(pt[1])}, q{std::exp(ps[0]), std::exp(ps[1])};
  auto loss = r2_model_consistency(teacher, student, s);
  EXPECT_NEAR(loss.item(), kl_direct(p, q), 1e-12);
  ad::backward(loss);
  for (const auto& t : teacher.params())
    for (double g : t.grad()) EXPECT_EQ(g, 0.0);
  double gs = 0;
  for (const auto& t : student.params())
    for (double g : t.grad()) gs += std::abs(g);
  EXPECT_GT(gs, 0.0);
}

TEST(R2, ArchitectureMismatch) {
  const auto vocab = fixtures::word_vocab();
  auto a = fixtures::scaled_model(fixtures::model_config(Task::classification, vocab.size(), 2), 1);
  auto b = fixtures::scaled_model(fixtures::model_config(Task::classification, vocab.size(), 3), 1);
  auto s = segment_words(vocab, std::vector<std::string>{"the"});
  EXPECT_THROW(r2_model_consistency(a, b, s), ContractError);
}

namespace {

Example grad_example(Task task) {
  Example e;
  e.words = {"the", "chat", "sat", "zq"};
  if (task == Task::span) e.question = {"dog"};
  e.label = 1;
  e.n_label = 3;
  e.tags = {0, 1, 2, 0};
  e.answer_start = 1;
  e.answer_end = 2;
  return e;
}

// CS for classification, SS for the token-level tasks; seeds chosen so the
// augmented side actually differs.
AugmentedExample grad_view(Task task, const Example& e, const UnigramVocab& vocab) {
  std::vector<BilingualDictionary> dicts(1);
  dicts[0].add("sat", "zqs");
  Rng rng(1);
  if (task == Task::classification) return code_switch(e, dicts, 1.0, rng);
  for (;;) {
    auto a = subword_resample(e, vocab, 0.3, rng);
    bool changed = false;
    for (bool m : a.modified) changed = changed || m;
    if (changed) return a;
  }
}

}  // namespace

TEST(Consistency, FullLossesPassGradientCheck) {
  const auto vocab = fixtures::word_vocab();
  for (Task task : {Task::classification, Task::span, Task::labeling}) {
    auto m = fixtures::scaled_model(fixtures::model_config(task, vocab.size()), 13);
    const Example e = grad_example(task);
    const auto aug = grad_view(task, e, vocab);
    auto params = m.params();
    R1Options plain;
    plain.stopgrad = false;
    Rng r0(0);
    EXPECT_GT(r1_example_consistency(m, e, aug, vocab, r0, plain).item(), 1e-6) << task_name(task);
    auto r1 = ad::grad_check(
        [&] {
          Rng r(0);
          return r1_example_consistency(m, e, aug, vocab, r, plain);
        },
        params, 1e-5, fixtures::kModelGradFloor);
    EXPECT_LT(r1.max_relative_error, 1e-4) << "R1 " << task_name(task);

    auto teacher = fixtures::scaled_model(fixtures::model_config(task, vocab.size()), 14);
    auto s = segment_words(vocab, e.model_words());
    auto r2 = ad::grad_check([&] { return r2_model_consistency(teacher, m, s); }, params, 1e-5,
                             fixtures::kModelGradFloor);
    EXPECT_LT(r2.max_relative_error, 1e-4) << "R2 " << task_name(task);
  }
}

// With the barrier, R1's gradient is the gradient of
// KL(P0||Q) + KL(Q0||P) where P0, Q0 are frozen at the current parameters.
TEST(Consistency, StopgradGradientMatchesFrozenTargetOracle) {
  const auto vocab = fixtures::word_vocab();
  const Task task = Task::classification;
  auto m = fixtures::scaled_model(fixtures::model_config(task, vocab.size()), 15);
  const Example e = grad_example(task);
  const auto aug = grad_view(task, e, vocab);
  const auto sx = segment_words(vocab, e.model_words());
  const auto sa = segmentation_of(aug, vocab);
  auto frozen = [](const ad::Tensor& t) {
    return ad::Tensor::from(t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
  };
  const auto p0 = frozen(predict(m, sx).cls), q0 = frozen(predict(m, sa).cls);
  auto oracle = [&] { return ad::add(kl(p0, predict(m, sa).cls), kl(q0, predict(m, sx).cls)); };
  auto params = m.params();
  auto fd = ad::grad_check(oracle, params, 1e-5, fixtures::kModelGradFloor);
  EXPECT_LT(fd.max_relative_error, 1e-4);

  std::vector<std::vector<double>> want;
  for (const auto& p : params) want.emplace_back(p.grad().begin(), p.grad().end());
  ad::zero_grad(params);
  Rng r(0);
  ad::backward(r1_example_consistency(m, e, aug, vocab, r));
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t k = 0; k < want[i].size(); ++k) EXPECT_NEAR(params[i].grad()[k], want[i][k], 1e-12);
}
