#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "xtune/augment.hpp"
#include "xtune/autodiff.hpp"
#include "xtune/model.hpp"
#include "xtune/tokenizer.hpp"

namespace xtune {

inline const double kLogFloor = std::log(1e-12);

// KL(P||Q) = sum p (log p - log q) over log-prob tensors of equal shape, in
// nats, probabilities floored at 1e-12 inside the logs. Matrices are summed
// over every element, i.e. over rows.
inline ad::Tensor kl(const ad::Tensor& lp, const ad::Tensor& lq) {
  if (lp.shape() != lq.shape())
    throw ContractError("kl: distributions of shape " + ad::shape_str(lp.shape()) + " and " +
                        ad::shape_str(lq.shape()));
  auto diff = ad::sub(ad::clamp_min(lp, kLogFloor), ad::clamp_min(lq, kLogFloor));
  return ad::sum(ad::mul(ad::exp(lp), diff));
}

// KL(stopgrad(P)||Q) + KL(stopgrad(Q)||P). With stopgrad off the same value
// is computed with gradients flowing through both arguments of both terms.
inline ad::Tensor symmetric_kl(const ad::Tensor& lp, const ad::Tensor& lq, bool stopgrad = true) {
  if (!stopgrad) return ad::add(kl(lp, lq), kl(lq, lp));
  return ad::add(kl(ad::detach(lp), lq), kl(ad::detach(lq), lp));
}

inline ad::Tensor symmetric_kl_stopgrad(const ad::Tensor& lp, const ad::Tensor& lq) { return symmetric_kl(lp, lq, true); }

// Which span positions count as unchanged. `unchanged_words` keeps every
// subword of a word that is aligned, unmodified and identically segmented on
// both sides; `first_subwords` keeps only the first subword of such words.
enum class SpanPositions { unchanged_words, first_subwords };

struct SpanAlignment {
  std::vector<std::size_t> p, q;  // paired positions in the original / augmented input
  bool empty() const { return p.empty(); }
};

inline SpanAlignment span_alignment(const Segmentation& a, const Segmentation& b, const std::vector<int>& alignment,
                                    const std::vector<bool>& modified,
                                    SpanPositions mode = SpanPositions::unchanged_words) {
  SpanAlignment out;
  for (std::size_t w = 0; w < alignment.size() && w < a.n_words; ++w) {
    const int t = alignment[w];
    if (t < 0 || static_cast<std::size_t>(t) >= b.n_words) continue;
    if (static_cast<std::size_t>(t) < modified.size() && modified[t]) continue;
    if (a.pieces_of(w) != b.pieces_of(static_cast<std::size_t>(t))) continue;
    auto pa = a.positions_of(w), pb = b.positions_of(static_cast<std::size_t>(t));
    const std::size_t n = mode == SpanPositions::first_subwords ? 1 : pa.size();
    for (std::size_t k = 0; k < n; ++k) {
      out.p.push_back(pa[k]);
      out.q.push_back(pb[k]);
    }
  }
  return out;
}

// Restrict a position distribution to `positions` and renormalize.
inline ad::Tensor restrict_renormalize(const ad::Tensor& lp, std::span<const std::size_t> positions) {
  return ad::log_softmax(ad::clamp_min(ad::select(lp, positions), kLogFloor), 0);
}

// R1 between the predictions on x and on A(x). `span` is required for span
// extraction; an empty alignment contributes 0.
inline ad::Tensor r1_from_predictions(const Prediction& p, const Prediction& q, const SpanAlignment* span = nullptr,
                                      bool stopgrad = true) {
  if (p.task != q.task) throw ContractError("r1: predictions for different tasks");
  switch (p.task) {
    case Task::classification: return symmetric_kl(p.cls, q.cls, stopgrad);
    case Task::span: {
      if (!span) throw ContractError("r1: span extraction needs a position alignment");
      if (span->empty()) return ad::Tensor::scalar(0.0);
      auto ps = restrict_renormalize(p.start, span->p), qs = restrict_renormalize(q.start, span->q);
      auto pe = restrict_renormalize(p.end, span->p), qe = restrict_renormalize(q.end, span->q);
      return ad::add(symmetric_kl(ps, qs, stopgrad), symmetric_kl(pe, qe, stopgrad));
    }
    case Task::labeling: {
      if (p.labels.dim(0) != q.labels.dim(0))
        throw ContractError("r1: word counts differ (" + std::to_string(p.labels.dim(0)) + " vs " +
                            std::to_string(q.labels.dim(0)) + ")");
      return ad::scale(symmetric_kl(p.labels, q.labels, stopgrad), 1.0 / static_cast<double>(p.labels.dim(0)));
    }
  }
  throw ContractError("r1: unknown task");
}

// R2 = KL(teacher || student) on the same input. The teacher side is
// detached so its parameters never receive gradient.
inline ad::Tensor r2_from_predictions(const Prediction& teacher, const Prediction& student) {
  if (teacher.task != student.task) throw ContractError("r2: predictions for different tasks");
  switch (student.task) {
    case Task::classification: return kl(ad::detach(teacher.cls), student.cls);
    case Task::span:
      return ad::add(kl(ad::detach(teacher.start), student.start), kl(ad::detach(teacher.end), student.end));
    case Task::labeling:
      return ad::scale(kl(ad::detach(teacher.labels), student.labels),
                       1.0 / static_cast<double>(student.labels.dim(0)));
  }
  throw ContractError("r2: unknown task");
}

inline Segmentation segmentation_of(const AugmentedExample& a, const UnigramVocab& vocab) {
  if (a.segmentation) return *a.segmentation;
  return segment_words(vocab, a.example.model_words());
}

struct R1Options {
  bool stopgrad = true;
  SpanPositions positions = SpanPositions::unchanged_words;
};

// R1 for one pair (x, A(x)); x is segmented with Viterbi. Noise for GN views
// is drawn from `rng`.
inline ad::Tensor r1_example_consistency(const Model& m, const Example& x, const AugmentedExample& ax,
                                         const UnigramVocab& vocab, Rng& rng, const R1Options& opt = {}) {
  const Task task = m.config().task;
  require_valid_strategy(task, StrategyUse::R1, ax.strategy);
  const auto sx = segment_words(vocab, x.model_words());
  const auto sa = segmentation_of(ax, vocab);
  auto px = predict(m, sx);
  std::vector<double> eps;
  if (ax.noise_sigma > 0) eps = draw_noise(sa.size() * m.config().dim, ax.noise_sigma, rng);
  auto pa = predict(m, sa, eps);
  if (task == Task::span) {
    const auto al = span_alignment(sx, sa, ax.alignment, ax.modified, opt.positions);
    return r1_from_predictions(px, pa, &al, opt.stopgrad);
  }
  return r1_from_predictions(px, pa, nullptr, opt.stopgrad);
}

inline ad::Tensor r2_model_consistency(const Model& teacher, const Model& student, const Segmentation& seg,
                                       std::span<const double> noise = {}) {
  require_same_architecture(teacher, student);
  return r2_from_predictions(predict(teacher, seg, noise), predict(student, seg, noise));
}

}  // namespace xtune
