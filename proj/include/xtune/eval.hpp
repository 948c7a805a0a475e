#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xtune/data.hpp"
#include "xtune/error.hpp"
#include "xtune/model.hpp"
#include "xtune/tokenizer.hpp"

namespace xtune {

namespace detail {
inline void require_pairable(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw ContractError(std::string(what) + ": " + std::to_string(a) + " predictions for " + std::to_string(b) +
                        " gold items");
  if (a == 0) throw ContractError(std::string(what) + ": no predictions");
}
}  // namespace detail

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& gold) {
  detail::require_pairable(pred.size(), gold.size(), "accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// Inclusive word spans; a negative start is an empty prediction.
using WordSpan = std::pair<int, int>;

struct SpanScores {
  double f1 = 0, em = 0;
};

inline double span_f1(const WordSpan& p, const WordSpan& g) {
  if (p.first < 0 || p.second < p.first) return 0.0;
  const int lo = std::max(p.first, g.first), hi = std::min(p.second, g.second);
  const int overlap = std::max(0, hi - lo + 1);
  if (overlap == 0) return 0.0;
  const double prec = static_cast<double>(overlap) / (p.second - p.first + 1);
  const double rec = static_cast<double>(overlap) / (g.second - g.first + 1);
  return 2 * prec * rec / (prec + rec);
}

inline SpanScores span_f1_em(const std::vector<WordSpan>& pred, const std::vector<WordSpan>& gold) {
  detail::require_pairable(pred.size(), gold.size(), "span_f1_em");
  SpanScores s;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    s.f1 += span_f1(pred[i], gold[i]);
    s.em += pred[i] == gold[i] ? 1.0 : 0.0;
  }
  s.f1 /= static_cast<double>(pred.size());
  s.em /= static_cast<double>(pred.size());
  return s;
}

struct TagScores {
  double accuracy = 0, f1 = 0;
};

// Micro-averaged F1 over tag decisions. With `ignore` set (an "outside"
// tag) those decisions count for neither precision nor recall; without it
// micro F1 equals accuracy.
inline TagScores tag_scores(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gold,
                            std::optional<int> ignore = std::nullopt) {
  detail::require_pairable(pred.size(), gold.size(), "tag_scores");
  std::size_t tokens = 0, hit = 0, tp = 0, n_pred = 0, n_gold = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != gold[i].size())
      throw ContractError("tag_scores: sentence " + std::to_string(i) + " has " + std::to_string(pred[i].size()) +
                          " predicted tags for " + std::to_string(gold[i].size()) + " words");
    for (std::size_t k = 0; k < pred[i].size(); ++k) {
      const int p = pred[i][k], g = gold[i][k];
      ++tokens;
      hit += p == g;
      const bool pi = !ignore || p != *ignore, gi = !ignore || g != *ignore;
      n_pred += pi;
      n_gold += gi;
      tp += pi && gi && p == g;
    }
  }
  TagScores s;
  s.accuracy = tokens ? static_cast<double>(hit) / static_cast<double>(tokens) : 0.0;
  const double prec = n_pred ? static_cast<double>(tp) / static_cast<double>(n_pred) : 0.0;
  const double rec = n_gold ? static_cast<double>(tp) / static_cast<double>(n_gold) : 0.0;
  s.f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
  return s;
}

// Source score minus the mean over the other languages. Signed.
inline double transfer_gap(const std::map<std::string, double>& scores, const std::string& source) {
  auto it = scores.find(source);
  if (it == scores.end()) throw ContractError("transfer_gap: no score for source language '" + source + "'");
  double sum = 0;
  std::size_t n = 0;
  for (const auto& [lang, s] : scores) {
    if (lang == source) continue;
    sum += s;
    ++n;
  }
  if (n == 0) throw ContractError("transfer_gap: no target languages");
  return it->second - sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Model decoding

inline int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline int predict_label(const Model& m, const Segmentation& seg) { return argmax(predict(m, seg).cls.values()); }

inline std::vector<int> predict_tags(const Model& m, const Segmentation& seg) {
  auto p = predict(m, seg);
  const std::size_t rows = p.labels.dim(0), cols = p.labels.dim(1);
  std::vector<int> out(rows);
  auto v = p.labels.values();
  for (std::size_t r = 0; r < rows; ++r) out[r] = argmax(v.subspan(r * cols, cols));
  return out;
}

// Best start <= end pair by summed log-prob, mapped back to context words.
// Positions inside the question give an empty prediction.
inline WordSpan predict_span(const Model& m, const Segmentation& seg, std::size_t question_words,
                             std::size_t max_subwords = 30) {
  auto p = predict(m, seg);
  auto s = p.start.values(), e = p.end.values();
  const std::size_t n = s.size();
  double best = -INFINITY;
  std::size_t bs = 0, be = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n && j < i + max_subwords; ++j)
      if (s[i] + e[j] > best) {
        best = s[i] + e[j];
        bs = i;
        be = j;
      }
  const std::size_t ws = seg.word_of[bs], we = seg.word_of[be];
  if (ws < question_words || we < question_words) return {-1, -1};
  return {static_cast<int>(ws - question_words), static_cast<int>(we - question_words)};
}

struct LanguageScores {
  std::string lang;
  std::size_t n = 0;
  double accuracy = 0;  // classification accuracy or tag accuracy
  double f1 = 0;        // span or tag F1
  double em = 0;
  double score = 0;     // the number transfer gaps are computed from
};

inline LanguageScores evaluate(const Model& m, const UnigramVocab& vocab, const std::vector<Example>& data,
                               std::string lang = {}) {
  if (data.empty()) throw ContractError("evaluate: no examples");
  LanguageScores out;
  out.lang = lang.empty() ? data.front().lang : lang;
  out.n = data.size();
  const Task task = m.config().task;
  switch (task) {
    case Task::classification: {
      std::vector<int> pred, gold;
      for (const auto& ex : data) {
        pred.push_back(predict_label(m, segment_words(vocab, ex.model_words())));
        gold.push_back(ex.label);
      }
      out.accuracy = out.score = accuracy(pred, gold);
      break;
    }
    case Task::span: {
      std::vector<WordSpan> pred, gold;
      for (const auto& ex : data) {
        pred.push_back(predict_span(m, segment_words(vocab, ex.model_words()), ex.question.size()));
        gold.emplace_back(ex.answer_start, ex.answer_end);
      }
      auto s = span_f1_em(pred, gold);
      out.f1 = s.f1;
      out.em = s.em;
      out.score = (s.f1 + s.em) / 2;
      break;
    }
    case Task::labeling: {
      std::vector<std::vector<int>> pred, gold;
      for (const auto& ex : data) {
        pred.push_back(predict_tags(m, segment_words(vocab, ex.words)));
        gold.push_back(ex.tags);
      }
      auto s = tag_scores(pred, gold);
      out.accuracy = s.accuracy;
      out.f1 = out.score = s.f1;
      break;
    }
  }
  return out;
}

struct EvalReport {
  Task task = Task::classification;
  std::string source;
  std::vector<LanguageScores> languages;
  double gap = 0;
  double target_mean = 0;

  std::map<std::string, double> scores() const {
    std::map<std::string, double> m;
    for (const auto& l : languages) m[l.lang] = l.score;
    return m;
  }
};

inline EvalReport evaluate_languages(const Model& m, const UnigramVocab& vocab,
                                     const std::map<std::string, std::vector<Example>>& sets,
                                     const std::string& source) {
  EvalReport r;
  r.task = m.config().task;
  r.source = source;
  for (const auto& [lang, data] : sets) r.languages.push_back(evaluate(m, vocab, data, lang));
  auto sc = r.scores();
  double sum = 0;
  std::size_t n = 0;
  for (const auto& [lang, s] : sc)
    if (lang != source) {
      sum += s;
      ++n;
    }
  r.target_mean = n ? sum / static_cast<double>(n) : 0.0;
  if (sc.count(source) && n) r.gap = transfer_gap(sc, source);
  return r;
}

inline std::string format_pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v;
  return os.str();
}

inline std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  const bool span = r.task == Task::span;
  os << std::left << std::setw(8) << "lang" << std::right << std::setw(7) << "n";
  if (span) os << std::setw(9) << "F1" << std::setw(9) << "EM";
  else if (r.task == Task::labeling) os << std::setw(9) << "acc" << std::setw(9) << "F1";
  else os << std::setw(9) << "acc";
  os << std::setw(9) << "score" << '\n';
  for (const auto& l : r.languages) {
    os << std::left << std::setw(8) << l.lang << std::right << std::setw(7) << l.n;
    if (span) os << std::setw(9) << format_pct(l.f1) << std::setw(9) << format_pct(l.em);
    else if (r.task == Task::labeling) os << std::setw(9) << format_pct(l.accuracy) << std::setw(9) << format_pct(l.f1);
    else os << std::setw(9) << format_pct(l.accuracy);
    os << std::setw(9) << format_pct(l.score) << '\n';
  }
  os << "target mean " << format_pct(r.target_mean) << ", transfer gap " << format_pct(r.gap) << " (source "
     << r.source << ")\n";
  return os.str();
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["task"] = std::string(task_name(r.task));
  j["source"] = r.source;
  j["gap"] = r.gap;
  j["target_mean"] = r.target_mean;
  for (const auto& l : r.languages) {
    nlohmann::json e;
    e["n"] = l.n;
    e["score"] = l.score;
    if (r.task == Task::span) {
      e["f1"] = l.f1;
      e["em"] = l.em;
    } else {
      e["accuracy"] = l.accuracy;
      if (r.task == Task::labeling) e["f1"] = l.f1;
    }
    j["languages"][l.lang] = e;
  }
  return j;
}

}  // namespace xtune
