#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xtune/data.hpp"
#include "xtune/error.hpp"
#include "xtune/rng.hpp"
#include "xtune/tokenizer.hpp"

namespace xtune {

// `none` is the identity augmentation; it is not one of the four strategies
// but keeps null-case comparisons inside the same code path.
enum class Strategy { none, SS, GN, CS, MT };

inline std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::none: return "none";
    case Strategy::SS: return "SS";
    case Strategy::GN: return "GN";
    case Strategy::CS: return "CS";
    case Strategy::MT: return "MT";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "none") return Strategy::none;
  if (s == "SS" || s == "ss") return Strategy::SS;
  if (s == "GN" || s == "gn") return Strategy::GN;
  if (s == "CS" || s == "cs") return Strategy::CS;
  if (s == "MT" || s == "mt") return Strategy::MT;
  throw ValidationError("unknown augmentation strategy '" + std::string(s) + "' (SS, GN, CS, MT, none)");
}

struct AugmentationStrategy {
  Strategy kind = Strategy::none;
  double alpha = 0.2;        // SS
  double sigma = 1e-2;       // GN
  double word_ratio = 0.3;   // CS
  std::vector<std::string> languages;  // MT targets; empty means every language in the store

  void validate() const {
    if (!(alpha >= 0)) throw ValidationError("SS alpha must be >= 0");
    if (!(sigma >= 0)) throw ValidationError("GN sigma must be >= 0");
    if (!(word_ratio >= 0 && word_ratio <= 1)) throw ValidationError("CS word_ratio must lie in [0,1]");
  }
};

struct AugmentedExample {
  Example example;                           // augmented words, payload carried over
  std::optional<Segmentation> segmentation;  // fixed by SS; otherwise segment at use
  Strategy strategy = Strategy::none;
  // Per original model word (question ++ context): index in the augmented
  // model words, or -1 when there is no alignment.
  std::vector<int> alignment;
  std::vector<bool> modified;  // per augmented model word
  bool label_available = true;
  double noise_sigma = 0.0;  // GN applies noise at encode time

  bool has_alignment() const {
    for (int a : alignment)
      if (a >= 0) return true;
    return false;
  }
};

inline AugmentedExample identity_augmentation(const Example& ex) {
  AugmentedExample a;
  a.example = ex;
  const std::size_t n = ex.question.size() + ex.words.size();
  a.alignment.resize(n);
  for (std::size_t i = 0; i < n; ++i) a.alignment[i] = static_cast<int>(i);
  a.modified.assign(n, false);
  return a;
}

// Each context word is switched with probability word_ratio to a uniformly
// chosen translation from a uniformly chosen dictionary that knows it.
inline AugmentedExample code_switch(const Example& ex, std::span<const BilingualDictionary> dictionaries,
                                    double word_ratio, Rng& rng) {
  if (dictionaries.empty()) throw ContractError("code_switch: no dictionaries");
  if (!(word_ratio >= 0 && word_ratio <= 1)) throw ContractError("code_switch: word_ratio outside [0,1]");
  AugmentedExample a = identity_augmentation(ex);
  a.strategy = Strategy::CS;
  const std::size_t q = ex.question.size();
  std::vector<const std::vector<std::string>*> hits;
  for (std::size_t i = 0; i < ex.words.size(); ++i) {
    if (!rng.bernoulli(word_ratio)) continue;
    hits.clear();
    for (const auto& d : dictionaries)
      if (auto t = d.lookup(ex.words[i])) hits.push_back(t);
    if (hits.empty()) continue;
    const auto& choices = *hits[rng.index(hits.size())];
    a.example.words[i] = choices[rng.index(choices.size())];
    a.modified[q + i] = a.example.words[i] != ex.words[i];
  }
  return a;
}

// Same words, per-word sampled segmentation; a word counts as modified when
// its pieces differ from the Viterbi segmentation.
inline AugmentedExample subword_resample(const Example& ex, const UnigramVocab& vocab, double alpha, Rng& rng) {
  if (alpha < 0) throw ContractError("subword_resample: alpha must be >= 0");
  AugmentedExample a = identity_augmentation(ex);
  a.strategy = Strategy::SS;
  const auto words = ex.model_words();
  const auto base = segment_words(vocab, words);
  auto seg = sample_words(vocab, words, alpha, rng);
  for (std::size_t w = 0; w < words.size(); ++w) a.modified[w] = base.pieces_of(w) != seg.pieces_of(w);
  a.segmentation = std::move(seg);
  return a;
}

inline AugmentedExample gaussian_noise(const Example& ex, double sigma) {
  if (sigma < 0) throw ContractError("gaussian_noise: sigma must be >= 0");
  AugmentedExample a = identity_augmentation(ex);
  a.strategy = Strategy::GN;
  a.noise_sigma = sigma;
  return a;
}

struct AugmentReport {
  std::vector<std::string> warnings;
  std::size_t produced = 0;
};

// One augmentation per available target language. Labels survive only for
// classification; token-level payloads cannot be projected without alignment.
inline std::vector<AugmentedExample> translate(const Example& ex, const TranslationStore& store,
                                               std::span<const std::string> target_languages, Task task,
                                               AugmentReport* report = nullptr) {
  std::vector<AugmentedExample> out;
  for (const auto& lang : target_languages) {
    const Translation* t = store.find(ex.id, lang);
    if (!t) {
      if (report) report->warnings.push_back("no translation of '" + ex.id + "' into " + lang);
      continue;
    }
    AugmentedExample a;
    a.strategy = Strategy::MT;
    a.example = ex;
    a.example.id = ex.id + "@" + lang;
    a.example.lang = lang;
    a.example.words = t->words;
    a.example.question = task == Task::span && !t->question.empty() ? t->question : ex.question;
    a.label_available = task == Task::classification;
    if (task == Task::classification) {
      if (t->label && *t->label != ex.label)
        throw ValidationError("translation of '" + ex.id + "' into " + lang + " changes the label");
    } else {
      a.example.tags.assign(a.example.words.size(), 0);
      a.example.answer_start = a.example.answer_end = -1;
    }
    const std::size_t n = ex.question.size() + ex.words.size();
    a.alignment.assign(n, -1);
    a.modified.assign(a.example.question.size() + a.example.words.size(), true);
    out.push_back(std::move(a));
    if (report) ++report->produced;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Strategy validity per task and use.

enum class StrategyUse { R1, R2, corpus };

inline std::string_view use_name(StrategyUse u) {
  switch (u) {
    case StrategyUse::R1: return "R1";
    case StrategyUse::R2: return "R2";
    case StrategyUse::corpus: return "corpus";
  }
  return "?";
}

struct StrategyCheck {
  bool ok = true;
  std::string message;
  std::vector<Strategy> recommended;  // best first
  std::string advice;
};

inline StrategyCheck validate_strategy(Task task, StrategyUse use, Strategy s, bool translations_available = true) {
  StrategyCheck c;
  switch (task) {
    case Task::classification:
      // predictions of translation pairs can always be aligned
      c.recommended = translations_available ? std::vector{Strategy::MT, Strategy::CS, Strategy::SS, Strategy::GN}
                                             : std::vector{Strategy::CS, Strategy::SS, Strategy::GN};
      c.advice = "classification: MT when translations exist, otherwise CS, then SS, then GN";
      break;
    case Task::span:
      if (use == StrategyUse::R1)
        c.recommended = translations_available ? std::vector{Strategy::SS, Strategy::CS, Strategy::GN}
                                               : std::vector{Strategy::CS, Strategy::SS, Strategy::GN};
      else
        c.recommended = translations_available ? std::vector{Strategy::MT, Strategy::SS, Strategy::CS, Strategy::GN}
                                               : std::vector{Strategy::SS, Strategy::CS, Strategy::GN};
      c.advice = "span extraction: CS for R1 alone; SS for R1 when the corpus is augmented with translations";
      break;
    case Task::labeling:
      if (use == StrategyUse::R1)
        c.recommended = {Strategy::SS, Strategy::GN, Strategy::CS};
      else
        c.recommended = translations_available ? std::vector{Strategy::MT, Strategy::SS, Strategy::GN, Strategy::CS}
                                               : std::vector{Strategy::SS, Strategy::GN, Strategy::CS};
      c.advice = "sequence labeling: SS for R1; MT for the corpus when available, otherwise SS";
      break;
  }
  if (use == StrategyUse::R1 && s == Strategy::MT && task != Task::classification) {
    c.ok = false;
    c.message = std::string("MT cannot be used for R1 on ") +
                (task == Task::span ? "span extraction" : "sequence labeling") +
                ": token-level predictions of translation pairs cannot be aligned";
  }
  return c;
}

inline void require_valid_strategy(Task task, StrategyUse use, Strategy s) {
  auto c = validate_strategy(task, use, s);
  if (!c.ok) throw ValidationError(c.message);
}

struct AugmentContext {
  Task task = Task::classification;
  const UnigramVocab* vocab = nullptr;
  std::span<const BilingualDictionary> dictionaries;
  const TranslationStore* store = nullptr;
  std::vector<std::string> store_languages;  // used when the strategy names none
};

// Augmentations of one example: one for SS/GN/CS/none, one per language for MT.
inline std::vector<AugmentedExample> augment_example(const Example& ex, const AugmentationStrategy& st,
                                                     const AugmentContext& ctx, Rng& rng,
                                                     AugmentReport* report = nullptr) {
  switch (st.kind) {
    case Strategy::none: return {identity_augmentation(ex)};
    case Strategy::SS:
      if (!ctx.vocab) throw ContractError("SS augmentation needs a vocabulary");
      return {subword_resample(ex, *ctx.vocab, st.alpha, rng)};
    case Strategy::GN: return {gaussian_noise(ex, st.sigma)};
    case Strategy::CS: return {code_switch(ex, ctx.dictionaries, st.word_ratio, rng)};
    case Strategy::MT: {
      if (!ctx.store) throw ContractError("MT augmentation needs a translation store");
      const auto& langs = st.languages.empty() ? ctx.store_languages : st.languages;
      return translate(ex, *ctx.store, langs, ctx.task, report);
    }
  }
  return {};
}

struct AugmentedCorpus {
  std::vector<AugmentedExample> items;  // originals first, in corpus order
  std::size_t n_original = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (original, augmented) item indices
};

// D_A = D plus one augmentation per original (per language for MT). The
// identity strategy adds nothing, so D_A = D.
inline AugmentedCorpus build_augmented_corpus(const std::vector<Example>& corpus, const AugmentationStrategy& st,
                                              const AugmentContext& ctx, Rng& rng, AugmentReport* report = nullptr) {
  st.validate();
  require_valid_strategy(ctx.task, StrategyUse::corpus, st.kind);
  AugmentedCorpus out;
  out.n_original = corpus.size();
  for (const auto& ex : corpus) out.items.push_back(identity_augmentation(ex));
  if (st.kind == Strategy::none) return out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Rng local = rng.fork(i);
    for (auto& a : augment_example(corpus[i], st, ctx, local, report)) {
      out.pairs.emplace_back(i, out.items.size());
      out.items.push_back(std::move(a));
    }
  }
  return out;
}

}  // namespace xtune
