#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xtune/error.hpp"
#include "xtune/rng.hpp"
#include "xtune/text_io.hpp"

namespace xtune {

enum class Task { classification, span, labeling };

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::classification: return "classification";
    case Task::span: return "span";
    case Task::labeling: return "labeling";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  if (s == "classification") return Task::classification;
  if (s == "span") return Task::span;
  if (s == "labeling") return Task::labeling;
  throw ValidationError("unknown task '" + std::string(s) + "' (classification, span, labeling)");
}

// One task instance. For span extraction `words` is the context and the
// answer indices point into it; the model reads question ++ context.
struct Example {
  std::string id;
  std::string lang;
  std::vector<std::string> words;
  std::vector<std::string> question;
  int label = -1;
  std::size_t n_label = 0;  // classes (classification) or tag set size (labeling)
  int answer_start = -1;
  int answer_end = -1;
  std::vector<int> tags;

  std::size_t question_size() const { return question.size(); }

  std::vector<std::string> model_words() const {
    std::vector<std::string> out = question;
    out.insert(out.end(), words.begin(), words.end());
    return out;
  }
};

inline void validate_example(const Example& ex, Task task) {
  const std::string where = "example '" + ex.id + "'";
  if (ex.words.empty()) throw ValidationError(where + ": no words");
  for (const auto& w : ex.words)
    if (w.empty()) throw ValidationError(where + ": empty word");
  switch (task) {
    case Task::classification:
      if (ex.n_label == 0) throw ValidationError(where + ": n_label must be positive");
      if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= ex.n_label)
        throw ValidationError(where + ": label " + std::to_string(ex.label) + " outside [0," +
                              std::to_string(ex.n_label) + ")");
      break;
    case Task::span:
      if (ex.answer_start < 0 || ex.answer_end < ex.answer_start ||
          static_cast<std::size_t>(ex.answer_end) >= ex.words.size())
        throw ValidationError(where + ": answer [" + std::to_string(ex.answer_start) + "," +
                              std::to_string(ex.answer_end) + "] outside context of " +
                              std::to_string(ex.words.size()) + " words");
      break;
    case Task::labeling:
      if (ex.tags.size() != ex.words.size())
        throw ValidationError(where + ": " + std::to_string(ex.tags.size()) + " tags for " +
                              std::to_string(ex.words.size()) + " words");
      if (ex.n_label == 0) throw ValidationError(where + ": n_label must be positive");
      for (int t : ex.tags)
        if (t < 0 || static_cast<std::size_t>(t) >= ex.n_label)
          throw ValidationError(where + ": tag " + std::to_string(t) + " outside [0," +
                                std::to_string(ex.n_label) + ")");
      break;
  }
}

// ---------------------------------------------------------------------------
// JSON lines

inline nlohmann::json example_to_json(const Example& ex, Task task) {
  nlohmann::json j;
  j["id"] = ex.id;
  j["lang"] = ex.lang;
  j["words"] = ex.words;
  switch (task) {
    case Task::classification:
      j["label"] = ex.label;
      j["n_label"] = ex.n_label;
      break;
    case Task::span:
      j["question"] = ex.question;
      j["answer_start"] = ex.answer_start;
      j["answer_end"] = ex.answer_end;
      break;
    case Task::labeling:
      j["tags"] = ex.tags;
      j["n_label"] = ex.n_label;
      break;
  }
  return j;
}

namespace detail {

inline std::vector<std::string> string_list(const nlohmann::json& j, const char* key, bool required) {
  if (!j.contains(key)) {
    if (required) throw ValidationError(std::string("missing field '") + key + "'");
    return {};
  }
  const auto& v = j.at(key);
  if (!v.is_array()) throw ValidationError(std::string("field '") + key + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ValidationError(std::string("field '") + key + "' must be an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

inline long long integer(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw ValidationError(std::string("field '") + key + "' must be an integer");
  return v.get<long long>();
}

inline std::string string_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string())
    throw ValidationError(std::string("missing string field '") + key + "'");
  return j.at(key).get<std::string>();
}

}  // namespace detail

inline Example example_from_json(const nlohmann::json& j, Task task) {
  if (!j.is_object()) throw ValidationError("line is not a JSON object");
  Example ex;
  ex.id = detail::string_field(j, "id");
  ex.lang = detail::string_field(j, "lang");
  ex.words = detail::string_list(j, "words", true);
  switch (task) {
    case Task::classification:
      ex.label = static_cast<int>(detail::integer(j, "label"));
      ex.n_label = static_cast<std::size_t>(std::max(0LL, detail::integer(j, "n_label")));
      break;
    case Task::span:
      ex.question = detail::string_list(j, "question", false);
      ex.answer_start = static_cast<int>(detail::integer(j, "answer_start"));
      ex.answer_end = static_cast<int>(detail::integer(j, "answer_end"));
      break;
    case Task::labeling: {
      if (!j.contains("tags") || !j.at("tags").is_array()) throw ValidationError("missing field 'tags'");
      for (const auto& t : j.at("tags")) {
        if (!t.is_number_integer()) throw ValidationError("field 'tags' must hold integers");
        ex.tags.push_back(t.get<int>());
      }
      ex.n_label = static_cast<std::size_t>(std::max(0LL, detail::integer(j, "n_label")));
      break;
    }
  }
  validate_example(ex, task);
  return ex;
}

inline std::vector<Example> parse_jsonl(std::istream& in, const std::string& source, Task task,
                                        std::vector<std::string>* warnings = nullptr) {
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line), task));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, lineno, std::string("invalid JSON: ") + e.what());
    } catch (const ValidationError& e) {
      throw ParseError(source, lineno, e.what());
    }
  }
  if (out.empty() && warnings) warnings->push_back(source + ": no examples");
  return out;
}

inline std::vector<Example> load_jsonl(const std::string& path, Task task,
                                       std::vector<std::string>* warnings = nullptr) {
  auto in = open_input(path);
  return parse_jsonl(in, path, task, warnings);
}

inline void write_jsonl(std::ostream& out, const std::vector<Example>& corpus, Task task) {
  for (const auto& ex : corpus) out << example_to_json(ex, task).dump() << '\n';
}

inline void save_jsonl(const std::string& path, const std::vector<Example>& corpus, Task task) {
  auto out = open_output(path);
  write_jsonl(out, corpus, task);
}

// ---------------------------------------------------------------------------
// Bilingual dictionaries and translation stores

// Keys are compared after ASCII lower-casing; translations are stored as given.
class BilingualDictionary {
 public:
  BilingualDictionary() = default;
  BilingualDictionary(std::string src, std::string tgt) : src_(std::move(src)), tgt_(std::move(tgt)) {}

  static std::string normalize(std::string_view w) {
    std::string out(w);
    for (char& c : out)
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
  }

  void add(std::string_view word, std::string translation) {
    if (translation.empty()) return;
    auto& list = entries_[normalize(word)];
    if (std::find(list.begin(), list.end(), translation) == list.end()) list.push_back(std::move(translation));
  }

  const std::vector<std::string>* lookup(std::string_view word) const {
    auto it = entries_.find(normalize(word));
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t pair_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : entries_) n += v.size();
    return n;
  }
  bool empty() const { return entries_.empty(); }
  const std::string& src() const { return src_; }
  const std::string& tgt() const { return tgt_; }
  const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

  BilingualDictionary inverted() const {
    BilingualDictionary inv(tgt_, src_);
    for (const auto& [w, ts] : entries_)
      for (const auto& t : ts) inv.add(t, w);
    return inv;
  }

 private:
  std::string src_, tgt_;
  std::map<std::string, std::vector<std::string>> entries_;
};

// Two whitespace-separated columns per line; tabs and spaces both work.
inline BilingualDictionary parse_dictionary(std::istream& in, const std::string& source, std::string src_lang,
                                            std::string tgt_lang, std::vector<std::string>* warnings = nullptr) {
  BilingualDictionary dict(std::move(src_lang), std::move(tgt_lang));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto cols = split_whitespace(line);
    if (cols.empty()) continue;
    if (cols.size() != 2)
      throw ParseError(source, lineno, "expected 'source target', got " + std::to_string(cols.size()) + " columns");
    dict.add(cols[0], cols[1]);
  }
  if (warnings) {
    if (dict.empty()) warnings->push_back(source + ": empty dictionary");
    else
      warnings->push_back(source + ": " + std::to_string(dict.size()) + " words, " +
                          std::to_string(dict.pair_count()) + " pairs");
  }
  return dict;
}

inline BilingualDictionary load_dictionary(const std::string& path, std::string src_lang, std::string tgt_lang,
                                           std::vector<std::string>* warnings = nullptr) {
  auto in = open_input(path);
  return parse_dictionary(in, path, std::move(src_lang), std::move(tgt_lang), warnings);
}

inline void save_dictionary(const std::string& path, const BilingualDictionary& dict) {
  auto out = open_output(path);
  for (const auto& [w, ts] : dict.entries())
    for (const auto& t : ts) out << w << '\t' << t << '\n';
}

struct Translation {
  std::vector<std::string> words;
  std::vector<std::string> question;
  std::optional<int> label;
};

class TranslationStore {
 public:
  void add(const std::string& example_id, const std::string& lang, Translation t) {
    entries_[{example_id, lang}] = std::move(t);
  }

  const Translation* find(const std::string& example_id, const std::string& lang) const {
    auto it = entries_.find({example_id, lang});
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return entries_.size(); }
  const std::map<std::pair<std::string, std::string>, Translation>& entries() const { return entries_; }

 private:
  std::map<std::pair<std::string, std::string>, Translation> entries_;
};

inline TranslationStore parse_translations(std::istream& in, const std::string& source) {
  TranslationStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Translation t;
      t.words = detail::string_list(j, "words", true);
      t.question = detail::string_list(j, "question", false);
      if (j.contains("label") && !j.at("label").is_null()) t.label = static_cast<int>(detail::integer(j, "label"));
      store.add(detail::string_field(j, "example_id"), detail::string_field(j, "lang"), std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, lineno, std::string("invalid JSON: ") + e.what());
    } catch (const ValidationError& e) {
      throw ParseError(source, lineno, e.what());
    }
  }
  return store;
}

inline TranslationStore load_translations(const std::string& path) {
  auto in = open_input(path);
  return parse_translations(in, path);
}

inline void save_translations(const std::string& path, const TranslationStore& store) {
  auto out = open_output(path);
  for (const auto& [key, t] : store.entries()) {
    nlohmann::json j;
    j["example_id"] = key.first;
    j["lang"] = key.second;
    j["words"] = t.words;
    if (!t.question.empty()) j["question"] = t.question;
    if (t.label) j["label"] = *t.label;
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic cipher benchmark
//
// Lemma k is written "w{k}" in the source language and "w{k}§{L}" in
// language L. Gold payloads are computed from lemmas only, so a sentence and
// its rendering in any language carry the same labels.

inline constexpr std::string_view kCipherMark = "\xC2\xA7";  // §

enum class ClassRule { polarity, even_parity };

inline ClassRule parse_class_rule(std::string_view s) {
  if (s == "polarity") return ClassRule::polarity;
  if (s == "even_parity") return ClassRule::even_parity;
  throw ValidationError("unknown classification rule '" + std::string(s) + "' (polarity, even_parity)");
}

inline std::string_view class_rule_name(ClassRule r) {
  return r == ClassRule::polarity ? "polarity" : "even_parity";
}

struct SyntheticSpec {
  Task task = Task::classification;
  std::size_t n_lemmas = 60;
  std::vector<std::string> languages{"en", "xx", "yy"};  // first is the source
  std::size_t train_examples = 500;
  std::size_t test_examples = 200;       // per language, parallel across languages
  std::size_t unlabeled_per_language = 300;  // raw sentences for vocabulary building
  std::size_t min_len = 4;
  std::size_t max_len = 8;
  std::size_t n_tags = 4;
  ClassRule rule = ClassRule::polarity;
  std::uint64_t seed = 1;
};

inline std::string cipher_surface(std::size_t lemma, const std::string& lang, const std::string& source_lang) {
  std::string w = "w" + std::to_string(lemma);
  if (lang != source_lang) w += std::string(kCipherMark) + lang;
  return w;
}

// Sum of lemma polarities: k%3==0 -> +1, k%3==1 -> -1, otherwise 0.
inline int lemma_polarity(std::size_t k) { return k % 3 == 0 ? 1 : (k % 3 == 1 ? -1 : 0); }

inline int classify_lemmas(const std::vector<std::size_t>& lemmas, ClassRule rule) {
  if (rule == ClassRule::even_parity) {
    std::size_t n = 0;
    for (auto k : lemmas) n += k % 2 == 0;
    return static_cast<int>(n % 2);
  }
  int s = 0;
  for (auto k : lemmas) s += lemma_polarity(k);
  return s > 0 ? 1 : 0;
}

inline int lemma_tag(std::size_t k, std::size_t n_tags) { return static_cast<int>(k % n_tags); }

// Span roles: lemma 0 is the question word; k%4==1 opens an answer, k%4==2
// closes it; the rest are filler.
enum class SpanRole { question, begin, end, filler };

inline SpanRole span_role(std::size_t k) {
  if (k == 0) return SpanRole::question;
  if (k % 4 == 1) return SpanRole::begin;
  if (k % 4 == 2) return SpanRole::end;
  return SpanRole::filler;
}

struct LemmaExample {
  std::string id;
  std::vector<std::size_t> lemmas;
  std::vector<std::size_t> question;
  int label = -1;
  std::size_t n_label = 0;
  int answer_start = -1, answer_end = -1;
  std::vector<int> tags;
};

struct SyntheticCorpus {
  Task task = Task::classification;
  std::string source;
  std::vector<std::string> languages;
  std::vector<Example> train;                        // source language, labeled
  std::map<std::string, std::vector<Example>> test;  // every language, parallel
  std::vector<BilingualDictionary> dictionaries;     // source -> each target
  TranslationStore translations;                     // every train example in every target
  std::vector<std::string> unlabeled;                // raw lines, all languages
};

namespace detail {

inline std::size_t pick_lemma(Rng& rng, std::size_t n_lemmas, Task task, bool filler_only) {
  for (;;) {
    std::size_t k = rng.index(n_lemmas);
    if (task != Task::span) return k;
    if (span_role(k) == SpanRole::question) continue;
    if (filler_only && span_role(k) != SpanRole::filler) continue;
    return k;
  }
}

inline LemmaExample draw_lemma_example(const SyntheticSpec& spec, Rng& rng, std::string id) {
  LemmaExample le;
  le.id = std::move(id);
  const std::size_t len = spec.min_len + rng.index(spec.max_len - spec.min_len + 1);
  switch (spec.task) {
    case Task::classification:
      le.n_label = 2;
      for (;;) {
        le.lemmas.clear();
        for (std::size_t i = 0; i < len; ++i) le.lemmas.push_back(pick_lemma(rng, spec.n_lemmas, spec.task, false));
        if (spec.rule == ClassRule::polarity) {
          int s = 0;
          for (auto k : le.lemmas) s += lemma_polarity(k);
          if (s == 0) continue;  // keep the rule unambiguous
        }
        break;
      }
      le.label = classify_lemmas(le.lemmas, spec.rule);
      break;
    case Task::labeling:
      le.n_label = spec.n_tags;
      for (std::size_t i = 0; i < len; ++i) {
        le.lemmas.push_back(pick_lemma(rng, spec.n_lemmas, spec.task, false));
        le.tags.push_back(lemma_tag(le.lemmas.back(), spec.n_tags));
      }
      break;
    case Task::span: {
      // filler context with one begin [filler] end run inserted
      const std::size_t answer_len = 2 + rng.index(2);
      const std::size_t ctx = std::max(len, answer_len + 1);
      const std::size_t start = rng.index(ctx - answer_len + 1);
      for (std::size_t i = 0; i < ctx; ++i) le.lemmas.push_back(pick_lemma(rng, spec.n_lemmas, spec.task, true));
      auto draw_role = [&](SpanRole r) {
        for (;;) {
          std::size_t k = 1 + rng.index(spec.n_lemmas - 1);
          if (span_role(k) == r) return k;
        }
      };
      le.lemmas[start] = draw_role(SpanRole::begin);
      le.lemmas[start + answer_len - 1] = draw_role(SpanRole::end);
      le.answer_start = static_cast<int>(start);
      le.answer_end = static_cast<int>(start + answer_len - 1);
      le.question = {0};
      break;
    }
  }
  return le;
}

inline Example render(const LemmaExample& le, const std::string& lang, const std::string& source) {
  Example ex;
  ex.id = le.id;
  ex.lang = lang;
  for (auto k : le.lemmas) ex.words.push_back(cipher_surface(k, lang, source));
  for (auto k : le.question) ex.question.push_back(cipher_surface(k, lang, source));
  ex.label = le.label;
  ex.n_label = le.n_label;
  ex.answer_start = le.answer_start;
  ex.answer_end = le.answer_end;
  ex.tags = le.tags;
  return ex;
}

}  // namespace detail

inline SyntheticCorpus generate_cipher_corpus(const SyntheticSpec& spec) {
  if (spec.languages.size() < 2) throw ContractError("synthetic corpus needs a source and at least one target language");
  if (spec.n_lemmas < 8) throw ContractError("synthetic corpus needs at least 8 lemmas");
  if (spec.min_len == 0 || spec.max_len < spec.min_len) throw ContractError("bad sentence length range");
  if (spec.task == Task::labeling && spec.n_tags == 0) throw ContractError("n_tags must be positive");
  std::set<std::string> unique(spec.languages.begin(), spec.languages.end());
  if (unique.size() != spec.languages.size()) throw ContractError("duplicate language in synthetic spec");

  SyntheticCorpus c;
  c.task = spec.task;
  c.source = spec.languages.front();
  c.languages = spec.languages;
  Rng train_rng = Rng::substream(spec.seed, "synth-train");
  Rng test_rng = Rng::substream(spec.seed, "synth-test");
  Rng raw_rng = Rng::substream(spec.seed, "synth-unlabeled");

  for (std::size_t i = 0; i < spec.train_examples; ++i) {
    auto le = detail::draw_lemma_example(spec, train_rng, "train-" + std::to_string(i));
    c.train.push_back(detail::render(le, c.source, c.source));
    for (std::size_t l = 1; l < spec.languages.size(); ++l) {
      auto t = detail::render(le, spec.languages[l], c.source);
      Translation tr{t.words, t.question, std::nullopt};
      if (spec.task == Task::classification) tr.label = t.label;
      c.translations.add(le.id, spec.languages[l], std::move(tr));
    }
  }
  for (std::size_t i = 0; i < spec.test_examples; ++i) {
    auto le = detail::draw_lemma_example(spec, test_rng, "test-" + std::to_string(i));
    for (const auto& lang : spec.languages) c.test[lang].push_back(detail::render(le, lang, c.source));
  }
  for (const auto& lang : spec.languages) {
    for (std::size_t i = 0; i < spec.unlabeled_per_language; ++i) {
      auto le = detail::draw_lemma_example(spec, raw_rng, "raw");
      auto ex = detail::render(le, lang, c.source);
      c.unlabeled.push_back(join(ex.model_words(), " "));
    }
  }
  for (std::size_t l = 1; l < spec.languages.size(); ++l) {
    BilingualDictionary d(c.source, spec.languages[l]);
    for (std::size_t k = 0; k < spec.n_lemmas; ++k)
      d.add(cipher_surface(k, c.source, c.source), cipher_surface(k, spec.languages[l], c.source));
    c.dictionaries.push_back(std::move(d));
  }
  return c;
}

}  // namespace xtune
