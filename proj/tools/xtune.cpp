// xtune command-line tool: synth | tokenize | augment | train | eval | gap | presets

#include <openssl/evp.h>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xtune/augment.hpp"
#include "xtune/config.hpp"
#include "xtune/data.hpp"
#include "xtune/eval.hpp"
#include "xtune/model.hpp"
#include "xtune/synthetic.hpp"
#include "xtune/tokenizer.hpp"
#include "xtune/trainer.hpp"

namespace fs = std::filesystem;
using namespace xtune;

namespace {

std::string read_file(const std::string& path) {
  auto in = open_input(path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
}

std::string sha256_hex(const std::string& path) {
  const std::string data = read_file(path);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed for " + path);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

// "xx=path,yy=path" or repeated "xx=path" flags.
std::map<std::string, std::string> lang_paths(const std::vector<std::string>& items, const std::string& what) {
  std::map<std::string, std::string> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ',')) {
      const auto t = std::string(trim(part));
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == t.size())
        throw ValidationError(what + ": expected LANG=PATH, got '" + t + "'");
      out[t.substr(0, eq)] = t.substr(eq + 1);
    }
  }
  return out;
}

std::string join_lang_paths(const std::map<std::string, std::string>& m) {
  std::vector<std::string> parts;
  for (const auto& [l, p] : m) parts.push_back(l + "=" + p);
  return join(parts, ",");
}

// Data files as written by `synth`.
struct DataPaths {
  std::string train, vocab, translations;
  std::map<std::string, std::string> dictionaries, tests;
};

DataPaths scan_data_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error("data directory " + dir + " does not exist");
  DataPaths d;
  auto p = [&](const std::string& name) { return (fs::path(dir) / name).string(); };
  if (fs::exists(p("train.jsonl"))) d.train = p("train.jsonl");
  if (fs::exists(p("vocab.txt"))) d.vocab = p("vocab.txt");
  if (fs::exists(p("translations.jsonl"))) d.translations = p("translations.jsonl");
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  for (const auto& e : entries) {
    const std::string name = e.filename().string();
    if (name.rfind("test.", 0) == 0 && name.size() > 11 && name.substr(name.size() - 6) == ".jsonl")
      d.tests[name.substr(5, name.size() - 11)] = e.string();
    // dict.<src>-<tgt>.txt
    if (name.rfind("dict.", 0) == 0 && name.size() > 9 && name.substr(name.size() - 4) == ".txt") {
      const std::string pair = name.substr(5, name.size() - 9);
      const auto dash = pair.find('-');
      if (dash != std::string::npos) d.dictionaries[pair.substr(dash + 1)] = e.string();
    }
  }
  return d;
}

std::map<std::string, std::vector<Example>> load_tests(const std::map<std::string, std::string>& paths, Task task,
                                                       std::vector<std::string>& warnings) {
  std::map<std::string, std::vector<Example>> sets;
  for (const auto& [lang, path] : paths) {
    auto data = load_jsonl(path, task, &warnings);
    if (!data.empty()) sets[lang] = std::move(data);
  }
  return sets;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string task = "classification", out, rule = "polarity";
  std::vector<std::string> languages{"en", "xx", "yy"};
  std::size_t train = 500, test = 200, unlabeled = 300, lemmas = 60, tags = 4, vocab_size = kSyntheticVocabSize;
  std::uint64_t seed = 1;
};

void run_synth(const SynthArgs& a) {
  SyntheticSpec spec;
  spec.task = parse_task(a.task);
  spec.languages = a.languages;
  spec.train_examples = a.train;
  spec.test_examples = a.test;
  spec.unlabeled_per_language = a.unlabeled;
  spec.n_lemmas = a.lemmas;
  spec.n_tags = a.tags;
  spec.rule = parse_class_rule(a.rule);
  spec.seed = a.seed;
  const auto bench = make_synthetic_bench(spec, a.vocab_size);
  const auto& c = bench.corpus;
  fs::create_directories(a.out);
  auto p = [&](const std::string& name) { return (fs::path(a.out) / name).string(); };
  save_jsonl(p("train.jsonl"), c.train, c.task);
  for (const auto& [lang, data] : c.test) save_jsonl(p("test." + lang + ".jsonl"), data, c.task);
  for (const auto& d : c.dictionaries) save_dictionary(p("dict." + d.src() + "-" + d.tgt() + ".txt"), d);
  save_translations(p("translations.jsonl"), c.translations);
  {
    auto out = open_output(p("unlabeled.txt"));
    for (const auto& line : c.unlabeled) out << line << '\n';
  }
  save_vocab(p("vocab.txt"), bench.vocab);
  std::cout << "wrote " << c.train.size() << " train examples, " << c.test.size() << " test sets, "
            << c.dictionaries.size() << " dictionaries, " << c.translations.size() << " translations, vocab of "
            << bench.vocab.size() << " pieces to " << a.out << '\n';
}

// ---------------------------------------------------------------------------
// tokenize

struct TokenizeArgs {
  std::string vocab, input = "-", build_vocab;
  std::optional<double> alpha;
  std::uint64_t seed = 1;
  std::size_t size = 256;
  bool ids = false;
};

void run_tokenize(const TokenizeArgs& a) {
  std::vector<std::string> lines;
  {
    std::ifstream file;
    std::istream* in = &std::cin;
    if (a.input != "-") {
      file = open_input(a.input);
      in = &file;
    }
    std::string line;
    while (std::getline(*in, line)) lines.push_back(line);
  }
  if (!a.build_vocab.empty()) {
    VocabBuildOptions opt;
    opt.target_size = a.size;
    VocabBuildReport report;
    auto v = build_vocab(lines, opt, &report);
    save_vocab(a.build_vocab, v);
    std::cerr << "vocabulary of " << v.size() << " pieces written to " << a.build_vocab << '\n';
    return;
  }
  if (a.vocab.empty()) throw ValidationError("tokenize needs --vocab (or --build-vocab)");
  const auto vocab = load_vocab(a.vocab);
  Rng rng = Rng::substream(a.seed, "sampling");
  for (const auto& line : lines) {
    const auto words = split_whitespace(line);
    if (words.empty()) {
      std::cout << '\n';
      continue;
    }
    const auto seg = a.alpha ? sample_words(vocab, words, *a.alpha, rng) : segment_words(vocab, words);
    std::vector<std::string> out;
    for (auto id : seg.ids) out.push_back(a.ids ? std::to_string(id) : vocab.piece(id));
    std::cout << join(out, " ") << '\n';
  }
}

// ---------------------------------------------------------------------------
// augment

struct AugmentArgs {
  std::string task = "classification", strategy, data, train, vocab, translations, out = "-";
  std::vector<std::string> dicts;
  std::uint64_t seed = 1;
  double alpha = 0.2, sigma = 1e-2, word_ratio = 0.3;
};

void run_augment(const AugmentArgs& a) {
  const Task task = parse_task(a.task);
  DataPaths d;
  if (!a.data.empty()) d = scan_data_dir(a.data);
  if (!a.train.empty()) d.train = a.train;
  if (!a.vocab.empty()) d.vocab = a.vocab;
  if (!a.translations.empty()) d.translations = a.translations;
  for (const auto& [l, p] : lang_paths(a.dicts, "--dict")) d.dictionaries[l] = p;
  if (d.train.empty()) throw ValidationError("augment needs a training corpus (--train or --data)");

  std::vector<std::string> warnings;
  const auto train = load_jsonl(d.train, task, &warnings);
  if (train.empty()) throw ValidationError(d.train + ": no examples to augment");
  const std::string source = train.front().lang;
  std::optional<UnigramVocab> vocab;
  if (!d.vocab.empty()) vocab = load_vocab(d.vocab);
  std::vector<BilingualDictionary> dicts;
  for (const auto& [l, p] : d.dictionaries) dicts.push_back(load_dictionary(p, source, l, &warnings));
  std::optional<TranslationStore> store;
  if (!d.translations.empty()) store = load_translations(d.translations);

  AugmentationStrategy st;
  st.kind = parse_strategy(a.strategy);
  st.alpha = a.alpha;
  st.sigma = a.sigma;
  st.word_ratio = a.word_ratio;
  const auto check = validate_strategy(task, StrategyUse::corpus, st.kind, store.has_value());
  if (st.kind == Strategy::CS && dicts.empty()) throw ValidationError("CS augmentation needs bilingual dictionaries");
  if (st.kind == Strategy::SS && !vocab) throw ValidationError("SS augmentation needs --vocab");
  if (st.kind == Strategy::MT && !store) throw ValidationError("MT augmentation needs --translations");
  if (!check.recommended.empty() && check.recommended.front() != st.kind)
    warnings.push_back("note: " + check.advice);

  AugmentContext ctx;
  ctx.task = task;
  ctx.vocab = vocab ? &*vocab : nullptr;
  ctx.dictionaries = dicts;
  ctx.store = store ? &*store : nullptr;
  for (const auto& [l, p] : d.dictionaries) ctx.store_languages.push_back(l);
  if (store) {
    std::vector<std::string> langs;
    for (const auto& [key, t] : store->entries())
      if (std::find(langs.begin(), langs.end(), key.second) == langs.end()) langs.push_back(key.second);
    ctx.store_languages = langs;
  }
  Rng rng = Rng::substream(a.seed, "augmentation");
  AugmentReport report;
  const auto corpus = build_augmented_corpus(train, st, ctx, rng, &report);

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (a.out != "-") {
    file = open_output(a.out);
    out = &file;
  }
  std::vector<int> origin(corpus.items.size(), -1);
  for (std::size_t i = 0; i < corpus.n_original; ++i) origin[i] = static_cast<int>(i);
  for (const auto& [o, k] : corpus.pairs) origin[k] = static_cast<int>(o);
  for (std::size_t i = 0; i < corpus.items.size(); ++i) {
    const auto& it = corpus.items[i];
    nlohmann::ordered_json j;
    j["original"] = origin[i];
    j["strategy"] = std::string(strategy_name(it.strategy));
    j["label_available"] = it.label_available;
    auto ex = example_to_json(it.example, task);
    if (!it.label_available) {
      for (const char* k : {"label", "tags", "answer_start", "answer_end"}) ex.erase(k);
    }
    j["example"] = ex;
    j["alignment"] = it.alignment;
    j["modified"] = it.modified;
    if (it.segmentation && vocab) {
      std::vector<std::string> pieces;
      for (auto id : it.segmentation->ids) pieces.push_back(vocab->piece(id));
      j["pieces"] = pieces;
    }
    if (it.noise_sigma > 0) j["noise_sigma"] = it.noise_sigma;
    *out << j.dump() << '\n';
  }
  for (const auto& w : warnings) std::cerr << w << '\n';
  for (const auto& w : report.warnings) std::cerr << w << '\n';
  std::cerr << corpus.items.size() << " items (" << corpus.n_original << " original)\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config, data, train, vocab, translations, out, preset, mode;
  std::vector<std::string> dicts, tests, sets;
  std::optional<std::uint64_t> seed;
};

// Keys a config file may hold besides the TrainConfig fields.
const std::vector<std::string> kPathKeys = {"preset", "data", "train", "vocab", "translations", "dictionaries", "tests"};

void run_train(const TrainArgs& a) {
  std::map<std::string, std::string> file_paths;
  std::vector<ConfigEntry> entries;
  if (!a.config.empty()) entries = load_config(a.config);
  for (const auto& e : entries)
    if (std::find(kPathKeys.begin(), kPathKeys.end(), e.key) != kPathKeys.end()) file_paths[e.key] = e.value;

  TrainConfig cfg;
  // preset first, then file values, then flags
  const std::string preset = !a.preset.empty() ? a.preset : file_paths["preset"];
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& e : entries)
    if (!file_paths.count(e.key)) overrides.emplace_back(e.key, e.value);
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
    overrides.emplace_back(std::string(trim(s.substr(0, eq))), std::string(trim(s.substr(eq + 1))));
  }
  if (!a.mode.empty()) overrides.emplace_back("mode", a.mode);
  if (a.seed) overrides.emplace_back("seed", std::to_string(*a.seed));
  if (!preset.empty()) {
    Setting setting = cfg.setting;
    for (const auto& [k, v] : overrides)
      if (k == "setting") setting = parse_setting(v);
    apply_preset(cfg, find_preset(preset, setting));
  }
  for (const auto& [k, v] : overrides)
    if (!apply_config_value(cfg, k, v))
      throw ValidationError("unknown config key '" + k + "' (keys: " + join(config_keys(), ", ") + ", " +
                            join(kPathKeys, ", ") + ")");
  cfg.validate();

  DataPaths d;
  const std::string data_dir = !a.data.empty() ? a.data : file_paths["data"];
  if (!data_dir.empty()) d = scan_data_dir(data_dir);
  auto pick = [&](std::string& slot, const std::string& flag, const std::string& key) {
    if (!flag.empty()) slot = flag;
    else if (!file_paths[key].empty()) slot = file_paths[key];
  };
  pick(d.train, a.train, "train");
  pick(d.vocab, a.vocab, "vocab");
  pick(d.translations, a.translations, "translations");
  for (const auto& [l, p] : lang_paths({file_paths["dictionaries"]}, "dictionaries")) d.dictionaries[l] = p;
  for (const auto& [l, p] : lang_paths(a.dicts, "--dict")) d.dictionaries[l] = p;
  for (const auto& [l, p] : lang_paths({file_paths["tests"]}, "tests")) d.tests[l] = p;
  for (const auto& [l, p] : lang_paths(a.tests, "--test")) d.tests[l] = p;
  if (d.train.empty()) throw ValidationError("train needs a training corpus (--train, --data or 'train =')");
  if (d.vocab.empty()) throw ValidationError("train needs a vocabulary (--vocab, --data or 'vocab =')");
  if (a.out.empty()) throw ValidationError("train needs --out");
  // MT is only read under translate-train-all
  if (cfg.setting == Setting::cross_lingual) d.translations.clear();

  std::vector<std::string> warnings;
  const auto train = load_jsonl(d.train, cfg.task, &warnings);
  if (train.empty()) throw ValidationError(d.train + ": no training examples");
  const std::string source = train.front().lang;
  const auto vocab = load_vocab(d.vocab);
  std::optional<TranslationStore> store;
  if (!d.translations.empty()) store = load_translations(d.translations);

  TrainInputs in;
  in.train = &train;
  in.vocab = &vocab;
  in.store = store ? &*store : nullptr;
  std::vector<InputDigest> digests{{"train", d.train, sha256_hex(d.train)}, {"vocab", d.vocab, sha256_hex(d.vocab)}};
  for (const auto& [l, p] : d.dictionaries) {
    in.dictionaries.push_back(load_dictionary(p, source, l, &warnings));
    in.target_languages.push_back(l);
    digests.push_back({"dict." + l, p, sha256_hex(p)});
  }
  if (store) {
    digests.push_back({"translations", d.translations, sha256_hex(d.translations)});
    for (const auto& [key, t] : store->entries())
      if (std::find(in.target_languages.begin(), in.target_languages.end(), key.second) == in.target_languages.end())
        in.target_languages.push_back(key.second);
    std::sort(in.target_languages.begin(), in.target_languages.end());
  }
  for (const auto& [l, p] : d.tests) digests.push_back({"test." + l, p, sha256_hex(p)});

  auto result = xtune_train(in, cfg);

  fs::create_directories(a.out);
  auto p = [&](const std::string& name) { return (fs::path(a.out) / name).string(); };
  save_checkpoint(p("model.ckpt"), result.model);
  if (result.teacher) save_checkpoint(p("teacher.ckpt"), *result.teacher);

  std::optional<nlohmann::json> metrics;
  if (!d.tests.empty()) {
    const auto sets = load_tests(d.tests, cfg.task, warnings);
    const auto report = evaluate_languages(result.model, vocab, sets, source);
    metrics = report_json(report);
    write_file(p("metrics.json"), metrics->dump(2) + "\n");
    std::cout << report_table(report);
  }
  result.warnings.insert(result.warnings.begin(), warnings.begin(), warnings.end());
  auto manifest = run_manifest(cfg, result, digests, metrics ? &*metrics : nullptr);
  write_file(p("manifest.json"), manifest.dump(2) + "\n");

  // Resolved config that reruns this exact job.
  std::string cfg_text = config_text(cfg);
  if (!d.train.empty()) cfg_text += "train = " + d.train + "\n";
  cfg_text += "vocab = " + d.vocab + "\n";
  if (!d.translations.empty()) cfg_text += "translations = " + d.translations + "\n";
  if (!d.dictionaries.empty()) cfg_text += "dictionaries = " + join_lang_paths(d.dictionaries) + "\n";
  if (!d.tests.empty()) cfg_text += "tests = " + join_lang_paths(d.tests) + "\n";
  write_file(p("run.cfg"), cfg_text);

  for (const auto& w : result.warnings) std::cerr << w << '\n';
  const auto& last = result.trace.back();
  std::cout << mode_name(cfg.mode) << ": " << result.stage1_items << " stage-1 items, " << result.stage2_items
            << " stage-2 items, " << result.trace.size() << " steps, final loss " << format_double(last.total)
            << "; wrote " << a.out << '\n';
}

// ---------------------------------------------------------------------------
// eval / gap

struct EvalArgs {
  std::string checkpoint, vocab, data, json, source;
  std::vector<std::string> tests;
};

void run_eval(const EvalArgs& a) {
  DataPaths d;
  if (!a.data.empty()) d = scan_data_dir(a.data);
  if (!a.vocab.empty()) d.vocab = a.vocab;
  for (const auto& [l, p] : lang_paths(a.tests, "--test")) d.tests[l] = p;
  if (d.vocab.empty()) throw ValidationError("eval needs --vocab or --data");
  if (d.tests.empty()) throw ValidationError("eval needs test sets (--test LANG=PATH or --data)");
  const Model m = load_checkpoint(a.checkpoint);
  const auto vocab = load_vocab(d.vocab);
  if (vocab.size() != m.config().vocab_size)
    throw ValidationError("vocabulary has " + std::to_string(vocab.size()) + " pieces, checkpoint expects " +
                          std::to_string(m.config().vocab_size));
  std::vector<std::string> warnings;
  const auto sets = load_tests(d.tests, m.config().task, warnings);
  for (const auto& w : warnings) std::cerr << w << '\n';
  std::string source = a.source;
  if (source.empty()) {
    if (!d.train.empty()) {
      auto train = load_jsonl(d.train, m.config().task);
      if (!train.empty()) source = train.front().lang;
    }
    if (source.empty()) source = "en";
  }
  const auto report = evaluate_languages(m, vocab, sets, source);
  std::cout << report_table(report);
  if (!a.json.empty()) write_file(a.json, report_json(report).dump(2) + "\n");
}

struct GapArgs {
  std::string report, source;
  std::vector<std::string> scores;
};

void run_gap(const GapArgs& a) {
  std::map<std::string, double> scores;
  std::string source = a.source;
  if (!a.report.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(a.report));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(a.report, 0, e.what());
    }
    if (j.contains("metrics")) j = j["metrics"];
    if (!j.contains("languages") || !j["languages"].is_object())
      throw ValidationError(a.report + ": no per-language scores");
    for (const auto& [lang, e] : j["languages"].items()) scores[lang] = e.at("score").get<double>();
    if (source.empty() && j.contains("source")) source = j["source"].get<std::string>();
  }
  for (const auto& s : a.scores) {
    const auto eq = s.find('=');
    const auto v = eq == std::string::npos ? std::nullopt : parse_double(s.substr(eq + 1));
    if (!v) throw ValidationError("--score expects LANG=NUMBER, got '" + s + "'");
    scores[s.substr(0, eq)] = *v;
  }
  if (source.empty()) source = "en";
  const double gap = transfer_gap(scores, source);
  nlohmann::ordered_json out;
  out["source"] = source;
  out["gap"] = gap;
  out["scores"] = scores;
  std::cout << "transfer gap " << format_double(gap) << " (source " << source << ")\n" << out.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xtune: two-stage consistency fine-tuning on small cross-lingual benchmarks"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "write a synthetic cipher benchmark");
  synth->add_option("--task", sa.task, "classification | span | labeling")->capture_default_str();
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--languages", sa.languages, "languages, source first")->delimiter(',')->capture_default_str();
  synth->add_option("--train", sa.train, "training examples")->capture_default_str();
  synth->add_option("--test", sa.test, "test examples per language")->capture_default_str();
  synth->add_option("--unlabeled", sa.unlabeled, "raw sentences per language")->capture_default_str();
  synth->add_option("--lemmas", sa.lemmas, "lemma inventory size")->capture_default_str();
  synth->add_option("--tags", sa.tags, "tag set size (labeling)")->capture_default_str();
  synth->add_option("--rule", sa.rule, "classification rule: polarity | even_parity")->capture_default_str();
  synth->add_option("--vocab-size", sa.vocab_size, "subword vocabulary size")->capture_default_str();
  synth->add_option("--seed", sa.seed, "generator seed")->capture_default_str();

  TokenizeArgs ta;
  auto* tok = app.add_subcommand("tokenize", "segment text with a unigram vocabulary, or build one");
  tok->add_option("--vocab", ta.vocab, "vocabulary file");
  tok->add_option("--input", ta.input, "text file, one sentence per line ('-' for stdin)")->capture_default_str();
  tok->add_option("--alpha", ta.alpha, "sample segmentations with this smoothing instead of Viterbi");
  tok->add_option("--seed", ta.seed, "sampling seed")->capture_default_str();
  tok->add_flag("--ids", ta.ids, "print piece ids");
  tok->add_option("--build-vocab", ta.build_vocab, "build a vocabulary from the input and write it here");
  tok->add_option("--size", ta.size, "target vocabulary size for --build-vocab")->capture_default_str();

  AugmentArgs aa;
  auto* aug = app.add_subcommand("augment", "materialize an augmented corpus (JSON lines)");
  aug->add_option("--task", aa.task, "classification | span | labeling")->capture_default_str();
  aug->add_option("--strategy", aa.strategy, "SS | GN | CS | MT | none")->required();
  aug->add_option("--data", aa.data, "directory written by synth");
  aug->add_option("--train", aa.train, "training corpus");
  aug->add_option("--vocab", aa.vocab, "vocabulary (SS)");
  aug->add_option("--dict", aa.dicts, "LANG=PATH bilingual dictionary (CS)");
  aug->add_option("--translations", aa.translations, "translation store (MT)");
  aug->add_option("--alpha", aa.alpha, "SS smoothing")->capture_default_str();
  aug->add_option("--sigma", aa.sigma, "GN standard deviation")->capture_default_str();
  aug->add_option("--word-ratio", aa.word_ratio, "CS replacement ratio")->capture_default_str();
  aug->add_option("--seed", aa.seed, "seed")->capture_default_str();
  aug->add_option("--out", aa.out, "output file ('-' for stdout)")->capture_default_str();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "fine-tune (baseline, data-aug, r1-only, r2-only, xtune)");
  train->add_option("--config", tr.config, "key = value config file");
  train->add_option("--preset", tr.preset, "start from a dataset preset (xnli, pawsx, pos, ner, xquad, mlqa, tydiqa)");
  train->add_option("--mode", tr.mode, "baseline | data-aug | r1-only | r2-only | xtune");
  train->add_option("--seed", tr.seed, "run seed");
  train->add_option("--set", tr.sets, "override a config key (key=value)");
  train->add_option("--data", tr.data, "directory written by synth");
  train->add_option("--train", tr.train, "training corpus");
  train->add_option("--vocab", tr.vocab, "vocabulary");
  train->add_option("--dict", tr.dicts, "LANG=PATH bilingual dictionary");
  train->add_option("--translations", tr.translations, "translation store");
  train->add_option("--test", tr.tests, "LANG=PATH test set, evaluated after training");
  train->add_option("--out", tr.out, "output directory")->required();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score a checkpoint per language");
  eval->add_option("--checkpoint", ea.checkpoint, "model checkpoint")->required();
  eval->add_option("--data", ea.data, "directory written by synth");
  eval->add_option("--vocab", ea.vocab, "vocabulary");
  eval->add_option("--test", ea.tests, "LANG=PATH test set");
  eval->add_option("--source", ea.source, "source language (default: training language, else en)");
  eval->add_option("--json", ea.json, "write the report as JSON");

  GapArgs ga;
  auto* gap = app.add_subcommand("gap", "transfer gap from an eval report or explicit scores");
  gap->add_option("--report", ga.report, "metrics.json, eval --json output or manifest.json");
  gap->add_option("--score", ga.scores, "LANG=SCORE");
  gap->add_option("--source", ga.source, "source language");

  std::string p_dataset, p_setting;
  auto* pre = app.add_subcommand("presets", "print tuned strategies and weights per dataset");
  pre->add_option("dataset", p_dataset, "xnli, pawsx, pos, ner, xquad, mlqa, tydiqa (all when omitted)");
  pre->add_option("setting", p_setting, "cross-lingual-transfer | translate-train-all (both when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) run_synth(sa);
    else if (*tok) run_tokenize(ta);
    else if (*aug) run_augment(aa);
    else if (*train) run_train(tr);
    else if (*eval) run_eval(ea);
    else if (*gap) run_gap(ga);
    else if (*pre) {
      std::optional<Setting> setting;
      if (!p_setting.empty()) setting = parse_setting(p_setting);
      if (!p_dataset.empty()) find_preset(p_dataset, setting.value_or(Setting::cross_lingual));
      for (const auto& p : presets())
        if ((p_dataset.empty() || p.dataset == p_dataset) && (!setting || p.setting == *setting))
          std::cout << preset_line(p) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
