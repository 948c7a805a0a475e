#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xtune/augment.hpp"
#include "xtune/autodiff.hpp"
#include "xtune/consistency.hpp"
#include "xtune/data.hpp"
#include "xtune/model.hpp"
#include "xtune/rng.hpp"

namespace xtune {

enum class Setting { cross_lingual, translate_train_all };

inline std::string_view setting_name(Setting s) {
  return s == Setting::cross_lingual ? "cross-lingual-transfer" : "translate-train-all";
}

inline Setting parse_setting(std::string_view s) {
  if (s == "cross-lingual-transfer" || s == "cross-lingual" || s == "cross") return Setting::cross_lingual;
  if (s == "translate-train-all" || s == "translate") return Setting::translate_train_all;
  throw ValidationError("unknown setting '" + std::string(s) + "' (cross-lingual-transfer, translate-train-all)");
}

// baseline: plain fine-tuning (plus labeled translations under translate-train-all)
// data-aug: plain fine-tuning on the labeled part of D_A
// r1-only:  one stage, task + R1 with A*
// r2-only:  plain first stage, then task + lambda2 R2 on D_A
// xtune:    both stages
enum class Mode { baseline, data_aug, r1_only, r2_only, xtune };

inline std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::baseline: return "baseline";
    case Mode::data_aug: return "data-aug";
    case Mode::r1_only: return "r1-only";
    case Mode::r2_only: return "r2-only";
    case Mode::xtune: return "xtune";
  }
  return "?";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "baseline") return Mode::baseline;
  if (s == "data-aug") return Mode::data_aug;
  if (s == "r1-only") return Mode::r1_only;
  if (s == "r2-only") return Mode::r2_only;
  if (s == "xtune") return Mode::xtune;
  throw ValidationError("unknown mode '" + std::string(s) + "' (baseline, data-aug, r1-only, r2-only, xtune)");
}

struct TrainConfig {
  Task task = Task::classification;
  Setting setting = Setting::cross_lingual;
  Mode mode = Mode::xtune;
  double lambda1 = 5.0;
  double lambda2 = 5.0;
  double stage1_r1_weight = 1.0;
  Strategy a_star = Strategy::CS;  // stage-1 R1
  Strategy a = Strategy::CS;       // stage-2 corpus
  Strategy a_prime = Strategy::CS; // stage-2 R1
  double lr = 1e-2;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double warmup = 0.1;
  std::uint64_t seed = 1;
  double noise_sigma = 1e-2;
  double word_ratio = 0.3;
  double ss_alpha = 0.2;
  bool warm_start = false;  // stage-2 student starts from the teacher
  bool stopgrad = true;
  SpanPositions span_positions = SpanPositions::unchanged_words;
  std::size_t dim = 16;
  std::size_t max_len = 64;
  Pooling pooling = Pooling::average;

  void validate() const {
    if (!(lambda1 >= 0) || !(lambda2 >= 0) || !(stage1_r1_weight >= 0))
      throw ValidationError("loss weights must be >= 0");
    if (!(warmup >= 0 && warmup < 1)) throw ValidationError("warmup fraction must lie in [0,1)");
    if (!(lr > 0)) throw ValidationError("learning rate must be positive");
    if (batch_size == 0 || epochs == 0) throw ValidationError("batch_size and epochs must be positive");
    if (!(noise_sigma >= 0) || !(ss_alpha >= 0) || !(word_ratio >= 0 && word_ratio <= 1))
      throw ValidationError("augmentation parameters out of range");
  }
};

// ---------------------------------------------------------------------------
// Presets: best hyper-parameters per dataset and setting.

struct Preset {
  std::string dataset;
  Task task;
  Setting setting;
  Strategy a_star, a, a_prime;
  double lambda1, lambda2;
};

inline const std::vector<Preset>& presets() {
  using S = Strategy;
  static const std::vector<Preset> table = {
      {"xnli", Task::classification, Setting::cross_lingual, S::CS, S::CS, S::CS, 5.0, 5.0},
      {"pawsx", Task::classification, Setting::cross_lingual, S::CS, S::CS, S::CS, 5.0, 2.0},
      {"pos", Task::labeling, Setting::cross_lingual, S::SS, S::SS, S::SS, 5.0, 0.3},
      {"ner", Task::labeling, Setting::cross_lingual, S::SS, S::SS, S::SS, 5.0, 5.0},
      {"xquad", Task::span, Setting::cross_lingual, S::CS, S::SS, S::SS, 5.0, 5.0},
      {"mlqa", Task::span, Setting::cross_lingual, S::CS, S::SS, S::SS, 5.0, 5.0},
      {"tydiqa", Task::span, Setting::cross_lingual, S::SS, S::SS, S::SS, 5.0, 5.0},
      {"xnli", Task::classification, Setting::translate_train_all, S::MT, S::MT, S::MT, 5.0, 1.0},
      {"pawsx", Task::classification, Setting::translate_train_all, S::MT, S::MT, S::MT, 5.0, 1.0},
      {"pos", Task::labeling, Setting::translate_train_all, S::SS, S::MT, S::SS, 5.0, 0.3},
      {"ner", Task::labeling, Setting::translate_train_all, S::SS, S::MT, S::SS, 5.0, 1.0},
      {"xquad", Task::span, Setting::translate_train_all, S::CS, S::MT, S::SS, 5.0, 0.1},
      {"mlqa", Task::span, Setting::translate_train_all, S::CS, S::MT, S::SS, 5.0, 0.5},
      {"tydiqa", Task::span, Setting::translate_train_all, S::SS, S::MT, S::SS, 5.0, 0.3},
  };
  return table;
}

inline const Preset& find_preset(std::string_view dataset, Setting setting) {
  for (const auto& p : presets())
    if (p.dataset == dataset && p.setting == setting) return p;
  throw ValidationError("no preset for dataset '" + std::string(dataset) +
                        "' (xnli, pawsx, pos, ner, xquad, mlqa, tydiqa)");
}

// One line per preset, weights with at least one decimal:
// "xnli cross-lingual-transfer task=classification A*=CS A=CS A'=CS lambda1=5.0 lambda2=5.0"
inline std::string preset_line(const Preset& p) {
  auto num = [](double v) {
    std::string s = format_double(v);
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
  };
  return p.dataset + " " + std::string(setting_name(p.setting)) + " task=" + std::string(task_name(p.task)) +
         " A*=" + std::string(strategy_name(p.a_star)) + " A=" + std::string(strategy_name(p.a)) +
         " A'=" + std::string(strategy_name(p.a_prime)) + " lambda1=" + num(p.lambda1) + " lambda2=" + num(p.lambda2);
}

inline void apply_preset(TrainConfig& cfg, const Preset& p) {
  cfg.task = p.task;
  cfg.setting = p.setting;
  cfg.a_star = p.a_star;
  cfg.a = p.a;
  cfg.a_prime = p.a_prime;
  cfg.lambda1 = p.lambda1;
  cfg.lambda2 = p.lambda2;
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

// Linear warmup over warmup_frac*total steps, then linear decay to 0 at
// `total`. Steps are 1-based.
inline double lr_at(std::size_t step, std::size_t total, double base, double warmup_frac) {
  if (total == 0) throw ContractError("lr_at: total steps must be positive");
  const double w = warmup_frac * static_cast<double>(total);
  if (warmup_frac > 0 && w < 1) throw ContractError("lr_at: warmup covers less than one step");
  const double s = static_cast<double>(step);
  if (s <= w) return base * s / w;
  if (s >= static_cast<double>(total)) return 0.0;
  return base * (static_cast<double>(total) - s) / (static_cast<double>(total) - w);
}

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;
};

inline void adam_step(std::span<ad::Tensor> params, AdamState& st, double lr) {
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.numel(), 0.0);
      st.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (st.m.size() != params.size()) throw ContractError("adam_step: state does not match parameters");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto val = params[i].mutable_values();
    auto g = params[i].grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    if (m.size() != val.size()) throw ContractError("adam_step: moment buffer shape mismatch");
    for (std::size_t k = 0; k < val.size(); ++k) {
      m[k] = st.beta1 * m[k] + (1 - st.beta1) * g[k];
      v[k] = st.beta2 * v[k] + (1 - st.beta2) * g[k] * g[k];
      val[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + st.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training

struct TrainInputs {
  const std::vector<Example>* train = nullptr;
  const UnigramVocab* vocab = nullptr;
  std::vector<BilingualDictionary> dictionaries;
  const TranslationStore* store = nullptr;
  std::vector<std::string> target_languages;
};

struct StepLog {
  int stage = 1;
  std::size_t step = 0;
  double lr = 0, task = 0, r1 = 0, r2 = 0, total = 0;
  double w_r1 = 0, w_r2 = 0;
};

struct LabelMaskStats {
  std::size_t labeled_terms = 0;    // items that added a task-loss term
  std::size_t unlabeled_seen = 0;   // items without labels that were forwarded
  std::size_t unlabeled_task_terms = 0;  // must stay 0
};

struct TrainResult {
  std::optional<Model> teacher;
  Model model;
  std::vector<StepLog> trace;
  LabelMaskStats mask;
  std::vector<std::string> warnings;
  std::size_t stage1_items = 0, stage2_items = 0;
};

struct TrainItem {
  AugmentedExample aug;
  Segmentation seg;
  Gold gold;
  std::vector<double> teacher_cache;  // flattened teacher log-probs, filled lazily
};

struct StageSpec {
  int stage = 1;
  double w_r1 = 0.0;
  Strategy r1_strategy = Strategy::none;
  double w_r2 = 0.0;
};

struct BatchTerms {
  ad::Tensor total;
  ad::Tensor task_term;  // mean task loss over labeled items; undefined if none
  double task = 0, r1 = 0, r2 = 0;
  std::size_t labeled = 0;
};

// Everything a batch needs besides the models.
class TrainContext {
 public:
  TrainContext(const TrainInputs& in, const TrainConfig& cfg) : in_(in), cfg_(cfg) {
    if (!in.train || !in.vocab) throw ContractError("training needs a corpus and a vocabulary");
    for (const auto& ex : *in.train) {
      validate_example(ex, cfg.task);
      originals_.emplace(ex.id, &ex);
      if (source_.empty()) source_ = ex.lang;
    }
    aug_.task = cfg.task;
    aug_.vocab = in.vocab;
    aug_.dictionaries = in_.dictionaries;
    aug_.store = in.store;
    aug_.store_languages = in.target_languages;
  }

  const TrainConfig& config() const { return cfg_; }
  const UnigramVocab& vocab() const { return *in_.vocab; }
  const AugmentContext& augment_context() const { return aug_; }

  AugmentationStrategy strategy(Strategy kind) const {
    AugmentationStrategy s;
    s.kind = kind;
    s.alpha = cfg_.ss_alpha;
    s.sigma = cfg_.noise_sigma;
    s.word_ratio = cfg_.word_ratio;
    s.languages = in_.target_languages;
    return s;
  }

  TrainItem make_item(AugmentedExample a) const {
    TrainItem it;
    it.seg = segmentation_of(a, *in_.vocab);
    if (a.label_available) it.gold = gold_for(a.example, it.seg, cfg_.task);
    it.aug = std::move(a);
    return it;
  }

  // A fresh A' view of an item. MT views pair the item with the same
  // sentence in another language (the source sentence included).
  AugmentedExample view(const TrainItem& item, Strategy kind, Rng& rng) const {
    if (kind != Strategy::MT) {
      auto v = augment_example(item.aug.example, strategy(kind), aug_, rng);
      return std::move(v.front());
    }
    const auto& ex = item.aug.example;
    const std::string base = ex.id.substr(0, ex.id.find('@'));
    auto it = originals_.find(base);
    if (it == originals_.end()) throw ContractError("MT view: no original for '" + ex.id + "'");
    std::vector<std::string> langs;
    if (ex.lang != source_) langs.push_back(source_);
    for (const auto& l : in_.target_languages)
      if (l != ex.lang && in_.store && in_.store->find(base, l)) langs.push_back(l);
    if (langs.empty()) return identity_augmentation(ex);
    const auto& lang = langs[rng.index(langs.size())];
    if (lang == source_) {
      auto a = identity_augmentation(*it->second);
      a.strategy = Strategy::MT;
      return a;
    }
    std::vector<std::string> one{lang};
    auto v = translate(*it->second, *in_.store, one, cfg_.task);
    return std::move(v.front());
  }

 private:
  const TrainInputs& in_;
  TrainConfig cfg_;
  AugmentContext aug_;
  std::map<std::string, const Example*> originals_;
  std::string source_;
};

namespace detail {

inline std::vector<double> flatten(const Prediction& p) {
  std::vector<double> out;
  for (const auto& t : p.distributions()) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

inline Prediction unflatten_like(const Prediction& shape, const std::vector<double>& flat) {
  Prediction p;
  p.task = shape.task;
  std::size_t off = 0;
  auto take = [&](const ad::Tensor& t) {
    std::vector<double> v(flat.begin() + static_cast<std::ptrdiff_t>(off),
                          flat.begin() + static_cast<std::ptrdiff_t>(off + t.numel()));
    off += t.numel();
    return ad::Tensor::from(t.shape(), std::move(v));
  };
  switch (shape.task) {
    case Task::classification: p.cls = take(shape.cls); break;
    case Task::span:
      p.start = take(shape.start);
      p.end = take(shape.end);
      break;
    case Task::labeling: p.labels = take(shape.labels); break;
  }
  return p;
}

}  // namespace detail

// Loss of one batch. Task loss is averaged over labeled items only; R1 and R2
// are averaged over every item. Terms with zero weight are not built.
inline BatchTerms batch_loss(const Model& student, const Model* teacher, std::span<TrainItem* const> items,
                             const StageSpec& spec, const TrainContext& ctx, Rng& sampling,
                             LabelMaskStats* mask = nullptr) {
  const auto& cfg = ctx.config();
  const std::size_t dim = student.config().dim;
  ad::Tensor task_sum, r1_sum, r2_sum;
  BatchTerms bt;
  auto accumulate = [](ad::Tensor& acc, const ad::Tensor& t) { acc = acc.defined() ? ad::add(acc, t) : t; };
  for (TrainItem* item : items) {
    std::vector<double> eps;
    if (item->aug.noise_sigma > 0) eps = draw_noise(item->seg.size() * dim, item->aug.noise_sigma, sampling);
    Prediction pred = predict(student, item->seg, eps);
    if (item->aug.label_available) {
      accumulate(task_sum, task_loss(pred, item->gold));
      ++bt.labeled;
      if (mask) ++mask->labeled_terms;
    } else if (mask) {
      ++mask->unlabeled_seen;
    }
    if (spec.w_r1 > 0) {
      AugmentedExample v = ctx.view(*item, spec.r1_strategy, sampling);
      Segmentation vs = segmentation_of(v, ctx.vocab());
      std::vector<double> veps;
      if (v.noise_sigma > 0) veps = draw_noise(vs.size() * dim, v.noise_sigma, sampling);
      Prediction vp = predict(student, vs, veps);
      if (cfg.task == Task::span) {
        SpanAlignment al = v.strategy == Strategy::MT ? SpanAlignment{}
                                                      : span_alignment(item->seg, vs, v.alignment, v.modified,
                                                                       cfg.span_positions);
        accumulate(r1_sum, r1_from_predictions(pred, vp, &al, cfg.stopgrad));
      } else {
        accumulate(r1_sum, r1_from_predictions(pred, vp, nullptr, cfg.stopgrad));
      }
    }
    if (spec.w_r2 > 0) {
      if (!teacher) throw ContractError("R2 needs a teacher model");
      Prediction tp;
      if (!eps.empty()) {
        tp = predict(*teacher, item->seg, eps);
      } else {
        if (item->teacher_cache.empty()) item->teacher_cache = detail::flatten(predict(*teacher, item->seg));
        tp = detail::unflatten_like(pred, item->teacher_cache);
      }
      accumulate(r2_sum, r2_from_predictions(tp, pred));
    }
  }
  const double n = static_cast<double>(items.size());
  ad::Tensor total;
  if (task_sum.defined()) {
    total = ad::scale(task_sum, 1.0 / static_cast<double>(bt.labeled));
    bt.task_term = total;
    bt.task = total.item();
  }
  auto add_term = [&](const ad::Tensor& sum, double w, double& out) {
    if (!sum.defined()) return;
    auto mean = ad::scale(sum, 1.0 / n);
    out = mean.item();
    auto weighted = ad::scale(mean, w);
    total = total.defined() ? ad::add(total, weighted) : weighted;
  };
  add_term(r1_sum, spec.w_r1, bt.r1);
  add_term(r2_sum, spec.w_r2, bt.r2);
  if (!total.defined()) total = ad::Tensor::scalar(0.0);
  bt.total = total;
  return bt;
}

inline std::size_t total_steps(std::size_t n_items, const TrainConfig& cfg) {
  return cfg.epochs * ((n_items + cfg.batch_size - 1) / cfg.batch_size);
}

// One optimisation stage over `items`. Data order comes from the batching
// stream, views and noise from the sampling stream.
inline void train_stage(Model& model, const Model* teacher, std::vector<TrainItem>& items, const StageSpec& spec,
                        const TrainContext& ctx, TrainResult& result) {
  const auto& cfg = ctx.config();
  if (items.empty()) throw ContractError("train_stage: empty corpus");
  Rng batching = Rng::substream(cfg.seed, "batching");
  Rng sampling = Rng::substream(cfg.seed, spec.stage == 1 ? "sampling" : "sampling-2");
  const std::size_t total = total_steps(items.size(), cfg);
  AdamState opt;
  auto params = model.params();
  std::vector<std::size_t> order(items.size());
  std::size_t step = 0;
  std::vector<TrainItem*> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), batching.engine());
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) batch.push_back(&items[order[k]]);
      ad::zero_grad(params);
      BatchTerms bt = batch_loss(model, teacher, batch, spec, ctx, sampling, &result.mask);
      ++step;
      StepLog log{spec.stage, step, lr_at(step, total, cfg.lr, cfg.warmup), bt.task, bt.r1, bt.r2,
                  bt.total.item(), spec.w_r1, spec.w_r2};
      if (!std::isfinite(log.total))
        throw NumericError("non-finite loss at stage " + std::to_string(spec.stage) + " step " +
                           std::to_string(step) + " (task " + format_double(bt.task) + ", R1 " +
                           format_double(bt.r1) + ", R2 " + format_double(bt.r2) + ")");
      ad::backward(bt.total);
      for (const auto& p : params)
        for (double g : p.grad())
          if (!std::isfinite(g))
            throw NumericError("non-finite gradient at stage " + std::to_string(spec.stage) + " step " +
                               std::to_string(step));
      adam_step(params, opt, log.lr);
      result.trace.push_back(log);
    }
  }
}

inline Model fresh_model(const TrainConfig& cfg, const UnigramVocab& vocab, std::size_t n_label) {
  ModelConfig mc;
  mc.task = cfg.task;
  mc.vocab_size = vocab.size();
  mc.dim = cfg.dim;
  mc.max_len = cfg.max_len;
  mc.n_label = n_label;
  mc.pooling = cfg.pooling;
  Rng init = Rng::substream(cfg.seed, "init");
  return Model(mc, init);
}

inline std::size_t corpus_label_count(const std::vector<Example>& corpus, Task task) {
  if (task == Task::span) return 2;
  std::size_t n = 0;
  for (const auto& ex : corpus) n = std::max(n, ex.n_label);
  return n;
}

inline void check_strategies(const TrainConfig& cfg, bool has_store, bool has_dicts) {
  auto uses_mt = [&](Strategy s) { return s == Strategy::MT; };
  auto need = [&](Strategy s, StrategyUse use) {
    require_valid_strategy(cfg.task, use, s);
    if (uses_mt(s) && cfg.setting == Setting::cross_lingual)
      throw ValidationError("MT augmentation needs the translate-train-all setting");
    if (uses_mt(s) && !has_store) throw ValidationError("MT augmentation needs a translation store");
    if (s == Strategy::CS && !has_dicts) throw ValidationError("CS augmentation needs bilingual dictionaries");
  };
  switch (cfg.mode) {
    case Mode::baseline: break;
    case Mode::data_aug: need(cfg.a, StrategyUse::corpus); break;
    case Mode::r1_only: need(cfg.a_star, StrategyUse::R1); break;
    case Mode::r2_only:
      need(cfg.a, StrategyUse::corpus);
      break;
    case Mode::xtune:
      need(cfg.a_star, StrategyUse::R1);
      need(cfg.a, StrategyUse::corpus);
      need(cfg.a_prime, StrategyUse::R1);
      break;
  }
  if (cfg.setting == Setting::translate_train_all && !has_store)
    throw ValidationError("translate-train-all needs a translation store");
}

inline std::vector<TrainItem> make_items(const TrainContext& ctx, const AugmentedCorpus& corpus,
                                         bool labeled_only) {
  std::vector<TrainItem> items;
  for (const auto& a : corpus.items) {
    if (labeled_only && !a.label_available) continue;
    items.push_back(ctx.make_item(a));
  }
  return items;
}

// Stage 1 (teacher) then stage 2 (student) as the mode requires.
inline TrainResult xtune_train(const TrainInputs& in, const TrainConfig& cfg) {
  cfg.validate();
  check_strategies(cfg, in.store != nullptr, !in.dictionaries.empty());
  TrainContext ctx(in, cfg);
  TrainResult result;
  const auto& train = *in.train;
  if (train.empty()) throw ContractError("training corpus is empty");
  const std::size_t n_label = corpus_label_count(train, cfg.task);
  const bool translate = cfg.setting == Setting::translate_train_all;

  Rng aug_rng = Rng::substream(cfg.seed, "augmentation");
  AugmentReport report;
  auto build = [&](Strategy kind) {
    return build_augmented_corpus(train, ctx.strategy(kind), ctx.augment_context(), aug_rng, &report);
  };
  // D, or D plus its translations under translate-train-all
  auto base_corpus = [&]() { return build(translate ? Strategy::MT : Strategy::none); };

  Model model = fresh_model(cfg, *in.vocab, n_label);
  std::vector<TrainItem> stage1;
  StageSpec s1{1, 0.0, Strategy::none, 0.0};
  switch (cfg.mode) {
    case Mode::baseline: stage1 = make_items(ctx, base_corpus(), true); break;
    case Mode::data_aug: stage1 = make_items(ctx, build(cfg.a), true); break;
    case Mode::r1_only:
      stage1 = make_items(ctx, base_corpus(), false);
      s1.w_r1 = cfg.stage1_r1_weight;
      s1.r1_strategy = cfg.a_star;
      break;
    case Mode::r2_only: stage1 = make_items(ctx, build(Strategy::none), true); break;
    case Mode::xtune:
      stage1 = make_items(ctx, build(Strategy::none), true);
      s1.w_r1 = cfg.stage1_r1_weight;
      s1.r1_strategy = cfg.a_star;
      break;
  }
  result.stage1_items = stage1.size();
  train_stage(model, nullptr, stage1, s1, ctx, result);

  if (cfg.mode == Mode::r2_only || cfg.mode == Mode::xtune) {
    Model teacher = std::move(model);
    model = cfg.warm_start ? teacher : fresh_model(cfg, *in.vocab, n_label);
    std::vector<TrainItem> stage2 = make_items(ctx, build(cfg.a), false);
    result.stage2_items = stage2.size();
    StageSpec s2{2, cfg.mode == Mode::xtune ? cfg.lambda1 : 0.0, cfg.a_prime, cfg.lambda2};
    train_stage(model, &teacher, stage2, s2, ctx, result);
    result.teacher = std::move(teacher);
  }
  result.model = std::move(model);
  result.warnings = std::move(report.warnings);
  return result;
}

}  // namespace xtune
