#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "xtune/autodiff.hpp"
#include "xtune/data.hpp"
#include "xtune/error.hpp"
#include "xtune/rng.hpp"
#include "xtune/text_io.hpp"
#include "xtune/tokenizer.hpp"

namespace xtune {

enum class Pooling { first_subword, average };

inline std::string_view pooling_name(Pooling p) { return p == Pooling::average ? "average" : "first_subword"; }

inline Pooling parse_pooling(std::string_view s) {
  if (s == "average") return Pooling::average;
  if (s == "first_subword" || s == "first") return Pooling::first_subword;
  throw ValidationError("unknown pooling '" + std::string(s) + "' (first_subword, average)");
}

struct ModelConfig {
  Task task = Task::classification;
  std::size_t vocab_size = 0;
  std::size_t dim = 16;
  std::size_t max_len = 64;
  std::size_t n_label = 2;  // classes or tags; unused by the span head
  Pooling pooling = Pooling::average;

  bool operator==(const ModelConfig&) const = default;

  std::size_t head_width() const { return task == Task::span ? 2 : n_label; }
};

// Token + position embeddings, one tanh mixing layer, and a task head.
// Copies are deep: a copied model never shares buffers with the original.
class Model {
 public:
  ad::Tensor embed, pos, mix_w, mix_b, head_w, head_b;

  Model() = default;

  Model(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.vocab_size == 0 || cfg.dim == 0 || cfg.max_len == 0 || cfg.head_width() == 0)
      throw ContractError("model: vocab_size, dim, max_len and n_label must be positive");
    auto normal = [&](ad::Shape shape) {
      std::vector<double> v(ad::numel(shape));
      for (double& x : v) x = rng.normal(0.0, 0.02);
      return ad::Tensor::from(std::move(shape), std::move(v));
    };
    embed = normal({cfg.vocab_size, cfg.dim});
    pos = normal({cfg.max_len, cfg.dim});
    mix_w = normal({cfg.dim, cfg.dim});
    mix_b = ad::Tensor::zeros({cfg.dim});
    head_w = normal({cfg.dim, cfg.head_width()});
    head_b = ad::Tensor::zeros({cfg.head_width()});
  }

  Model(const Model& o) : cfg_(o.cfg_) { copy_from(o); }
  Model& operator=(const Model& o) {
    if (this != &o) {
      cfg_ = o.cfg_;
      copy_from(o);
    }
    return *this;
  }
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }

  std::vector<ad::Tensor> params() const { return {embed, pos, mix_w, mix_b, head_w, head_b}; }

  static std::vector<std::string> param_names() { return {"embed", "pos", "mix_w", "mix_b", "head_w", "head_b"}; }

  bool same_values(const Model& o) const {
    if (!(cfg_ == o.cfg_)) return false;
    auto a = params(), b = o.params();
    for (std::size_t i = 0; i < a.size(); ++i) {
      auto va = a[i].values(), vb = b[i].values();
      if (!std::equal(va.begin(), va.end(), vb.begin(), vb.end())) return false;
    }
    return true;
  }

 private:
  static ad::Tensor clone(const ad::Tensor& t) {
    if (!t.defined()) return t;
    return ad::Tensor::from(t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
  }

  void copy_from(const Model& o) {
    embed = clone(o.embed);
    pos = clone(o.pos);
    mix_w = clone(o.mix_w);
    mix_b = clone(o.mix_b);
    head_w = clone(o.head_w);
    head_b = clone(o.head_b);
  }

  ModelConfig cfg_;
};

inline void require_same_architecture(const Model& a, const Model& b) {
  if (!(a.config() == b.config()))
    throw ContractError("model architectures differ (task/vocab/dim/max_len/labels/pooling)");
}

inline std::vector<double> draw_noise(std::size_t n, double sigma, Rng& rng) {
  std::vector<double> eps(n);
  for (double& e : eps) e = rng.normal(0.0, sigma);
  return eps;
}

// E[ids] + P[0..n) + eps, the input of the mixing layer. `noise` is empty
// or n*d values.
inline ad::Tensor embed_inputs(const Model& m, const Segmentation& seg, std::span<const double> noise = {}) {
  const auto& cfg = m.config();
  const std::size_t n = seg.size();
  if (n == 0) throw ContractError("encode: empty segmentation");
  if (n > cfg.max_len)
    throw ContractError("encode: " + std::to_string(n) + " subwords exceed max_len " + std::to_string(cfg.max_len));
  std::vector<std::size_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = i;
  ad::Tensor x = ad::add(ad::embedding_lookup(m.embed, seg.ids), ad::embedding_lookup(m.pos, positions));
  if (!noise.empty()) {
    if (noise.size() != n * cfg.dim) throw ShapeError("encode: noise buffer has wrong size");
    x = ad::add(x, ad::Tensor::from({n, cfg.dim}, std::vector<double>(noise.begin(), noise.end())));
  }
  return x;
}

// H = tanh((E[ids] + P[0..n) + eps) W + b)
inline ad::Tensor encode(const Model& m, const Segmentation& seg, std::span<const double> noise = {}) {
  return ad::tanh(ad::add_rowwise(ad::matmul(embed_inputs(m, seg, noise), m.mix_w), m.mix_b));
}

inline ad::Tensor encode(const Model& m, const Segmentation& seg, double noise_sigma, Rng& rng) {
  if (noise_sigma < 0) throw ContractError("encode: noise_sigma must be >= 0");
  if (noise_sigma == 0) return encode(m, seg);
  const auto eps = draw_noise(seg.size() * m.config().dim, noise_sigma, rng);
  return encode(m, seg, eps);
}

struct Prediction {
  Task task = Task::classification;
  ad::Tensor cls;     // [n_label]
  ad::Tensor start;   // [n_subword]
  ad::Tensor end;     // [n_subword]
  ad::Tensor labels;  // [n_word, n_label]

  std::vector<ad::Tensor> distributions() const {
    switch (task) {
      case Task::classification: return {cls};
      case Task::span: return {start, end};
      case Task::labeling: return {labels};
    }
    return {};
  }
};

inline Prediction predict_from_hidden(const Model& m, const ad::Tensor& h, const Segmentation& seg,
                                      std::optional<Pooling> pooling = std::nullopt) {
  const auto& cfg = m.config();
  if (pooling && cfg.task != Task::labeling) throw ContractError("predict: pooling applies to sequence labeling only");
  Prediction p;
  p.task = cfg.task;
  switch (cfg.task) {
    case Task::classification: {
      auto pooled = ad::reshape(ad::mean_rows(h), {1, cfg.dim});
      auto logits = ad::add(ad::reshape(ad::matmul(pooled, m.head_w), {cfg.n_label}), m.head_b);
      p.cls = ad::log_softmax(logits, 0);
      break;
    }
    case Task::span: {
      const std::size_t n = seg.size();
      auto scores = ad::add_rowwise(ad::matmul(h, m.head_w), m.head_b);  // [n,2]
      std::vector<std::size_t> s_off(n), e_off(n);
      for (std::size_t i = 0; i < n; ++i) {
        s_off[i] = 2 * i;
        e_off[i] = 2 * i + 1;
      }
      p.start = ad::log_softmax(ad::select(scores, s_off), 0);
      p.end = ad::log_softmax(ad::select(scores, e_off), 0);
      break;
    }
    case Task::labeling: {
      const Pooling mode = pooling.value_or(cfg.pooling);
      ad::Tensor words = mode == Pooling::average ? ad::pool_rows(h, seg.word_groups())
                                                  : ad::embedding_lookup(h, seg.first_positions());
      p.labels = ad::log_softmax(ad::add_rowwise(ad::matmul(words, m.head_w), m.head_b), 1);
      break;
    }
  }
  return p;
}

inline Prediction predict(const Model& m, const Segmentation& seg, std::span<const double> noise = {},
                          std::optional<Pooling> pooling = std::nullopt) {
  return predict_from_hidden(m, encode(m, seg, noise), seg, pooling);
}

struct Gold {
  int label = -1;
  std::size_t start = 0, end = 0;  // subword positions
  std::vector<int> tags;
};

// Span gold: first subword of the start word, last subword of the end word,
// both offset past the question.
inline Gold gold_for(const Example& ex, const Segmentation& seg, Task task) {
  Gold g;
  switch (task) {
    case Task::classification: g.label = ex.label; break;
    case Task::span: {
      const std::size_t q = ex.question_size();
      const auto sw = seg.positions_of(q + static_cast<std::size_t>(ex.answer_start));
      const auto ew = seg.positions_of(q + static_cast<std::size_t>(ex.answer_end));
      if (sw.empty() || ew.empty()) throw ContractError("gold_for: answer word missing from segmentation");
      g.start = sw.front();
      g.end = ew.back();
      break;
    }
    case Task::labeling: g.tags = ex.tags; break;
  }
  return g;
}

// Negative log-likelihood: classification NLL, span NLL(start)+NLL(end),
// labeling mean per-word NLL.
inline ad::Tensor task_loss(const Prediction& p, const Gold& g) {
  switch (p.task) {
    case Task::classification: {
      if (g.label < 0 || static_cast<std::size_t>(g.label) >= p.cls.numel())
        throw ContractError("task_loss: label " + std::to_string(g.label) + " out of range");
      std::vector<std::size_t> off{static_cast<std::size_t>(g.label)};
      return ad::neg(ad::sum(ad::select(p.cls, off)));
    }
    case Task::span: {
      const std::size_t n = p.start.numel();
      if (g.start >= n || g.end >= n)
        throw ContractError("task_loss: span gold [" + std::to_string(g.start) + "," + std::to_string(g.end) +
                            "] outside " + std::to_string(n) + " positions");
      std::vector<std::size_t> s{g.start}, e{g.end};
      return ad::neg(ad::add(ad::sum(ad::select(p.start, s)), ad::sum(ad::select(p.end, e))));
    }
    case Task::labeling: {
      const std::size_t rows = p.labels.dim(0), cols = p.labels.dim(1);
      if (g.tags.size() != rows)
        throw ContractError("task_loss: " + std::to_string(g.tags.size()) + " tags for " + std::to_string(rows) +
                            " words");
      std::vector<std::size_t> off(rows);
      for (std::size_t i = 0; i < rows; ++i) {
        if (g.tags[i] < 0 || static_cast<std::size_t>(g.tags[i]) >= cols)
          throw ContractError("task_loss: tag " + std::to_string(g.tags[i]) + " out of range");
        off[i] = i * cols + static_cast<std::size_t>(g.tags[i]);
      }
      return ad::neg(ad::mean(ad::select(p.labels, off)));
    }
  }
  throw ContractError("task_loss: unknown task");
}

// ---------------------------------------------------------------------------
// Checkpoints: a versioned plain-text dump.
//
//   xtune-checkpoint 1
//   task <name> vocab_size <V> dim <d> max_len <L> n_label <k> pooling <p>
//   tensor <name> <rows> <cols>
//   <values, space separated, shortest round-trip decimal>
//   ...
//   end

inline constexpr int kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& out, const Model& m) {
  const auto& c = m.config();
  out << "xtune-checkpoint " << kCheckpointVersion << '\n';
  out << "task " << task_name(c.task) << " vocab_size " << c.vocab_size << " dim " << c.dim << " max_len "
      << c.max_len << " n_label " << c.n_label << " pooling " << pooling_name(c.pooling) << '\n';
  const auto names = Model::param_names();
  const auto ps = m.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& t = ps[i];
    const std::size_t rows = t.rank() == 2 ? t.dim(0) : 1;
    const std::size_t cols = t.rank() == 2 ? t.dim(1) : t.dim(0);
    out << "tensor " << names[i] << ' ' << rows << ' ' << cols << '\n';
    auto v = t.values();
    for (std::size_t k = 0; k < v.size(); ++k) out << (k ? " " : "") << format_double(v[k]);
    out << '\n';
  }
  out << "end\n";
}

inline std::string checkpoint_text(const Model& m) {
  std::ostringstream os;
  write_checkpoint(os, m);
  return os.str();
}

inline void save_checkpoint(const std::string& path, const Model& m) {
  auto out = open_output(path);
  write_checkpoint(out, m);
}

inline Model read_checkpoint(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() {
    if (!std::getline(in, line)) throw ParseError(source, lineno + 1, "unexpected end of checkpoint");
    ++lineno;
    return split_whitespace(line);
  };
  auto head = next();
  if (head.size() != 2 || head[0] != "xtune-checkpoint") throw ParseError(source, lineno, "not a checkpoint");
  if (head[1] != std::to_string(kCheckpointVersion))
    throw ParseError(source, lineno, "unsupported checkpoint version " + head[1]);
  auto cfgl = next();
  if (cfgl.size() != 12) throw ParseError(source, lineno, "malformed config line");
  ModelConfig cfg;
  auto num = [&](const std::string& s) {
    auto v = parse_double(s);
    if (!v || *v < 0 || *v != static_cast<double>(static_cast<std::size_t>(*v)))
      throw ParseError(source, lineno, "bad integer '" + s + "'");
    return static_cast<std::size_t>(*v);
  };
  try {
    cfg.task = parse_task(cfgl[1]);
    cfg.pooling = parse_pooling(cfgl[11]);
  } catch (const ValidationError& e) {
    throw ParseError(source, lineno, e.what());
  }
  cfg.vocab_size = num(cfgl[3]);
  cfg.dim = num(cfgl[5]);
  cfg.max_len = num(cfgl[7]);
  cfg.n_label = num(cfgl[9]);
  Rng dummy(0);
  Model m(cfg, dummy);
  auto ps = m.params();
  const auto names = Model::param_names();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto th = next();
    if (th.size() != 4 || th[0] != "tensor" || th[1] != names[i])
      throw ParseError(source, lineno, "expected tensor " + names[i]);
    const std::size_t rows = num(th[2]), cols = num(th[3]);
    if (rows * cols != ps[i].numel())
      throw ParseError(source, lineno, "tensor " + names[i] + " has " + std::to_string(rows * cols) +
                                           " values, architecture needs " + std::to_string(ps[i].numel()));
    auto vals = next();
    if (vals.size() != ps[i].numel()) throw ParseError(source, lineno, "wrong value count for " + names[i]);
    auto dst = ps[i].mutable_values();
    for (std::size_t k = 0; k < vals.size(); ++k) {
      auto v = parse_double(vals[k]);
      if (!v || !std::isfinite(*v)) throw ParseError(source, lineno, "bad value '" + vals[k] + "'");
      dst[k] = *v;
    }
  }
  auto tail = next();
  if (tail.size() != 1 || tail[0] != "end") throw ParseError(source, lineno, "missing end marker");
  return m;
}

inline Model load_checkpoint(const std::string& path) {
  auto in = open_input(path);
  return read_checkpoint(in, path);
}

}  // namespace xtune
