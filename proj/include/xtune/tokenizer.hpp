#pragma once

// Unigram language-model subword tokenizer.
//
// A vocabulary assigns each piece a log-probability (nats). The probability
// of a segmentation is the product of its piece probabilities. Viterbi picks
// the most probable segmentation; sampling draws a segmentation s with
// probability P(s)^alpha / sum_s' P(s')^alpha by forward-filtering
// backward-sampling over the segmentation lattice.
//
// Word-level entry points prepend the vocabulary's word-boundary marker to
// every word and segment words independently, so each piece belongs to
// exactly one source word.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xtune/error.hpp"
#include "xtune/rng.hpp"
#include "xtune/text_io.hpp"

namespace xtune {

inline constexpr std::string_view kWordMarker = "\xE2\x96\x81";  // U+2581

namespace detail {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double mx = std::max(a, b);
  return mx + std::log(std::exp(a - mx) + std::exp(b - mx));
}

}  // namespace detail

class UnigramVocab {
 public:
  struct Entry {
    std::string piece;
    double log_prob;
    std::size_t chars;
  };

  UnigramVocab() = default;

  UnigramVocab(std::vector<std::pair<std::string, double>> pieces,
               std::string marker = std::string(kWordMarker))
      : marker_(std::move(marker)) {
    for (auto& [piece, lp] : pieces) {
      if (index_.count(piece)) throw ValidationError("duplicate piece '" + piece + "'");
      const std::size_t n = utf8_chars(piece).size();
      index_.emplace(piece, entries_.size());
      entries_.push_back({std::move(piece), lp, n});
      max_len_ = std::max(max_len_, n);
    }
    validate();
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  const std::string& piece(std::size_t id) const { return entries_.at(id).piece; }
  double log_prob(std::size_t id) const { return entries_.at(id).log_prob; }
  std::size_t max_piece_len() const { return max_len_; }
  const std::string& marker() const { return marker_; }

  std::optional<std::size_t> find(std::string_view piece) const {
    auto it = index_.find(std::string(piece));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  void validate() const {
    if (entries_.empty()) throw ValidationError("vocabulary is empty (no character coverage)");
    for (const auto& e : entries_) {
      if (e.piece.empty()) throw ValidationError("empty piece");
      if (!std::isfinite(e.log_prob) || e.log_prob > 0.0) {
        throw ValidationError("piece '" + e.piece + "' has invalid log-probability " +
                              format_double(e.log_prob));
      }
      for (auto ch : utf8_chars(e.piece)) {
        if (!index_.count(std::string(ch))) {
          throw ValidationError("character '" + std::string(ch) + "' of piece '" + e.piece +
                                "' has no single-character piece");
        }
      }
    }
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t max_len_ = 0;
  std::string marker_;
};

// Pieces in order, the source word each piece came from, and whether the
// piece starts its word. Pieces of a word are contiguous.
struct Segmentation {
  std::vector<std::size_t> ids;
  std::vector<std::size_t> word_of;
  std::vector<bool> first;
  std::size_t n_words = 0;
  bool marked = false;  // word-boundary marker was prepended to each word

  std::size_t size() const { return ids.size(); }

  std::vector<std::size_t> first_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (first[i]) out.push_back(i);
    return out;
  }

  // Subword positions of every word.
  std::vector<std::vector<std::size_t>> word_groups() const {
    std::vector<std::vector<std::size_t>> out(n_words);
    for (std::size_t i = 0; i < ids.size(); ++i) out[word_of[i]].push_back(i);
    return out;
  }

  std::vector<std::size_t> positions_of(std::size_t word) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (word_of[i] == word) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> pieces_of(std::size_t word) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (word_of[i] == word) out.push_back(ids[i]);
    return out;
  }

  void append_word(std::span<const std::size_t> pieces) {
    for (std::size_t k = 0; k < pieces.size(); ++k) {
      ids.push_back(pieces[k]);
      word_of.push_back(n_words);
      first.push_back(k == 0);
    }
    ++n_words;
  }
};

// Segmentation lattice over the code points of one string.
struct Lattice {
  std::size_t n = 0;
  // ending_at[j] lists (start, piece id) for every piece spanning [start, j).
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> ending_at;

  Lattice(const UnigramVocab& vocab, std::string_view text) {
    const auto chars = utf8_chars(text);
    n = chars.size();
    if (n == 0) throw ContractError("cannot segment empty text");
    ending_at.resize(n + 1);
    std::string buf;
    for (std::size_t i = 0; i < n; ++i) {
      if (!vocab.find(chars[i])) {
        throw CoverageError("character '" + std::string(chars[i]) + "' in '" + std::string(text) +
                            "' is not covered by the vocabulary");
      }
      buf.clear();
      for (std::size_t len = 1; len <= vocab.max_piece_len() && i + len <= n; ++len) {
        buf += chars[i + len - 1];
        if (auto id = vocab.find(buf)) ending_at[i + len].emplace_back(i, *id);
      }
    }
  }

  // log of sum over paths of exp(alpha * sum of piece log-probs), per prefix.
  std::vector<double> forward(const UnigramVocab& vocab, double alpha) const {
    std::vector<double> f(n + 1, -std::numeric_limits<double>::infinity());
    f[0] = 0.0;
    for (std::size_t j = 1; j <= n; ++j)
      for (auto [i, id] : ending_at[j]) f[j] = detail::log_add(f[j], f[i] + alpha * vocab.log_prob(id));
    return f;
  }

  std::vector<double> backward(const UnigramVocab& vocab, double alpha) const {
    std::vector<double> b(n + 1, -std::numeric_limits<double>::infinity());
    b[n] = 0.0;
    for (std::size_t j = n; j >= 1; --j)
      for (auto [i, id] : ending_at[j]) b[i] = detail::log_add(b[i], b[j] + alpha * vocab.log_prob(id));
    return b;
  }
};

// Most probable piece sequence. Ties (within 1e-12 relative) prefer fewer
// pieces, then the longest leftmost piece.
inline std::vector<std::size_t> viterbi_ids(const UnigramVocab& vocab, std::string_view text) {
  const Lattice lat(vocab, text);
  const std::size_t n = lat.n;
  struct Best {
    double score = -std::numeric_limits<double>::infinity();
    std::size_t count = 0;
    std::size_t next = 0;
    std::size_t id = 0;
  };
  // starting_at[i] = (end, id), longest first.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> starting_at(n + 1);
  for (std::size_t j = 1; j <= n; ++j)
    for (auto [i, id] : lat.ending_at[j]) starting_at[i].emplace_back(j, id);
  for (auto& v : starting_at) std::sort(v.begin(), v.end(), [](auto a, auto b) { return a.first > b.first; });

  std::vector<Best> best(n + 1);
  best[n].score = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    for (auto [j, id] : starting_at[i]) {
      if (best[j].score == -std::numeric_limits<double>::infinity()) continue;
      const double score = vocab.log_prob(id) + best[j].score;
      const std::size_t count = best[j].count + 1;
      Best& cur = best[i];
      const double tol = 1e-12 * std::max(1.0, std::abs(score));
      const bool better = cur.score == -std::numeric_limits<double>::infinity() ||
                          score > cur.score + tol ||
                          (std::abs(score - cur.score) <= tol && count < cur.count);
      if (better) cur = {score, count, j, id};
    }
  }
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < n; i = best[i].next) ids.push_back(best[i].id);
  return ids;
}

// Forward-filtering backward-sampling draw with temperature alpha.
inline std::vector<std::size_t> sample_ids(const UnigramVocab& vocab, std::string_view text,
                                           double alpha, Rng& rng) {
  if (!(alpha >= 0.0)) throw ContractError("sampling alpha must be >= 0");
  const Lattice lat(vocab, text);
  const auto f = lat.forward(vocab, alpha);
  std::vector<std::size_t> rev;
  std::size_t j = lat.n;
  while (j > 0) {
    const auto& edges = lat.ending_at[j];
    double u = rng.uniform();
    std::size_t pick = edges.size() - 1;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [i, id] = edges[e];
      u -= std::exp(f[i] + alpha * vocab.log_prob(id) - f[j]);
      if (u < 0.0) {
        pick = e;
        break;
      }
    }
    rev.push_back(edges[pick].second);
    j = edges[pick].first;
  }
  return {rev.rbegin(), rev.rend()};
}

inline double log_partition(const UnigramVocab& vocab, std::string_view text, double alpha = 1.0) {
  const Lattice lat(vocab, text);
  return lat.forward(vocab, alpha)[lat.n];
}

// Segments `text` as a single unit, with no boundary marker inserted.
inline Segmentation viterbi_segment(const UnigramVocab& vocab, std::string_view text) {
  Segmentation seg;
  seg.append_word(viterbi_ids(vocab, text));
  return seg;
}

inline Segmentation sample_segment(const UnigramVocab& vocab, std::string_view text, double alpha,
                                   Rng& rng) {
  Segmentation seg;
  seg.append_word(sample_ids(vocab, text, alpha, rng));
  return seg;
}

inline std::string marked_word(const UnigramVocab& vocab, std::string_view word) {
  return vocab.marker() + std::string(word);
}

inline Segmentation segment_words(const UnigramVocab& vocab, std::span<const std::string> words) {
  Segmentation seg;
  seg.marked = true;
  for (const auto& w : words) seg.append_word(viterbi_ids(vocab, marked_word(vocab, w)));
  return seg;
}

inline Segmentation sample_words(const UnigramVocab& vocab, std::span<const std::string> words,
                                 double alpha, Rng& rng) {
  Segmentation seg;
  seg.marked = true;
  for (const auto& w : words) seg.append_word(sample_ids(vocab, marked_word(vocab, w), alpha, rng));
  return seg;
}

// Words reconstructed from a segmentation (marker stripped when present).
inline std::vector<std::string> segmented_words(const UnigramVocab& vocab, const Segmentation& seg) {
  std::vector<std::string> words(seg.n_words);
  for (std::size_t i = 0; i < seg.size(); ++i) words[seg.word_of[i]] += vocab.piece(seg.ids[i]);
  if (seg.marked) {
    for (auto& w : words)
      if (w.compare(0, vocab.marker().size(), vocab.marker()) == 0) w.erase(0, vocab.marker().size());
  }
  return words;
}

inline std::string detokenize(const UnigramVocab& vocab, const Segmentation& seg) {
  return join(segmented_words(vocab, seg), seg.marked ? " " : "");
}

struct ScoredSegmentation {
  std::vector<std::size_t> ids;
  double log_prob = 0.0;
  double probability = 0.0;
};

// Every segmentation of `text` with its untempered probability. Exponential;
// limited to 12 characters.
inline std::vector<ScoredSegmentation> enumerate_segmentations(const UnigramVocab& vocab,
                                                               std::string_view text) {
  const Lattice lat(vocab, text);
  if (lat.n > 12) throw ContractError("enumerate_segmentations: text longer than 12 characters");
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> starting_at(lat.n + 1);
  for (std::size_t j = 1; j <= lat.n; ++j)
    for (auto [i, id] : lat.ending_at[j]) starting_at[i].emplace_back(j, id);
  std::vector<ScoredSegmentation> out;
  std::vector<std::size_t> path;
  auto rec = [&](auto&& self, std::size_t i, double lp) -> void {
    if (i == lat.n) {
      out.push_back({path, lp, std::exp(lp)});
      return;
    }
    for (auto [j, id] : starting_at[i]) {
      path.push_back(id);
      self(self, j, lp + vocab.log_prob(id));
      path.pop_back();
    }
  };
  rec(rec, 0, 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary file: one `piece<TAB>log_prob` per line.

inline UnigramVocab parse_vocab(std::istream& in, const std::string& source,
                                std::string marker = std::string(kWordMarker)) {
  std::vector<std::pair<std::string, double>> pieces;
  std::unordered_map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError(source, lineno, "expected 'piece<TAB>log_prob'");
    }
    std::string piece = line.substr(0, tab);
    const auto lp = parse_double(trim(std::string_view(line).substr(tab + 1)));
    if (!lp) throw ParseError(source, lineno, "invalid log-probability for piece '" + piece + "'");
    if (seen.count(piece)) {
      throw ParseError(source, lineno, "duplicate piece '" + piece + "' (first on line " +
                                           std::to_string(seen[piece]) + ")");
    }
    seen.emplace(piece, lineno);
    pieces.emplace_back(std::move(piece), *lp);
  }
  return UnigramVocab(std::move(pieces), std::move(marker));
}

inline UnigramVocab load_vocab(const std::string& path, std::string marker = std::string(kWordMarker)) {
  auto in = open_input(path);
  return parse_vocab(in, path, std::move(marker));
}

inline void write_vocab(std::ostream& out, const UnigramVocab& vocab) {
  for (const auto& e : vocab.entries()) out << e.piece << '\t' << format_double(e.log_prob) << '\n';
}

inline void save_vocab(const std::string& path, const UnigramVocab& vocab) {
  auto out = open_output(path);
  write_vocab(out, vocab);
}

// ---------------------------------------------------------------------------
// Vocabulary induction: seed from frequent substrings, EM on the unigram
// model, prune the pieces with the smallest expected counts.

using WordCounts = std::map<std::string, double>;

// Marked word -> frequency over whitespace-separated words of every line.
inline WordCounts count_words(std::span<const std::string> corpus, std::string_view marker) {
  WordCounts counts;
  for (const auto& line : corpus)
    for (auto& w : split_whitespace(line)) counts[std::string(marker) + w] += 1.0;
  return counts;
}

inline double corpus_log_likelihood(const UnigramVocab& vocab, const WordCounts& counts) {
  double ll = 0.0;
  for (const auto& [word, c] : counts) ll += c * log_partition(vocab, word);
  return ll;
}

struct EmStep {
  std::vector<double> expected_counts;  // per piece id
  double log_likelihood = 0.0;          // of the vocabulary before the update
};

inline EmStep expected_piece_counts(const UnigramVocab& vocab, const WordCounts& counts) {
  EmStep out;
  out.expected_counts.assign(vocab.size(), 0.0);
  for (const auto& [word, c] : counts) {
    const Lattice lat(vocab, word);
    const auto f = lat.forward(vocab, 1.0);
    const auto b = lat.backward(vocab, 1.0);
    const double z = f[lat.n];
    out.log_likelihood += c * z;
    for (std::size_t j = 1; j <= lat.n; ++j)
      for (auto [i, id] : lat.ending_at[j])
        out.expected_counts[id] += c * std::exp(f[i] + vocab.log_prob(id) + b[j] - z);
  }
  return out;
}

// One EM round. Returns the re-estimated vocabulary; `log_likelihood`
// receives the corpus log-likelihood under the input vocabulary.
inline UnigramVocab em_step(const UnigramVocab& vocab, const WordCounts& counts,
                            double* log_likelihood = nullptr) {
  const auto step = expected_piece_counts(vocab, counts);
  if (log_likelihood) *log_likelihood = step.log_likelihood;
  double total = 0.0;
  for (double c : step.expected_counts) total += c;
  std::vector<std::pair<std::string, double>> pieces;
  pieces.reserve(vocab.size());
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    const double c = std::max(step.expected_counts[id], 1e-12 * total);
    pieces.emplace_back(vocab.piece(id), std::min(0.0, std::log(c / total)));
  }
  return UnigramVocab(std::move(pieces), vocab.marker());
}

struct VocabBuildOptions {
  std::size_t target_size = 256;
  std::size_t max_piece_len = 8;
  int em_iters = 3;
  double prune_fraction = 0.2;
  std::string marker = std::string(kWordMarker);
};

struct VocabBuildReport {
  std::vector<double> log_likelihoods;  // one per EM round, in order
  std::vector<std::size_t> sizes;       // vocabulary size at each EM round
};

inline UnigramVocab build_vocab(std::span<const std::string> corpus, const VocabBuildOptions& opt,
                                VocabBuildReport* report = nullptr) {
  const WordCounts counts = count_words(corpus, opt.marker);
  std::map<std::string, double> singles;
  std::map<std::string, double> multi;
  for (const auto& [word, c] : counts) {
    const auto chars = utf8_chars(word);
    for (std::size_t i = 0; i < chars.size(); ++i) {
      singles[std::string(chars[i])] += c;
      std::string sub(chars[i]);
      for (std::size_t len = 2; len <= opt.max_piece_len && i + len <= chars.size(); ++len) {
        sub += chars[i + len - 1];
        multi[sub] += c;
      }
    }
  }
  if (opt.target_size < singles.size()) {
    throw ContractError("build_vocab: target size " + std::to_string(opt.target_size) +
                        " below alphabet size " + std::to_string(singles.size()));
  }
  std::vector<std::pair<std::string, double>> seeds(multi.begin(), multi.end());
  std::erase_if(seeds, [](const auto& p) { return p.second < 2.0; });
  std::stable_sort(seeds.begin(), seeds.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t seed_cap = std::max<std::size_t>(10 * opt.target_size, 2000);
  if (seeds.size() > seed_cap) seeds.resize(seed_cap);

  double total = 0.0;
  for (const auto& [p, c] : singles) total += c;
  for (const auto& [p, c] : seeds) total += c;
  std::vector<std::pair<std::string, double>> init;
  for (const auto& [p, c] : singles) init.emplace_back(p, std::log(c / total));
  for (const auto& [p, c] : seeds) init.emplace_back(p, std::log(c / total));
  UnigramVocab vocab(std::move(init), opt.marker);

  auto run_em = [&] {
    for (int it = 0; it < opt.em_iters; ++it) {
      double ll = 0.0;
      vocab = em_step(vocab, counts, &ll);
      if (report) {
        report->log_likelihoods.push_back(ll);
        report->sizes.push_back(vocab.size());
      }
    }
  };

  run_em();
  while (vocab.size() > opt.target_size) {
    const auto expected = expected_piece_counts(vocab, counts).expected_counts;
    std::vector<std::size_t> removable;
    for (std::size_t id = 0; id < vocab.size(); ++id)
      if (vocab.entries()[id].chars > 1) removable.push_back(id);
    std::stable_sort(removable.begin(), removable.end(),
                     [&](std::size_t a, std::size_t b) { return expected[a] < expected[b]; });
    const auto by_fraction = static_cast<std::size_t>(
        std::ceil(opt.prune_fraction * static_cast<double>(vocab.size())));
    const std::size_t drop =
        std::min({by_fraction, vocab.size() - opt.target_size, removable.size()});
    std::vector<bool> dropped(vocab.size(), false);
    for (std::size_t k = 0; k < drop; ++k) dropped[removable[k]] = true;
    std::vector<std::pair<std::string, double>> kept;
    for (std::size_t id = 0; id < vocab.size(); ++id)
      if (!dropped[id]) kept.emplace_back(vocab.piece(id), vocab.log_prob(id));
    vocab = UnigramVocab(std::move(kept), opt.marker);
    run_em();
  }
  return vocab;
}

}  // namespace xtune
