#pragma once

// Small hand-built objects shared by the unit and acceptance suites.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "xtune/model.hpp"
#include "xtune/rng.hpp"
#include "xtune/tokenizer.hpp"

namespace fixtures {

// Word marker, lower-case letters, the section sign, and a few whole words,
// so common words segment to one piece and anything else falls back to
// letters.
inline xtune::UnigramVocab word_vocab() {
  std::vector<std::pair<std::string, double>> p;
  p.emplace_back(std::string(xtune::kWordMarker), std::log(0.05));
  for (char c = 'a'; c <= 'z'; ++c) p.emplace_back(std::string(1, c), std::log(0.01));
  for (char c = '0'; c <= '9'; ++c) p.emplace_back(std::string(1, c), std::log(0.01));
  p.emplace_back("\xC2\xA7", std::log(0.01));
  for (const char* w : {"the", "cat", "chat", "dog", "sat", "mat", "on", "a"})
    p.emplace_back(std::string(xtune::kWordMarker) + w, std::log(0.04));
  p.emplace_back("at", std::log(0.03));
  p.emplace_back("ch", std::log(0.02));
  p.emplace_back(std::string(xtune::kWordMarker) + "c", std::log(0.02));
  return xtune::UnigramVocab(std::move(p));
}

// Model with weights redrawn at `scale`, large enough that every parameter
// has a gradient well above finite-difference roundoff.
inline xtune::Model scaled_model(xtune::ModelConfig cfg, std::uint64_t seed, double scale = 0.5) {
  xtune::Rng rng(seed);
  xtune::Model m(cfg, rng);
  for (auto& t : m.params())
    for (double& v : t.mutable_values()) v = rng.normal(0.0, scale);
  return m;
}

// Denominator floor for full-model gradient checks: some parameters (the
// span head bias) have gradients that vanish identically.
inline constexpr double kModelGradFloor = 1e-6;

inline xtune::ModelConfig model_config(xtune::Task task, std::size_t vocab_size, std::size_t n_label = 3,
                                       std::size_t dim = 4) {
  xtune::ModelConfig c;
  c.task = task;
  c.vocab_size = vocab_size;
  c.dim = dim;
  c.max_len = 32;
  c.n_label = n_label;
  return c;
}

}  // namespace fixtures
