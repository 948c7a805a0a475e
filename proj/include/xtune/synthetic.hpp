#pragma once

// The synthetic cipher benchmark together with a vocabulary induced from its
// raw multilingual text, ready to hand to the trainer.

#include <string>
#include <vector>

#include "xtune/data.hpp"
#include "xtune/tokenizer.hpp"
#include "xtune/trainer.hpp"

namespace xtune {

// Small enough that cipher surfaces in different languages share pieces
// (the source surface "w12" is a piece, the target "w12§xx" splits into it
// plus suffix pieces), which is what gives a context-free encoder any signal
// on target languages.
inline constexpr std::size_t kSyntheticVocabSize = 150;

struct SyntheticBench {
  SyntheticCorpus corpus;
  UnigramVocab vocab;

  std::vector<std::string> targets() const { return {corpus.languages.begin() + 1, corpus.languages.end()}; }

  // Pointers into this object; keep it alive and in place while training.
  TrainInputs inputs() const {
    TrainInputs in;
    in.train = &corpus.train;
    in.vocab = &vocab;
    in.dictionaries = corpus.dictionaries;
    in.store = &corpus.translations;
    in.target_languages = targets();
    return in;
  }
};

inline SyntheticBench make_synthetic_bench(const SyntheticSpec& spec, std::size_t vocab_size = kSyntheticVocabSize) {
  SyntheticBench b{generate_cipher_corpus(spec), {}};
  VocabBuildOptions opt;
  opt.target_size = vocab_size;
  b.vocab = build_vocab(b.corpus.unlabeled, opt);
  return b;
}

}  // namespace xtune
