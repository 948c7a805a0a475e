#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xtune/tokenizer.hpp"
#include "tokenizer_oracle.hpp"

using namespace xtune;

namespace {

UnigramVocab abc_vocab() {
  return UnigramVocab({{"a", std::log(0.4)}, {"b", std::log(0.4)}, {"ab", std::log(0.2)}}, "");
}

std::vector<std::string> pieces(const UnigramVocab& v, const Segmentation& s) {
  std::vector<std::string> out;
  for (auto id : s.ids) out.push_back(v.piece(id));
  return out;
}

UnigramVocab parse(const std::string& text) {
  std::istringstream in(text);
  return parse_vocab(in, "mem", "");
}

}  // namespace

TEST(VocabFile, ParsesThreePieces) {
  auto v = parse("a\t-0.9163\nb\t-0.9163\nab\t-1.6094\n");
  EXPECT_EQ(v.size(), 3u);
  EXPECT_DOUBLE_EQ(v.log_prob(*v.find("ab")), -1.6094);
  EXPECT_EQ(v.max_piece_len(), 2u);
}

TEST(VocabFile, DuplicatePieceNamed) {
  try {
    parse("a\t-1\nab\t-1\nb\t-1\nab\t-2\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
    EXPECT_NE(std::string(e.what()).find("'ab'"), std::string::npos);
  }
}

TEST(VocabFile, EmptyFileFailsValidation) { EXPECT_THROW(parse(""), ValidationError); }

TEST(VocabFile, MalformedLineReportsLineNumber) {
  try {
    parse("a\t-1\nb -1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse("a\tnot-a-number\n"), ParseError);
}

TEST(VocabFile, MissingCharacterCoverage) {
  EXPECT_THROW(parse("a\t-1\nab\t-1\n"), ValidationError);
  EXPECT_THROW(parse("a\t0.5\n"), ValidationError);
}

TEST(VocabFile, SaveLoadIsExact) {
  auto v = UnigramVocab({{"\xE2\x96\x81", -1.0 / 3.0}, {"x", std::log(0.123456789)}, {"\xE2\x96\x81x", -2.5}});
  const auto path = std::filesystem::temp_directory_path() / "xtune_vocab_roundtrip.txt";
  save_vocab(path.string(), v);
  auto w = load_vocab(path.string());
  ASSERT_EQ(w.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(w.piece(i), v.piece(i));
    EXPECT_EQ(w.log_prob(i), v.log_prob(i));
  }
  std::filesystem::remove(path);
}

TEST(Viterbi, PrefersWholePieceWhenMoreProbable) {
  auto v = abc_vocab();
  // 0.2 > 0.4 * 0.4
  EXPECT_EQ(pieces(v, viterbi_segment(v, "ab")), (std::vector<std::string>{"ab"}));
  EXPECT_EQ(oracle::best_by_enumeration(v, "ab"), viterbi_ids(v, "ab"));
}

TEST(Viterbi, SingleCharacter) {
  auto v = abc_vocab();
  EXPECT_EQ(pieces(v, viterbi_segment(v, "a")), (std::vector<std::string>{"a"}));
}

TEST(Viterbi, RepeatedCharacter) {
  auto v = abc_vocab();
  EXPECT_EQ(pieces(v, viterbi_segment(v, "aa")), (std::vector<std::string>{"a", "a"}));
  EXPECT_EQ(oracle::best_by_enumeration(v, "aa"), viterbi_ids(v, "aa"));
}

TEST(Viterbi, TiesPreferFewerPiecesThenLongestLeft) {
  // "abc": [ab][c] and [a][bc] and [abc] all score log(0.01)-ish by design.
  auto v = UnigramVocab({{"a", std::log(0.1)},
                         {"b", std::log(0.1)},
                         {"c", std::log(0.1)},
                         {"ab", std::log(0.1)},
                         {"bc", std::log(0.1)}},
                        "");
  // [ab][c] and [a][bc] tie on score and count; the longer leftmost piece wins.
  EXPECT_EQ(pieces(v, viterbi_segment(v, "abc")), (std::vector<std::string>{"ab", "c"}));
  auto w = UnigramVocab({{"a", std::log(0.1)}, {"b", std::log(0.1)}, {"ab", std::log(0.01)}}, "");
  // [ab] ties [a][b] on score; fewer pieces wins.
  EXPECT_EQ(pieces(w, viterbi_segment(w, "ab")), (std::vector<std::string>{"ab"}));
}

TEST(Viterbi, UncoverableCharacter) {
  auto v = abc_vocab();
  EXPECT_THROW(viterbi_segment(v, "abz"), CoverageError);
}

TEST(Viterbi, MatchesBruteForceOnRandomVocab) {
  Rng rng(11);
  for (int rep = 0; rep < 3; ++rep) {
    auto v = oracle::random_vocab(rng, "abc", 20, 4);
    for (const auto& s : oracle::all_strings("abc", 6)) {
      ASSERT_EQ(viterbi_ids(v, s), oracle::best_by_enumeration(v, s)) << s;
    }
  }
}

TEST(Enumerate, CountsAndPartition) {
  auto v = abc_vocab();
  EXPECT_EQ(enumerate_segmentations(v, "ab").size(), 2u);
  EXPECT_EQ(enumerate_segmentations(v, "a").size(), 1u);
  Rng rng(5);
  auto r = oracle::random_vocab(rng, "abc", 20, 4);
  for (const std::string s : {"abcabc", "aabbccab", "cbacbacbacba"}) {
    double z = 0.0;
    for (const auto& e : enumerate_segmentations(r, s)) z += e.probability;
    EXPECT_NEAR(z, std::exp(log_partition(r, s)), 1e-12 * std::max(1.0, z)) << s;
  }
  EXPECT_THROW(enumerate_segmentations(v, "abababababab" "a"), ContractError);
}

TEST(Sampling, MatchesTemperedLawOnTwoPieceLattice) {
  auto v = abc_vocab();
  Rng rng(99);
  const int draws = 100000;
  int whole = 0;
  for (int i = 0; i < draws; ++i) whole += sample_ids(v, "ab", 1.0, rng).size() == 1;
  EXPECT_NEAR(static_cast<double>(whole) / draws, 0.2 / 0.36, 0.01);

  whole = 0;
  for (int i = 0; i < draws; ++i) whole += sample_ids(v, "ab", 0.0, rng).size() == 1;
  EXPECT_NEAR(static_cast<double>(whole) / draws, 0.5, 0.01);
}

TEST(Sampling, LargeAlphaRecoversViterbi) {
  Rng rng(3);
  auto v = oracle::random_vocab(rng, "abc", 20, 4);
  for (const std::string s : {"abcab", "cabbac", "aaab"}) {
    const auto best = viterbi_ids(v, s);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_ids(v, s, 50.0, rng), best);
  }
}

TEST(Sampling, DeterministicGivenSeed) {
  Rng a(42), b(42);
  Rng g(1);
  auto v = oracle::random_vocab(g, "abc", 20, 4);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_ids(v, "abcabcab", 0.5, a), sample_ids(v, "abcabcab", 0.5, b));
}

TEST(Sampling, TotalVariationSmallAgainstEnumeration) {
  Rng g(17);
  auto v = oracle::random_vocab(g, "abc", 20, 4);
  Rng rng(18);
  const double tv = oracle::sampling_total_variation(v, "abcab", 0.5, 100000, rng);
  EXPECT_LT(tv, 0.02);
}

TEST(WordSegmentation, RoundTripAndFirstFlags) {
  const std::string m(kWordMarker);
  auto v = UnigramVocab({{m, -2.0}, {"c", -2.0}, {"a", -2.0}, {"t", -2.0}, {m + "c", -1.5}, {"at", -1.0}});
  std::vector<std::string> words{"cat", "a", "tact"};
  auto seg = segment_words(v, words);
  EXPECT_EQ(seg.n_words, 3u);
  std::size_t firsts = 0;
  for (bool f : seg.first) firsts += f;
  EXPECT_EQ(firsts, 3u);
  EXPECT_EQ(detokenize(v, seg), "cat a tact");
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    auto s = sample_words(v, words, 0.3, rng);
    EXPECT_EQ(segmented_words(v, s), words);
    EXPECT_EQ(s.first_positions().size(), 3u);
  }
}

TEST(BuildVocab, RepeatedPairKeepsWholePiece) {
  std::vector<std::string> corpus(50, "ab ab ab");
  VocabBuildOptions opt;
  opt.target_size = 3;
  opt.marker = "";
  auto v = build_vocab(corpus, opt);
  EXPECT_EQ(v.size(), 3u);
  EXPECT_TRUE(v.find("a") && v.find("b") && v.find("ab"));
  // EM puts all mass on the whole piece for this corpus.
  EXPECT_EQ(viterbi_ids(v, "ab").size(), 1u);
}

TEST(BuildVocab, AlphabetSizedTargetIsCharacterOnly) {
  std::vector<std::string> corpus{"abc cab", "bca abc abc"};
  VocabBuildOptions opt;
  opt.target_size = 4;  // marker + a, b, c
  auto v = build_vocab(corpus, opt);
  EXPECT_EQ(v.size(), 4u);
  for (const auto& e : v.entries()) EXPECT_EQ(e.chars, 1u);
  opt.target_size = 3;
  EXPECT_THROW(build_vocab(corpus, opt), ContractError);
}

TEST(BuildVocab, EmLikelihoodNonDecreasing) {
  std::vector<std::string> corpus{"the cat sat on the mat", "a cat and a hat", "that hat sat"};
  VocabBuildOptions opt;
  opt.target_size = 30;
  opt.em_iters = 4;
  VocabBuildReport report;
  auto v = build_vocab(corpus, opt, &report);
  EXPECT_LE(v.size(), 30u);
  // Within each run of equal vocabulary sizes the EM trace must not drop.
  for (std::size_t i = 1; i < report.log_likelihoods.size(); ++i) {
    if (report.sizes[i] == report.sizes[i - 1]) {
      EXPECT_GE(report.log_likelihoods[i], report.log_likelihoods[i - 1] - 1e-9) << i;
    }
  }
  // Direct: repeated EM steps on a fixed piece set.
  const auto counts = count_words(corpus, kWordMarker);
  double prev = -INFINITY;
  UnigramVocab cur = v;
  for (int i = 0; i < 10; ++i) {
    double ll = 0.0;
    cur = em_step(cur, counts, &ll);
    EXPECT_GE(ll, prev - 1e-9);
    prev = ll;
  }
  for (const auto& line : corpus) {
    auto words = split_whitespace(line);
    EXPECT_EQ(detokenize(v, segment_words(v, words)), line);
  }
}
