/* Copyright 2026 The varmt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "varmt/subword.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>

#include "varmt/error.hpp"
#include "varmt/utf8.hpp"

namespace varmt {
namespace {

namespace fs = std::filesystem;
using Merge = SubwordModel::Merge;

ParallelCorpus corpus_from_words(const std::vector<std::pair<std::string, int>>& counts) {
  ParallelCorpus c;
  for (const auto& [w, n] : counts)
    for (int i = 0; i < n; ++i) c.pairs.push_back({Tokens{w}, Tokens{}, VarietyTag::A});
  return c;
}

SubwordModel train(const ParallelCorpus& c, std::size_t vocab) {
  const ParallelCorpus* cs[] = {&c};
  return train_subword(cs, vocab);
}

// Textbook BPE: recount every pair from scratch each round, take the most
// frequent (ties: smaller left symbol, then smaller right symbol).
std::vector<Merge> naive_bpe(const std::map<std::string, long>& word_counts, std::size_t n_merges) {
  std::vector<std::pair<std::vector<std::string>, long>> words;
  for (const auto& [w, c] : word_counts) {
    auto sym = utf8::characters(w);
    sym.push_back("</w>");
    words.push_back({sym, c});
  }
  std::vector<Merge> merges;
  while (merges.size() < n_merges) {
    std::map<Merge, long> freq;
    for (const auto& [sym, c] : words)
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) freq[{sym[i], sym[i + 1]}] += c;
    if (freq.empty()) break;
    Merge best;
    long best_c = 0;
    for (const auto& [m, c] : freq)
      if (c > best_c) {
        best = m;
        best_c = c;
      }
    merges.push_back(best);
    for (auto& [sym, c] : words) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < sym.size();) {
        if (i + 1 < sym.size() && sym[i] == best.first && sym[i + 1] == best.second) {
          next.push_back(best.first + best.second);
          i += 2;
        } else {
          next.push_back(sym[i++]);
        }
      }
      sym = next;
    }
  }
  return merges;
}

// Applies the merge list in order to every position, as a hand replay would.
std::vector<std::string> replay(const std::string& word, const std::vector<Merge>& merges) {
  auto sym = utf8::characters(word);
  sym.push_back("</w>");
  for (const auto& m : merges) {
    std::vector<std::string> next;
    for (std::size_t i = 0; i < sym.size();) {
      if (i + 1 < sym.size() && sym[i] == m.first && sym[i + 1] == m.second) {
        next.push_back(m.first + m.second);
        i += 2;
      } else {
        next.push_back(sym[i++]);
      }
    }
    sym = next;
  }
  return sym;
}

const std::vector<std::pair<std::string, int>> kToy = {{"low", 5}, {"lower", 2}, {"newest", 6}, {"widest", 3}};
// d e i l n o r s t w </w>
constexpr std::size_t kToyFloor = 6 + 11;

std::string random_word(std::mt19937& gen) {
  static const std::vector<std::string> alphabet = {"a", "b", "c", "d", "e", "š", "ž", "ç"};
  std::string w;
  const int len = 1 + static_cast<int>(gen() % 7);
  for (int i = 0; i < len; ++i) w += alphabet[gen() % alphabet.size()];
  return w;
}

TEST(TrainSubword, ToyCorpusFirstMergeIsES) {
  const auto m = train(corpus_from_words(kToy), kToyFloor + 1);
  ASSERT_EQ(m.merges().size(), 1u);
  EXPECT_EQ(m.merges()[0], (Merge{"e", "s"}));
  // e-s occurs in newest (6) and widest (3).
  std::map<std::string, long> counts;
  for (const auto& [w, n] : kToy) counts[w] = n;
  EXPECT_EQ(naive_bpe(counts, 1)[0], (Merge{"e", "s"}));
}

TEST(TrainSubword, OnlyRepeatedPairMergesFirst) {
  const auto m = train(corpus_from_words({{"ab", 3}, {"c", 1}, {"d", 1}}), 6 + 5 + 1);
  ASSERT_FALSE(m.merges().empty());
  EXPECT_EQ(m.merges()[0], (Merge{"a", "b"}));
}

TEST(TrainSubword, FloorBudgetGivesCharacterModel) {
  const auto m = train(corpus_from_words(kToy), kToyFloor);
  EXPECT_TRUE(m.merges().empty());
  EXPECT_EQ(m.vocab_size(), kToyFloor);
  EXPECT_EQ(m.segment_units(Tokens{"low"}), (std::vector<std::string>{"l", "o", "w", "</w>"}));
}

TEST(TrainSubword, BelowFloorNamesTheFloor) {
  try {
    train(corpus_from_words(kToy), kToyFloor - 1);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(std::to_string(kToyFloor)), std::string::npos) << e.what();
  }
}

TEST(TrainSubword, MatchesNaiveRecountTrainer) {
  std::mt19937 gen(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::map<std::string, long> counts;
    ParallelCorpus c;
    for (int i = 0; i < 60; ++i) {
      Tokens src{random_word(gen), random_word(gen)};
      Tokens tgt{random_word(gen)};
      for (const auto& t : src) ++counts[t];
      for (const auto& t : tgt) ++counts[t];
      c.pairs.push_back({src, tgt, VarietyTag::A});
    }
    const auto model = train(c, 6 + 9 + 40);
    EXPECT_EQ(model.merges(), naive_bpe(counts, model.merges().size())) << "trial " << trial;
  }
}

TEST(Segment, LowestReplaysLearnedMerges) {
  // Merges: (e,s) (es,t) (est,</w>) (l,o) (lo,w) (e,w)
  const auto m = train(corpus_from_words(kToy), kToyFloor + 6);
  ASSERT_EQ(m.merges().size(), 6u);
  EXPECT_EQ(m.merges()[5], (Merge{"e", "w"}));
  EXPECT_EQ(m.segment_units(Tokens{"lowest"}), (std::vector<std::string>{"low", "est</w>"}));
  EXPECT_EQ(m.segment_units(Tokens{"lowest"}), replay("lowest", m.merges()));
}

TEST(Segment, AgreesWithSequentialReplay) {
  std::mt19937 gen(5);
  ParallelCorpus c;
  for (int i = 0; i < 300; ++i) c.pairs.push_back({Tokens{random_word(gen)}, Tokens{random_word(gen)}, VarietyTag::B});
  const auto m = train(c, 120);
  for (int i = 0; i < 200; ++i) {
    const auto w = random_word(gen);
    EXPECT_EQ(m.segment_units(Tokens{w}), replay(w, m.merges())) << w;
  }
}

TEST(Segment, FullVocabularyTokenIsOneUnit) {
  const auto m = train(corpus_from_words({{"hello", 50}, {"help", 1}}), 6 + 6 + 20);
  const auto ids = m.segment(Tokens{"hello"});
  ASSERT_EQ(ids.size(), 1u);
  EXPECT_EQ(m.unit(ids[0]), "hello</w>");
}

TEST(Desegment, EmptyAndSpecials) {
  const auto m = train(corpus_from_words(kToy), kToyFloor + 6);
  EXPECT_TRUE(m.desegment({}).empty());
  auto ids = m.segment(Tokens{"lowest", "new"});
  std::vector<TokenId> noisy{SubwordModel::kVarietyA, SubwordModel::kPad};
  noisy.insert(noisy.end(), ids.begin(), ids.end());
  noisy.push_back(SubwordModel::kEos);
  noisy.push_back(SubwordModel::kPad);
  EXPECT_EQ(m.desegment(noisy), (Tokens{"lowest", "new"}));
}

TEST(Desegment, RoundTripOnRandomSentences) {
  std::mt19937 gen(2);
  ParallelCorpus c;
  for (int i = 0; i < 500; ++i) {
    Tokens s;
    for (int k = 0; k < 5; ++k) s.push_back(random_word(gen));
    c.pairs.push_back({s, Tokens{random_word(gen)}, VarietyTag::A});
  }
  const auto m = train(c, 200);
  for (int i = 0; i < 300; ++i) {
    Tokens s;
    const int len = static_cast<int>(gen() % 8);
    for (int k = 0; k < len; ++k) s.push_back(random_word(gen));
    const auto ids = m.segment(s);
    for (TokenId id : ids) EXPECT_NE(id, SubwordModel::kUnk);
    EXPECT_EQ(m.desegment(ids), s);
  }
}

TEST(Vocabulary, MonotoneInBudgetAndSpecialsReserved) {
  const auto c = corpus_from_words(kToy);
  std::size_t prev = 0;
  for (std::size_t v = kToyFloor; v < kToyFloor + 15; ++v) {
    const auto m = train(c, v);
    EXPECT_LE(m.vocab_size(), v);
    EXPECT_GE(m.vocab_size(), prev);
    prev = m.vocab_size();
    EXPECT_EQ(m.id("<2A>"), SubwordModel::kVarietyA);
    EXPECT_EQ(m.id("<2B>"), SubwordModel::kVarietyB);
    EXPECT_NE(SubwordModel::variety_token(VarietyTag::A), SubwordModel::variety_token(VarietyTag::B));
  }
  // Budget larger than what the corpus supports stops when no pair is left.
  const auto big = train(c, 10000);
  EXPECT_LT(big.vocab_size(), 10000u);
  for (const auto& [w, n] : kToy) EXPECT_EQ(big.segment(Tokens{w}).size(), 1u);
}

TEST(Vocabulary, UnknownCharacterMapsToUnk) {
  const auto m = train(corpus_from_words(kToy), kToyFloor + 3);
  const auto ids = m.segment(Tokens{"q"});
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(ids[0], SubwordModel::kUnk);
}

TEST(Persistence, SaveLoadIsExact) {
  std::mt19937 gen(8);
  ParallelCorpus c;
  for (int i = 0; i < 200; ++i) c.pairs.push_back({Tokens{random_word(gen)}, Tokens{random_word(gen)}, VarietyTag::A});
  const auto m = train(c, 90);
  const auto path = fs::temp_directory_path() / "varmt_subword_test.bpe";
  m.save(path);
  const auto back = SubwordModel::load(path);
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.serialize(), m.serialize());
  EXPECT_EQ(back.fingerprint(), m.fingerprint());
  EXPECT_THROW(SubwordModel::deserialize("garbage\n"), FormatError);
}

TEST(Determinism, SameInputSameModel) {
  const auto c = corpus_from_words(kToy);
  EXPECT_EQ(train(c, kToyFloor + 8).serialize(), train(c, kToyFloor + 8).serialize());
}

}  // namespace
}  // namespace varmt
