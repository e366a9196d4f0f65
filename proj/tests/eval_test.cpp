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

#include "varmt/eval.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "varmt/error.hpp"
#include "varmt/synth.hpp"

namespace varmt {
namespace {

// Straightforward corpus BLEU: clipped n-gram counts from maps, no smoothing.
double reference_bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs) {
  double match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0}, hl = 0, rl = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    hl += static_cast<double>(hyps[s].size());
    rl += static_cast<double>(refs[s].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<Tokens, int> h, r;
      for (std::size_t i = 0; i + n <= hyps[s].size(); ++i) ++h[Tokens(hyps[s].begin() + i, hyps[s].begin() + i + n)];
      for (std::size_t i = 0; i + n <= refs[s].size(); ++i) ++r[Tokens(refs[s].begin() + i, refs[s].begin() + i + n)];
      for (const auto& [g, c] : h) {
        total[n - 1] += c;
        match[n - 1] += std::min(c, r.count(g) ? r[g] : 0);
      }
    }
  }
  double log_sum = 0;
  for (int n = 0; n < 4; ++n) {
    if (match[n] == 0) return 0.0;
    log_sum += std::log(match[n] / total[n]) / 4.0;
  }
  const double bp = hl >= rl ? 1.0 : std::exp(1.0 - rl / hl);
  return 100.0 * bp * std::exp(log_sum);
}

std::vector<Tokens> random_corpus(std::mt19937& gen, std::size_t n, int vocab) {
  std::vector<Tokens> out(n);
  for (auto& s : out)
    for (std::size_t k = 0, len = 4 + gen() % 10; k < len; ++k) s.push_back("w" + std::to_string(gen() % vocab));
  return out;
}

TEST(Bleu, HandComputedBrevityExample) {
  const std::vector<Tokens> hyp{{"a", "b", "c", "d"}};
  const std::vector<Tokens> ref{{"a", "b", "c", "d", "e"}};
  const auto r = corpus_bleu(hyp, ref);
  for (double p : r.precisions) EXPECT_DOUBLE_EQ(p, 1.0);
  EXPECT_NEAR(r.brevity_penalty, std::exp(-0.25), 1e-12);
  EXPECT_NEAR(r.bleu, 100.0 * std::exp(-0.25), 1e-9);
  EXPECT_NEAR(r.bleu, 77.88, 0.005);
}

TEST(Bleu, ZeroUnigramPrecision) {
  const std::vector<Tokens> hyp{{"x", "x", "x", "x"}};
  const std::vector<Tokens> ref{{"a", "b", "c", "d"}};
  EXPECT_EQ(corpus_bleu(hyp, ref).bleu, 0.0);
}

TEST(Bleu, IdentityIsHundred) {
  std::mt19937 gen(1);
  for (int t = 0; t < 20; ++t) {
    const auto c = random_corpus(gen, 1 + gen() % 30, 50);
    EXPECT_NEAR(corpus_bleu(c, c).bleu, 100.0, 1e-9);
  }
}

TEST(Bleu, MatchesReferenceImplementation) {
  std::mt19937 gen(2);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + gen() % 20;
    const auto hyps = random_corpus(gen, n, 6);
    const auto refs = random_corpus(gen, n, 6);
    EXPECT_NEAR(corpus_bleu(hyps, refs).bleu, reference_bleu(hyps, refs), 1e-9);
  }
}

TEST(Bleu, InvariantUnderJointPermutation) {
  std::mt19937 gen(3);
  auto hyps = random_corpus(gen, 25, 5);
  auto refs = random_corpus(gen, 25, 5);
  const double before = corpus_bleu(hyps, refs).bleu;
  std::vector<std::size_t> order(25);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), gen);
  std::vector<Tokens> ph, pr;
  for (auto i : order) {
    ph.push_back(hyps[i]);
    pr.push_back(refs[i]);
  }
  EXPECT_NEAR(corpus_bleu(ph, pr).bleu, before, 1e-9);
}

TEST(Bleu, Errors) {
  const std::vector<Tokens> one{{"a"}};
  EXPECT_THROW(corpus_bleu(one, std::vector<Tokens>{}), DataError);
  EXPECT_THROW(corpus_bleu(std::vector<Tokens>{}, std::vector<Tokens>{}), EmptyDataError);
}

TEST(Bootstrap, IdenticalSystemsNeverSignificant) {
  std::mt19937 gen(4);
  const auto refs = random_corpus(gen, 40, 10);
  const auto hyps = random_corpus(gen, 40, 10);
  const auto r = paired_bootstrap(hyps, hyps, refs, 1000, 0.05, 7);
  EXPECT_EQ(r.delta_bleu, 0.0);
  EXPECT_EQ(r.wins, 0u);
  EXPECT_EQ(r.ties, 1000u);
  EXPECT_FALSE(r.significant);
}

TEST(Bootstrap, ReferenceBeatsGarbage) {
  std::mt19937 gen(5);
  const auto refs = random_corpus(gen, 50, 30);
  const auto garbage = random_corpus(gen, 50, 30);
  const auto r = paired_bootstrap(refs, garbage, refs, 1000, 0.05, 7);
  EXPECT_LT(r.p_value, 0.05);
  EXPECT_TRUE(r.significant);
  EXPECT_EQ(r.wins_x + r.wins_y + r.ties, 1000u);
  // Swapping the systems mirrors the counts and keeps the p-value.
  const auto s = paired_bootstrap(garbage, refs, refs, 1000, 0.05, 7);
  EXPECT_EQ(s.wins_x, r.wins_y);
  EXPECT_EQ(s.wins_y, r.wins_x);
  EXPECT_DOUBLE_EQ(s.p_value, r.p_value);
}

TEST(Bootstrap, DeterministicAcrossThreadCounts) {
  std::mt19937 gen(6);
  const auto refs = random_corpus(gen, 30, 8);
  const auto x = random_corpus(gen, 30, 8);
  const auto y = random_corpus(gen, 30, 8);
  const auto a = paired_bootstrap(x, y, refs, 500, 0.05, 11, 1);
  EXPECT_EQ(a, paired_bootstrap(x, y, refs, 500, 0.05, 11, 3));
  EXPECT_EQ(a.p_value, 1.0 - static_cast<double>(a.wins) / 500.0);
  EXPECT_THROW(paired_bootstrap(x, y, std::vector<Tokens>(29), 500, 0.05, 1), DataError);
  EXPECT_THROW(paired_bootstrap(x, y, refs, 10, 0.05, 1), ConfigError);
}

TEST(Consistency, TableMode) {
  VariantTable table;
  table.add("base1", "ca", "ce");
  table.add("base2", "fo", "fi");
  const std::vector<Tokens> all_a{{"ca", "x", "fo"}, {"fo"}};
  EXPECT_EQ(variety_consistency(all_a, table, VarietyTag::A), 1.0);
  EXPECT_EQ(variety_consistency(all_a, table, VarietyTag::B), 0.0);
  const std::vector<Tokens> half{{"ca", "fi"}, {"ce", "fo", "plain"}};
  EXPECT_EQ(variety_consistency(half, table, VarietyTag::A), 0.5);
  const std::vector<Tokens> unmarked{{"x", "y"}};
  EXPECT_THROW(variety_consistency(unmarked, table, VarietyTag::A), UndefinedMetricError);
}

class FixedScorer : public VarietyScorer {
 public:
  MemberProbs member_probabilities(std::string_view s) const override {
    MemberProbs m;
    m.fill(s.find("aa") != std::string_view::npos ? ProbPair{0.9, 0.1} : ProbPair{0.2, 0.8});
    return m;
  }
};

TEST(Consistency, ClassifierMode) {
  FixedScorer judge;
  const std::vector<Tokens> hyps{{"aa", "x"}, {"bb"}, {"aa"}, {"cc"}};
  EXPECT_EQ(variety_consistency(hyps, judge, VarietyTag::A), 0.5);
  EXPECT_THROW(variety_consistency(std::vector<Tokens>{}, judge, VarietyTag::A), EmptyDataError);
}

TEST(Reports, MetricsTsvLayout) {
  const std::vector<MetricRow> rows{{"mul", "test_a", "bleu", 12.5}};
  const auto tsv = metrics_tsv(rows);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "system\ttestset\tmetric\tvalue");
  EXPECT_NE(tsv.find("mul\ttest_a\tbleu\t12.500000\n"), std::string::npos);
}

}  // namespace
}  // namespace varmt
