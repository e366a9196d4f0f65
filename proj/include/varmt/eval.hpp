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

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "varmt/corpus.hpp"
#include "varmt/synth.hpp"
#include "varmt/varietyid.hpp"

namespace varmt {

// Sufficient statistics for corpus BLEU; additive over sentences.
struct BleuStats {
  std::array<std::uint64_t, 4> matches{};
  std::array<std::uint64_t, 4> totals{};
  std::uint64_t hyp_len = 0;
  std::uint64_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats sentence_stats(const Tokens& hypothesis, const Tokens& reference);

struct BleuReport {
  double bleu = 0.0;  // 0..100
  std::array<double, 4> precisions{};
  double brevity_penalty = 1.0;
  std::uint64_t hyp_len = 0;
  std::uint64_t ref_len = 0;
};

BleuReport bleu_from_stats(const BleuStats& stats);

// Case-sensitive corpus BLEU-4 with per-sentence clipping, no smoothing.
BleuReport corpus_bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references);

struct SignificanceResult {
  double bleu_x = 0.0;
  double bleu_y = 0.0;
  double delta_bleu = 0.0;  // bleu_x - bleu_y
  double p_value = 1.0;
  std::size_t n_resamples = 0;
  double alpha = 0.05;
  bool significant = false;
  std::uint64_t seed = 0;
  std::size_t wins_x = 0;  // resamples where x scores strictly higher
  std::size_t wins_y = 0;
  std::size_t ties = 0;
  std::size_t wins = 0;  // wins of the system that is better on the full set (x on a tie)

  friend bool operator==(const SignificanceResult&, const SignificanceResult&) = default;
};

// One-sided paired bootstrap. Resample r draws its indices from
// mix_seed(seed, r), so the result does not depend on `threads`.
SignificanceResult paired_bootstrap(std::span<const Tokens> hyps_x, std::span<const Tokens> hyps_y,
                                    std::span<const Tokens> references, std::size_t n_resamples,
                                    double alpha, std::uint64_t seed, std::size_t threads = 1);

// Share of variety-marked words realized in the expected variety.
double variety_consistency(std::span<const Tokens> hypotheses, const VariantTable& table,
                           VarietyTag expected);
// Share of hypotheses the ensemble soft-fuses to the expected variety.
double variety_consistency(std::span<const Tokens> hypotheses, const VarietyScorer& judge,
                           VarietyTag expected);

struct MetricRow {
  std::string system;
  std::string testset;
  std::string metric;
  double value = 0.0;
};

// "system\ttestset\tmetric\tvalue" with a header line; values printed with
// fixed precision so reruns are byte-comparable.
std::string metrics_tsv(std::span<const MetricRow> rows);
std::string bleu_report_text(const BleuReport& report);
std::string significance_text(const SignificanceResult& result);

}  // namespace varmt
