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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "varmt/error.hpp"
#include "varmt/parallel.hpp"
#include "varmt/rng.hpp"

namespace varmt {

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

BleuStats sentence_stats(const Tokens& hyp, const Tokens& ref) {
  BleuStats s;
  s.hyp_len = hyp.size();
  s.ref_len = ref.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    if (hyp.size() < n) continue;
    std::map<std::vector<std::string>, std::uint64_t> ref_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i)
      ++ref_counts[std::vector<std::string>(ref.begin() + static_cast<std::ptrdiff_t>(i),
                                            ref.begin() + static_cast<std::ptrdiff_t>(i + n))];
    std::map<std::vector<std::string>, std::uint64_t> hyp_counts;
    for (std::size_t i = 0; i + n <= hyp.size(); ++i)
      ++hyp_counts[std::vector<std::string>(hyp.begin() + static_cast<std::ptrdiff_t>(i),
                                            hyp.begin() + static_cast<std::ptrdiff_t>(i + n))];
    std::uint64_t clipped = 0;
    for (const auto& [gram, c] : hyp_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) clipped += std::min(c, it->second);
    }
    s.matches[n - 1] = clipped;
    s.totals[n - 1] = hyp.size() - n + 1;
  }
  return s;
}

BleuReport bleu_from_stats(const BleuStats& s) {
  BleuReport r;
  r.hyp_len = s.hyp_len;
  r.ref_len = s.ref_len;
  bool zero = false;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    r.precisions[n] = s.totals[n] ? static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]) : 0.0;
    if (r.precisions[n] <= 0.0) zero = true;
    else log_sum += std::log(r.precisions[n]);
  }
  if (s.hyp_len == 0) {
    r.brevity_penalty = s.ref_len == 0 ? 1.0 : 0.0;
  } else {
    r.brevity_penalty = std::min(1.0, std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len)));
  }
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(0.25 * log_sum);
  return r;
}

BleuReport corpus_bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references) {
  if (hypotheses.size() != references.size())
    throw DataError("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                    std::to_string(references.size()) + " references");
  if (hypotheses.empty()) throw EmptyDataError("corpus_bleu: empty hypothesis set");
  BleuStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += sentence_stats(hypotheses[i], references[i]);
  return bleu_from_stats(total);
}

SignificanceResult paired_bootstrap(std::span<const Tokens> hyps_x, std::span<const Tokens> hyps_y,
                                    std::span<const Tokens> references, std::size_t n_resamples,
                                    double alpha, std::uint64_t seed, std::size_t threads) {
  if (hyps_x.size() != references.size() || hyps_y.size() != references.size())
    throw DataError("paired_bootstrap: system outputs and references differ in length (" +
                    std::to_string(hyps_x.size()) + ", " + std::to_string(hyps_y.size()) + ", " +
                    std::to_string(references.size()) + ")");
  if (references.empty()) throw EmptyDataError("paired_bootstrap: empty test set");
  if (n_resamples < 100) throw ConfigError("paired_bootstrap: n_resamples must be >= 100");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("paired_bootstrap: alpha must lie in (0, 1)");

  const std::size_t n = references.size();
  std::vector<BleuStats> sx(n);
  std::vector<BleuStats> sy(n);
  BleuStats tx;
  BleuStats ty;
  for (std::size_t i = 0; i < n; ++i) {
    sx[i] = sentence_stats(hyps_x[i], references[i]);
    sy[i] = sentence_stats(hyps_y[i], references[i]);
    tx += sx[i];
    ty += sy[i];
  }
  SignificanceResult res;
  res.bleu_x = bleu_from_stats(tx).bleu;
  res.bleu_y = bleu_from_stats(ty).bleu;
  res.delta_bleu = res.bleu_x - res.bleu_y;
  res.n_resamples = n_resamples;
  res.alpha = alpha;
  res.seed = seed;

  // -1: y wins, 0: tie, +1: x wins
  std::vector<int> outcome(n_resamples, 0);
  parallel_for(n_resamples, threads, [&](std::size_t r) {
    Rng rng(mix_seed(seed, r));
    BleuStats bx;
    BleuStats by;
    for (std::size_t k = 0; k < n; ++k) {
      const auto i = static_cast<std::size_t>(uniform_index(rng, n));
      bx += sx[i];
      by += sy[i];
    }
    const double x = bleu_from_stats(bx).bleu;
    const double y = bleu_from_stats(by).bleu;
    outcome[r] = x > y ? 1 : (y > x ? -1 : 0);
  });
  for (int o : outcome) {
    if (o > 0) ++res.wins_x;
    else if (o < 0) ++res.wins_y;
    else ++res.ties;
  }
  res.wins = res.delta_bleu >= 0.0 ? res.wins_x : res.wins_y;
  res.p_value = 1.0 - static_cast<double>(res.wins) / static_cast<double>(n_resamples);
  res.significant = res.p_value < alpha;
  return res;
}

double variety_consistency(std::span<const Tokens> hypotheses, const VariantTable& table,
                           VarietyTag expected) {
  if (hypotheses.empty()) throw EmptyDataError("variety_consistency: no hypotheses");
  std::size_t hit = 0;
  std::size_t marked = 0;
  for (const auto& h : hypotheses)
    for (const auto& w : h) {
      const VarietyTag v = table.variety_of(w);
      if (v == VarietyTag::Unlabeled) continue;
      ++marked;
      if (v == expected) ++hit;
    }
  if (marked == 0) throw UndefinedMetricError("variety_consistency: no variety-marked words in any hypothesis");
  return static_cast<double>(hit) / static_cast<double>(marked);
}

double variety_consistency(std::span<const Tokens> hypotheses, const VarietyScorer& judge,
                           VarietyTag expected) {
  if (hypotheses.empty()) throw EmptyDataError("variety_consistency: no hypotheses");
  std::size_t hit = 0;
  for (const auto& h : hypotheses)
    if (ensemble_soft_fuse(judge, join(h)) == expected) ++hit;
  return static_cast<double>(hit) / static_cast<double>(hypotheses.size());
}

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string metrics_tsv(std::span<const MetricRow> rows) {
  std::string out = "system\ttestset\tmetric\tvalue\n";
  for (const auto& r : rows) out += r.system + '\t' + r.testset + '\t' + r.metric + '\t' + fixed(r.value) + '\n';
  return out;
}

std::string bleu_report_text(const BleuReport& r) {
  std::ostringstream out;
  out << "bleu = " << fixed(r.bleu) << '\n';
  for (std::size_t n = 0; n < 4; ++n) out << "precision_" << n + 1 << " = " << fixed(r.precisions[n]) << '\n';
  out << "brevity_penalty = " << fixed(r.brevity_penalty) << '\n';
  out << "hyp_len = " << r.hyp_len << '\n' << "ref_len = " << r.ref_len << '\n';
  return out.str();
}

std::string significance_text(const SignificanceResult& s) {
  std::ostringstream out;
  out << "bleu_x = " << fixed(s.bleu_x) << '\n'
      << "bleu_y = " << fixed(s.bleu_y) << '\n'
      << "delta_bleu = " << fixed(s.delta_bleu) << '\n'
      << "p_value = " << fixed(s.p_value) << '\n'
      << "n_resamples = " << s.n_resamples << '\n'
      << "alpha = " << fixed(s.alpha) << '\n'
      << "significant = " << (s.significant ? "true" : "false") << '\n'
      << "seed = " << s.seed << '\n'
      << "wins_x = " << s.wins_x << '\n'
      << "wins_y = " << s.wins_y << '\n'
      << "ties = " << s.ties << '\n';
  return out.str();
}

}  // namespace varmt
