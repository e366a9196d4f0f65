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

#include "varmt/nmt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "varmt/error.hpp"
#include "varmt/eval.hpp"
#include "varmt/parallel.hpp"

namespace varmt {

double normalized_score(double log_prob, std::size_t length, double alpha) {
  return log_prob / std::pow(static_cast<double>(std::max<std::size_t>(length, 1)), alpha);
}

bool is_generatable(TokenId id) {
  return id == SubwordModel::kEos || !SubwordModel::is_special(id);
}

namespace {

std::size_t max_length(const TranslationModel& model, std::size_t source_len, const DecodeParams& params) {
  const std::size_t cap = std::min<std::size_t>(kMaxUnits + 1, static_cast<std::size_t>(model.config.max_positions));
  const std::size_t want = params.max_len > 0 ? static_cast<std::size_t>(params.max_len) : 2 * source_len + 10;
  return std::min(want, cap);
}

void check_params(const DecodeParams& params) {
  if (params.beam_size < 1) throw ConfigError("beam_size must be >= 1");
  if (params.max_len < 0) throw ConfigError("max_len must be >= 0");
  if (!(params.length_penalty >= 0.0)) throw ConfigError("length_penalty must be >= 0");
}

TokenId best_token(const Matrix& logp, Eigen::Index row) {
  TokenId best = SubwordModel::kEos;
  double best_lp = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < logp.cols(); ++k) {
    const auto id = static_cast<TokenId>(k);
    if (is_generatable(id) && logp(row, k) > best_lp) {
      best_lp = logp(row, k);
      best = id;
    }
  }
  return best;
}

// Lock-step greedy decoding of several sources sharing one session.
std::vector<Hypothesis> greedy_batch(const TranslationModel& model, const std::vector<std::vector<TokenId>>& sources,
                                     const DecodeParams& params) {
  std::vector<Hypothesis> out(sources.size());
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < sources.size(); ++i)
    if (!sources[i].empty()) active.push_back(i);
  if (active.empty()) return out;
  std::vector<std::vector<TokenId>> encoded;
  for (std::size_t i : active) encoded.push_back(sources[i]);
  const DecoderSession session(model, encoded);

  std::vector<DecoderSession::State> states(active.size(), session.initial_state());
  std::vector<std::size_t> slot(active.size()), limit(active.size());
  std::vector<TokenId> last(active.size());
  for (std::size_t j = 0; j < active.size(); ++j) {
    slot[j] = j;
    limit[j] = max_length(model, sources[active[j]].size(), params);
    last[j] = decoder_start(sources[active[j]]);
  }
  std::vector<std::size_t> live(active.size());
  for (std::size_t j = 0; j < live.size(); ++j) live[j] = j;
  while (!live.empty()) {
    std::vector<std::size_t> src;
    std::vector<DecoderSession::State*> st;
    std::vector<TokenId> tok;
    for (std::size_t j : live) {
      src.push_back(slot[j]);
      st.push_back(&states[j]);
      tok.push_back(last[j]);
    }
    const Matrix logp = session.step(src, st, tok);
    std::vector<std::size_t> still;
    for (std::size_t r = 0; r < live.size(); ++r) {
      const std::size_t j = live[r];
      Hypothesis& h = out[active[j]];
      const TokenId t = best_token(logp, static_cast<Eigen::Index>(r));
      h.log_prob += logp(static_cast<Eigen::Index>(r), t);
      ++h.length;
      if (t != SubwordModel::kEos) h.tokens.push_back(t);
      if (t != SubwordModel::kEos && h.length < limit[j]) {
        last[j] = t;
        still.push_back(j);
      }
    }
    live = std::move(still);
  }
  for (auto& h : out) h.score = normalized_score(h.log_prob, h.length, params.length_penalty);
  return out;
}

struct Beam {
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  DecoderSession::State state;
};

}  // namespace

Hypothesis greedy_search(const TranslationModel& model, std::span<const TokenId> source, const DecodeParams& params) {
  check_params(params);
  return greedy_batch(model, {std::vector<TokenId>(source.begin(), source.end())}, params).front();
}

Hypothesis beam_search(const TranslationModel& model, std::span<const TokenId> source, const DecodeParams& params) {
  check_params(params);
  Hypothesis greedy = greedy_search(model, source, params);
  if (params.beam_size == 1 || source.empty()) return greedy;

  const std::vector<TokenId> src(source.begin(), source.end());
  const DecoderSession session(model, {src});
  const std::size_t beam = static_cast<std::size_t>(params.beam_size);
  const std::size_t limit = max_length(model, src.size(), params);
  const TokenId start = decoder_start(src);

  std::vector<Hypothesis> finished;
  std::vector<Beam> alive(1);
  alive.front().state = session.initial_state();
  for (std::size_t t = 0; t < limit && !alive.empty(); ++t) {
    std::vector<std::size_t> idx(alive.size(), 0);
    std::vector<DecoderSession::State*> st;
    std::vector<TokenId> tok;
    for (auto& b : alive) {
      st.push_back(&b.state);
      tok.push_back(b.tokens.empty() ? start : b.tokens.back());
    }
    const Matrix logp = session.step(idx, st, tok);

    // (score, parent, token); best first, ties by parent then token.
    std::vector<std::tuple<double, std::size_t, TokenId>> cand;
    for (std::size_t i = 0; i < alive.size(); ++i)
      for (Eigen::Index k = 0; k < logp.cols(); ++k)
        if (is_generatable(static_cast<TokenId>(k)))
          cand.emplace_back(alive[i].log_prob + logp(static_cast<Eigen::Index>(i), k), i, static_cast<TokenId>(k));
    const std::size_t keep = std::min(cand.size(), 2 * beam);
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                      [](const auto& a, const auto& b) {
                        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
                        if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
                        return std::get<2>(a) < std::get<2>(b);
                      });
    std::vector<Beam> next;
    for (std::size_t c = 0; c < keep && next.size() < beam; ++c) {
      const auto [lp, parent, token] = cand[c];
      const bool last_step = t + 1 == limit;
      if (token == SubwordModel::kEos || last_step) {
        Hypothesis h;
        h.tokens = alive[parent].tokens;
        if (token != SubwordModel::kEos) h.tokens.push_back(token);
        h.log_prob = lp;
        h.length = t + 1;
        h.score = normalized_score(lp, h.length, params.length_penalty);
        finished.push_back(std::move(h));
        continue;
      }
      Beam b{alive[parent].tokens, lp, alive[parent].state};
      b.tokens.push_back(token);
      next.push_back(std::move(b));
    }
    if (finished.size() >= beam) break;
    alive = std::move(next);
  }

  Hypothesis best = std::move(greedy);
  for (auto& h : finished)
    if (h.score > best.score) best = std::move(h);
  return best;
}

std::vector<Hypothesis> decode_all(const TranslationModel& model, const std::vector<std::vector<TokenId>>& sources,
                                   const DecodeParams& params) {
  check_params(params);
  if (params.beam_size == 1) {
    constexpr std::size_t kChunk = 64;
    std::vector<Hypothesis> out(sources.size());
    const std::size_t chunks = (sources.size() + kChunk - 1) / kChunk;
    parallel_for(chunks, params.threads, [&](std::size_t c) {
      const std::size_t lo = c * kChunk, hi = std::min(sources.size(), lo + kChunk);
      std::vector<std::vector<TokenId>> part(sources.begin() + static_cast<std::ptrdiff_t>(lo),
                                             sources.begin() + static_cast<std::ptrdiff_t>(hi));
      auto hyps = greedy_batch(model, part, params);
      for (std::size_t i = lo; i < hi; ++i) out[i] = std::move(hyps[i - lo]);
    });
    return out;
  }
  std::vector<Hypothesis> out(sources.size());
  parallel_for(sources.size(), params.threads, [&](std::size_t i) { out[i] = beam_search(model, sources[i], params); });
  return out;
}

namespace {

std::vector<TokenId> model_source(const SubwordModel& subword, const Tokens& source, std::optional<VarietyTag> variety) {
  std::vector<TokenId> ids = subword.segment(source);
  if (ids.size() > kMaxUnits) ids.resize(kMaxUnits);
  if (variety && !ids.empty()) ids.insert(ids.begin(), SubwordModel::variety_token(*variety));
  return ids;
}

void check_compatible(const TranslationModel& model, const SubwordModel& subword, std::optional<VarietyTag> variety) {
  if (model.subword_fingerprint != 0 && model.subword_fingerprint != subword.fingerprint())
    throw ConfigError("translation model was trained with a different subword model");
  if (model.config.vocab_size != static_cast<int>(subword.vocab_size()))
    throw ConfigError("model vocabulary (" + std::to_string(model.config.vocab_size) +
                      ") does not match the subword model (" + std::to_string(subword.vocab_size()) + ")");
  if (variety && *variety == VarietyTag::Unlabeled) throw ConfigError("requested variety must be A or B");
  if (variety && !model.token_forced)
    throw ConfigError("model was not trained with variety tokens; cannot request a variety");
  if (!variety && model.token_forced)
    throw ConfigError("model was trained with variety tokens; a target variety is required");
}

}  // namespace

Tokens translate(const TranslationModel& model, const SubwordModel& subword, const Tokens& source,
                 std::optional<VarietyTag> variety, const DecodeParams& params) {
  check_compatible(model, subword, variety);
  const auto ids = model_source(subword, source, variety);
  const Hypothesis h = beam_search(model, ids, params);
  return subword.desegment(h.tokens);
}

std::vector<Tokens> translate_all(const TranslationModel& model, const SubwordModel& subword,
                                  std::span<const Tokens> sources, std::optional<VarietyTag> variety,
                                  const DecodeParams& params) {
  check_compatible(model, subword, variety);
  std::vector<std::vector<TokenId>> ids;
  ids.reserve(sources.size());
  for (const auto& s : sources) ids.push_back(model_source(subword, s, variety));
  const auto hyps = decode_all(model, ids, params);
  std::vector<Tokens> out;
  out.reserve(hyps.size());
  for (const auto& h : hyps) out.push_back(subword.desegment(h.tokens));
  return out;
}

CheckpointChoice select_best_checkpoint(std::span<const TranslationModel> checkpoints, const SubwordModel& subword,
                                        std::span<const DevSet> dev, const DecodeParams& params) {
  if (checkpoints.empty()) throw ConfigError("no checkpoints to select from");
  std::size_t dev_size = 0;
  for (const auto& d : dev) dev_size += d.corpus.size();
  if (dev_size == 0) throw ConfigError("checkpoint selection needs a non-empty dev set");

  CheckpointChoice choice;
  if (checkpoints.size() == 1) {
    choice.all_pooled_bleu.push_back(std::numeric_limits<double>::quiet_NaN());
    return choice;
  }
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    BleuStats pooled;
    std::vector<double> per_set;
    for (const auto& d : dev) {
      std::vector<Tokens> sources, refs;
      for (const auto& p : d.corpus.pairs) {
        sources.push_back(p.source);
        refs.push_back(p.target);
      }
      const auto hyps = translate_all(checkpoints[c], subword, sources, d.variety, params);
      BleuStats set_stats;
      for (std::size_t i = 0; i < hyps.size(); ++i) set_stats += sentence_stats(hyps[i], refs[i]);
      per_set.push_back(bleu_from_stats(set_stats).bleu);
      pooled += set_stats;
    }
    const double bleu = bleu_from_stats(pooled).bleu;
    choice.all_pooled_bleu.push_back(bleu);
    if (c == 0 || bleu >= choice.pooled_bleu) {
      choice.index = c;
      choice.pooled_bleu = bleu;
      choice.per_set_bleu = std::move(per_set);
    }
  }
  return choice;
}

}  // namespace varmt
