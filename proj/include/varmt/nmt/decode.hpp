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

#include <optional>
#include <span>
#include <vector>

#include "varmt/corpus.hpp"
#include "varmt/nmt/transformer.hpp"
#include "varmt/subword.hpp"

namespace varmt {

struct DecodeParams {
  int beam_size = 4;
  double length_penalty = 1.0;  // score = log p / length^alpha
  int max_len = 0;              // 0: 2 * source + 10, capped by the model
  std::size_t threads = 1;
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // EOS excluded
  double log_prob = 0.0;        // summed over generated tokens, EOS included
  std::size_t length = 0;       // generated tokens, EOS included
  double score = 0.0;
};

double normalized_score(double log_prob, std::size_t length, double alpha);
bool is_generatable(TokenId id);

Hypothesis greedy_search(const TranslationModel& model, std::span<const TokenId> source, const DecodeParams& params);
// beam_size 1 is greedy search; wider beams also consider the greedy hypothesis.
Hypothesis beam_search(const TranslationModel& model, std::span<const TokenId> source, const DecodeParams& params);
std::vector<Hypothesis> decode_all(const TranslationModel& model, const std::vector<std::vector<TokenId>>& sources,
                                   const DecodeParams& params);

Tokens translate(const TranslationModel& model, const SubwordModel& subword, const Tokens& source,
                 std::optional<VarietyTag> variety, const DecodeParams& params);
std::vector<Tokens> translate_all(const TranslationModel& model, const SubwordModel& subword,
                                  std::span<const Tokens> sources, std::optional<VarietyTag> variety,
                                  const DecodeParams& params);

struct DevSet {
  ParallelCorpus corpus;
  std::optional<VarietyTag> variety;  // requested output variety, if any
};

struct CheckpointChoice {
  std::size_t index = 0;
  double pooled_bleu = 0.0;
  std::vector<double> per_set_bleu;
  std::vector<double> all_pooled_bleu;  // one per checkpoint
};

// Argmax of pooled dev BLEU over all sets; ties go to the later checkpoint.
CheckpointChoice select_best_checkpoint(std::span<const TranslationModel> checkpoints, const SubwordModel& subword,
                                        std::span<const DevSet> dev, const DecodeParams& params);

}  // namespace varmt
