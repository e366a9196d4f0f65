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

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "varmt/corpus.hpp"
#include "varmt/varietyid.hpp"

namespace varmt {

struct SynthConfig {
  std::size_t vocab_size = 200;  // source lexicon size
  std::size_t n_pairs_a = 1000;
  std::size_t n_pairs_b = 1000;
  double divergence_rate = 0.15;
  std::size_t min_len = 3;
  std::size_t max_len = 12;
  std::size_t n_dev = 100;   // per variety
  std::size_t n_test = 200;  // per variety
  Scenario scenario = Scenario::SemiSupervised;
  Fraction labeled_fraction{2, 3};
  std::uint64_t seed = 1;

  void validate() const;
};

// Target words that have distinct realizations in the two varieties.
class VariantTable {
 public:
  void add(const std::string& base, std::string variant_a, std::string variant_b);

  std::size_t size() const { return entries_.size(); }
  bool diverged(const std::string& base) const { return entries_.count(base) != 0; }
  // Realization of `base` in variety `tag` (identity for shared words).
  const std::string& realize(const std::string& base, VarietyTag tag) const;
  // Which variety a surface form belongs to; Unlabeled for shared words.
  VarietyTag variety_of(const std::string& word) const;
  bool has_diverged_word(const Tokens& target) const;

  const std::map<std::string, std::pair<std::string, std::string>>& entries() const { return entries_; }

  // Two tab-separated columns: variant_A, variant_B.
  void save(const std::filesystem::path& path) const;
  static VariantTable load(const std::filesystem::path& path);

 private:
  std::map<std::string, std::pair<std::string, std::string>> entries_;
  std::unordered_map<std::string, VarietyTag> surface_;
};

struct SyntheticLexicon {
  std::vector<std::string> source_words;
  std::unordered_map<std::string, std::string> word_map;  // source -> target base
  VariantTable variants;

  // Word-for-word reference translation into variety `tag`.
  Tokens translate(const Tokens& source, VarietyTag tag) const;
};

struct SyntheticData {
  PartitionedDataset data;
  SyntheticLexicon lexicon;
  // Unpartitioned training corpora in generation order.
  ParallelCorpus train_a;
  ParallelCorpus train_b;
};

// Deterministic in config.seed. Every target sentence is unique across all
// splits and varieties, so a pair is identified by its target side.
SyntheticData generate(const SynthConfig& config);

// Writes the partitioned dataset plus variants.tsv, lexicon.tsv and the raw
// line-aligned corpora under raw/ (train/dev/test per variety).
void save_synthetic(const SyntheticData& synth, const std::filesystem::path& dir);

// A five-member "ensemble" that answers from ground-truth tags, for checking
// the labeling recipes against a perfect classifier. Unknown sentences get
// (0.5, 0.5) from every member.
class OracleScorer : public VarietyScorer {
 public:
  explicit OracleScorer(const PartitionedDataset& data);
  MemberProbs member_probabilities(std::string_view sentence) const override;

 private:
  std::unordered_map<std::string, VarietyTag> truth_;
};

}  // namespace varmt
