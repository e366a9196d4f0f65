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
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace varmt {

enum class VarietyTag : std::uint8_t { A = 0, B = 1, Unlabeled = 2 };

std::string_view to_string(VarietyTag tag);
VarietyTag parse_variety_tag(std::string_view text);

using Tokens = std::vector<std::string>;

struct SentencePair {
  Tokens source;
  Tokens target;
  VarietyTag tag = VarietyTag::Unlabeled;

  friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::array<std::string, 2> variety_names{"A", "B"};

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  friend bool operator==(const ParallelCorpus&, const ParallelCorpus&) = default;
};

enum class Scenario : std::uint8_t { Supervised, Unsupervised, SemiSupervised };

std::string_view to_string(Scenario scenario);
Scenario parse_scenario(std::string_view text);

// Exact rational in [0, 1].
struct Fraction {
  std::int64_t num = 2;
  std::int64_t den = 3;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
  friend bool operator==(const Fraction&, const Fraction&) = default;
};

// Accepts "p/q" or an integer "0"/"1".
Fraction parse_fraction(std::string_view text);

// round(fraction * n), halves rounded up, computed exactly.
std::size_t labeled_count(std::size_t n, Fraction fraction);

struct PartitionedDataset {
  ParallelCorpus labeled_a;
  ParallelCorpus labeled_b;
  ParallelCorpus unlabeled;
  ParallelCorpus dev_a;
  ParallelCorpus dev_b;
  ParallelCorpus test_a;
  ParallelCorpus test_b;
  Scenario scenario = Scenario::SemiSupervised;
  Fraction labeled_fraction;
  std::uint64_t seed = 0;
  // Ground-truth tags of `unlabeled`, index-aligned. Never consulted by the
  // labeling recipes; kept for evaluation on synthetic data.
  std::vector<VarietyTag> unlabeled_truth;

  std::size_t training_size() const {
    return labeled_a.size() + labeled_b.size() + unlabeled.size();
  }
  friend bool operator==(const PartitionedDataset&, const PartitionedDataset&) = default;
};

// Whitespace split, then leading/trailing punctuation characters detached
// one per token. Inner punctuation ("I'm", "3.5") stays attached.
Tokens tokenize(std::string_view text);
std::string join(const Tokens& tokens);

bool is_punctuation(char32_t cp);
bool is_space(char32_t cp);

ParallelCorpus load_parallel(const std::filesystem::path& source_path,
                             const std::filesystem::path& target_path, VarietyTag tag);

// Keeps pairs whose sides both have at most max_len tokens.
ParallelCorpus filter_by_length(const ParallelCorpus& corpus, std::size_t max_len);

// Drops pairs with an empty side.
ParallelCorpus drop_empty(const ParallelCorpus& corpus);

// Removes repeated (source, target) pairs, keeping first occurrences.
ParallelCorpus deduplicate(const ParallelCorpus& corpus);

std::string transliterate_sr_cyrillic_to_latin(std::string_view text);

PartitionedDataset partition(const ParallelCorpus& corpus_a, const ParallelCorpus& corpus_b,
                             const ParallelCorpus& dev_a, const ParallelCorpus& dev_b,
                             const ParallelCorpus& test_a, const ParallelCorpus& test_b,
                             Scenario scenario, Fraction labeled_fraction, std::uint64_t seed);

// Line-aligned text files, one tokenized sentence per line.
void write_corpus_files(const ParallelCorpus& corpus, const std::filesystem::path& source_path,
                        const std::filesystem::path& target_path);

void save_dataset(const PartitionedDataset& data, const std::filesystem::path& dir);
PartitionedDataset load_dataset(const std::filesystem::path& dir);

// Flat "key = value" manifests. Lines starting with '#' or '[' are ignored on read.
using Manifest = std::map<std::string, std::string>;
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::vector<std::string>& lines, const std::filesystem::path& path);
// Writes to a sibling temporary and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace varmt
