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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "varmt/corpus.hpp"

namespace varmt {

// Hashed n-gram features of a target-side sentence.
//
// Word n-grams of order 1..word_ngram_max run over tokenize(text); character
// n-grams of order char_ngram_min..char_ngram_max run over the code points of
// "<" + text + ">". char_ngram_max == 0 disables character features.
struct FeatureConfig {
  int word_ngram_max = 2;
  int char_ngram_min = 2;
  int char_ngram_max = 5;
  std::uint32_t hash_buckets = 1u << 20;
  int embed_dim = 16;

  void validate() const;
  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

// Each n-gram is hashed with 64-bit FNV-1a whose state is first fed a type
// byte ('w' or 'c') and the order n, then the n-gram bytes (word n-grams
// joined by 0x1F). The bucket is the hash masked to hash_buckets.
std::vector<std::uint32_t> extract_features(std::string_view text, const FeatureConfig& config);

struct LabeledSentence {
  std::string text;
  VarietyTag tag = VarietyTag::A;
};

// Draws minority-class examples with replacement until both classes are the
// same size, then shuffles the union. Majority examples are kept as-is.
std::vector<LabeledSentence> oversample(std::span<const LabeledSentence> examples, std::uint64_t seed);

struct ProbPair {
  double a = 0.5;
  double b = 0.5;
};

class LinearVarietyClassifier {
 public:
  LinearVarietyClassifier() = default;
  // Uniform initialization in [-1/embed_dim, 1/embed_dim] from `seed`.
  LinearVarietyClassifier(const FeatureConfig& config, std::uint64_t seed);

  ProbPair predict_proba(std::string_view sentence) const;
  ProbPair predict_features(std::span<const std::uint32_t> features) const;

  const FeatureConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  std::vector<double>& input_embeddings() { return input_; }
  const std::vector<double>& input_embeddings() const { return input_; }
  std::vector<double>& output_weights() { return output_; }
  const std::vector<double>& output_weights() const { return output_; }

  void save(const std::filesystem::path& path) const;
  static LinearVarietyClassifier load(const std::filesystem::path& path);

  friend bool operator==(const LinearVarietyClassifier&, const LinearVarietyClassifier&) = default;

 private:
  FeatureConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<double> input_;   // hash_buckets x embed_dim, row-major
  std::vector<double> output_;  // 2 x embed_dim, row-major; row 0 = A
};

// Mean-of-embeddings softmax classifier trained by plain SGD on cross-entropy.
// The learning rate decays linearly from `lr` to 0 over all updates.
LinearVarietyClassifier train_classifier(std::span<const LabeledSentence> examples,
                                         const FeatureConfig& config, int epochs, double lr,
                                         std::uint64_t seed);

inline constexpr std::size_t kEnsembleSize = 5;
using MemberProbs = std::array<ProbPair, kEnsembleSize>;

// Anything that can vote like a five-member ensemble.
class VarietyScorer {
 public:
  virtual ~VarietyScorer() = default;
  virtual MemberProbs member_probabilities(std::string_view sentence) const = 0;
};

// argmax of summed member probabilities; ties (equal up to a relative 1e-12)
// go to A.
VarietyTag soft_fuse(std::span<const ProbPair> members);
// A label needs p > 0.5 from a strict majority of members, otherwise Unlabeled.
VarietyTag majority_abstain(std::span<const ProbPair> members);

VarietyTag ensemble_soft_fuse(const VarietyScorer& ensemble, std::string_view sentence);
VarietyTag ensemble_majority_abstain(const VarietyScorer& ensemble, std::string_view sentence);

class VarietyEnsemble : public VarietyScorer {
 public:
  VarietyEnsemble() = default;
  VarietyEnsemble(std::vector<LinearVarietyClassifier> members,
                  std::vector<std::uint64_t> training_fingerprints);

  MemberProbs member_probabilities(std::string_view sentence) const override;

  const std::vector<LinearVarietyClassifier>& members() const { return members_; }
  // Sorted FNV-1a hashes of every training sentence.
  const std::vector<std::uint64_t>& training_fingerprints() const { return fingerprints_; }
  // Sentences that also occur in the classifier's training data.
  std::vector<std::string> overlap(std::span<const std::string> sentences) const;

  void save(const std::filesystem::path& path) const;
  static VarietyEnsemble load(const std::filesystem::path& path);

  friend bool operator==(const VarietyEnsemble& a, const VarietyEnsemble& b) {
    return a.members_ == b.members_ && a.fingerprints_ == b.fingerprints_;
  }

 private:
  std::vector<LinearVarietyClassifier> members_;
  std::vector<std::uint64_t> fingerprints_;
};

std::uint64_t sentence_fingerprint(std::string_view sentence);

// Five members with seeds mix_seed(seed, i), trained on the same oversampled
// data. Members are independent, so `threads` does not change the result.
VarietyEnsemble train_ensemble(std::span<const LabeledSentence> examples, const FeatureConfig& config,
                               int epochs, double lr, std::uint64_t seed, std::size_t threads = 1);

struct AucFraction {
  std::uint64_t numerator = 0;    // 2 * (#B>A pairs) + #tied pairs
  std::uint64_t denominator = 1;  // 2 * nA * nB
  double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
};

// Mann-Whitney AUC: P(score of a random B example > score of a random A
// example), ties counted as 1/2. Computed exactly by a sort-and-count pass.
AucFraction roc_auc_exact(std::span<const double> scores, std::span<const VarietyTag> labels);
double roc_auc(std::span<const double> scores, std::span<const VarietyTag> labels);

}  // namespace varmt
