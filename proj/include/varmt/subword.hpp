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
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "varmt/corpus.hpp"

namespace varmt {

using TokenId = std::int32_t;

// A sentence pair after subword segmentation. The source may start with a
// variety token; the target never carries BOS/EOS.
struct SegmentedPair {
  std::vector<TokenId> source;
  std::vector<TokenId> target;

  friend bool operator==(const SegmentedPair&, const SegmentedPair&) = default;
  friend auto operator<=>(const SegmentedPair&, const SegmentedPair&) = default;
};

// Byte-pair-encoding model shared by source and both target varieties.
//
// Ids 0..5 are reserved: PAD, BOS, EOS, UNK, and one target-forcing token
// per variety. Character symbols follow in byte order, then one symbol per
// merge in acquisition order. A word's last symbol carries the end-of-word
// marker, which is what lets desegment() restore token boundaries.
class SubwordModel {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kVarietyA = 4;
  static constexpr TokenId kVarietyB = 5;
  static constexpr TokenId kNumSpecials = 6;
  static constexpr std::string_view kEndOfWord = "</w>";

  using Merge = std::pair<std::string, std::string>;

  SubwordModel() = default;
  SubwordModel(std::vector<Merge> merges, std::vector<std::string> symbols,
               std::size_t target_vocab_size);

  std::size_t vocab_size() const { return units_.size(); }
  std::size_t target_vocab_size() const { return target_vocab_size_; }
  const std::vector<Merge>& merges() const { return merges_; }

  TokenId id(std::string_view unit) const;
  const std::string& unit(TokenId id) const { return units_.at(static_cast<std::size_t>(id)); }

  static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecials; }
  static bool is_variety_token(TokenId id) { return id == kVarietyA || id == kVarietyB; }
  static TokenId variety_token(VarietyTag tag);

  std::vector<std::string> segment_units(const Tokens& tokens) const;
  std::vector<TokenId> segment(const Tokens& tokens) const;
  Tokens desegment(std::span<const TokenId> ids) const;

  std::string serialize() const;
  static SubwordModel deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static SubwordModel load(const std::filesystem::path& path);
  std::uint64_t fingerprint() const;

  friend bool operator==(const SubwordModel& a, const SubwordModel& b) {
    return a.merges_ == b.merges_ && a.units_ == b.units_ &&
           a.target_vocab_size_ == b.target_vocab_size_;
  }

 private:
  struct PairHash {
    std::size_t operator()(const Merge& m) const;
  };

  void index();
  std::vector<std::string> apply_merges(std::string_view token) const;

  std::vector<Merge> merges_;
  std::vector<std::string> units_;
  std::size_t target_vocab_size_ = 0;
  std::unordered_map<std::string, TokenId> ids_;
  std::unordered_map<Merge, std::size_t, PairHash> ranks_;
};

// Greedy BPE over every source and target token of `corpora`. The most
// frequent adjacent pair is merged first, ties going to the lexicographically
// smaller (left, right). Stops at target_vocab_size or when no pair remains.
SubwordModel train_subword(std::span<const ParallelCorpus* const> corpora,
                           std::size_t target_vocab_size);

}  // namespace varmt
