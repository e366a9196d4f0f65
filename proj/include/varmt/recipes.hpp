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
#include <string>
#include <string_view>
#include <vector>

#include "varmt/corpus.hpp"
#include "varmt/subword.hpp"
#include "varmt/varietyid.hpp"

namespace varmt {

enum class RecipeName : std::uint8_t { Gen, Spec, Ada, Mul, MU, MC2, MC3 };

struct RecipeKind {
  RecipeName name = RecipeName::Mul;
  VarietyTag variety = VarietyTag::Unlabeled;  // Spec and Ada only

  static RecipeKind gen() { return {RecipeName::Gen}; }
  static RecipeKind spec(VarietyTag v) { return {RecipeName::Spec, v}; }
  static RecipeKind ada(VarietyTag v) { return {RecipeName::Ada, v}; }
  static RecipeKind mul() { return {RecipeName::Mul}; }
  static RecipeKind mu() { return {RecipeName::MU}; }
  static RecipeKind mc2() { return {RecipeName::MC2}; }
  static RecipeKind mc3() { return {RecipeName::MC3}; }

  // "gen", "spec-a", "ada-b", "mul", "mu", "mc2", "mc3"
  static RecipeKind parse(std::string_view text);
  std::string str() const;
  friend bool operator==(const RecipeKind&, const RecipeKind&) = default;
};

enum class Origin : std::uint8_t { LabeledA, LabeledB, Unlabeled };
std::string_view to_string(Origin origin);

struct Provenance {
  Origin origin = Origin::LabeledA;
  std::size_t index = 0;                          // position inside the origin partition
  VarietyTag assigned = VarietyTag::Unlabeled;  // tag whose token was prepended, if any
  bool abstained = false;                         // MC3 declined to label

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct TrainingSet {
  std::vector<SegmentedPair> examples;
  std::vector<Provenance> provenance;
  RecipeKind recipe;
  double abstention_rate = 0.0;  // abstained / unlabeled examples (MC3)

  bool token_forced() const;
  // ids file: "src ids<TAB>tgt ids" per line; sidecar: origin, index, tag, abstained.
  void save(const std::filesystem::path& ids_path, const std::filesystem::path& provenance_path) const;
  static TrainingSet load(const std::filesystem::path& ids_path, const std::filesystem::path& provenance_path);

  friend bool operator==(const TrainingSet&, const TrainingSet&) = default;
};

// Returns `pair` with the variety token of `tag` at source position 0.
SegmentedPair prepend_variety_token(SegmentedPair pair, VarietyTag tag, const SubwordModel& model);

// Realizes one system configuration. Unlabeled examples are classified on
// their raw target sentence; the result order is a seeded shuffle.
TrainingSet build_training_set(const PartitionedDataset& data, RecipeKind recipe, const SubwordModel& subword,
                               const VarietyScorer* ensemble, std::uint64_t seed, std::size_t threads = 1);

struct AdaPlan {
  TrainingSet generic;   // stage 1
  TrainingSet adapted;   // stage 2, continues from stage-1 parameters
  int generic_steps = 0;
  int adapted_steps = 0;
};

AdaPlan ada_plan(const PartitionedDataset& data, VarietyTag variety, const SubwordModel& subword,
                 std::uint64_t seed, int generic_steps);

}  // namespace varmt
