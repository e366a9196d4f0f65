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

#include "varmt/recipes.hpp"

#include <optional>
#include <sstream>

#include "varmt/error.hpp"
#include "varmt/parallel.hpp"
#include "varmt/rng.hpp"

namespace varmt {

RecipeKind RecipeKind::parse(std::string_view text) {
  if (text == "gen") return gen();
  if (text == "mul") return mul();
  if (text == "mu" || text == "m-u") return mu();
  if (text == "mc2" || text == "m-c2") return mc2();
  if (text == "mc3" || text == "m-c3") return mc3();
  for (auto [prefix, name] : {std::pair{std::string_view("spec-"), RecipeName::Spec},
                              std::pair{std::string_view("ada-"), RecipeName::Ada}}) {
    if (text.substr(0, prefix.size()) == prefix && text.size() == prefix.size() + 1) {
      const VarietyTag v = parse_variety_tag(text.substr(prefix.size()));
      if (v == VarietyTag::Unlabeled) break;
      return {name, v};
    }
  }
  throw ConfigError("unknown recipe '" + std::string(text) +
                    "' (expected gen, spec-a, spec-b, ada-a, ada-b, mul, mu, mc2, mc3)");
}

std::string RecipeKind::str() const {
  const std::string v = variety == VarietyTag::B ? "b" : "a";
  switch (name) {
    case RecipeName::Gen: return "gen";
    case RecipeName::Spec: return "spec-" + v;
    case RecipeName::Ada: return "ada-" + v;
    case RecipeName::Mul: return "mul";
    case RecipeName::MU: return "mu";
    case RecipeName::MC2: return "mc2";
    case RecipeName::MC3: return "mc3";
  }
  return "?";
}

std::string_view to_string(Origin origin) {
  switch (origin) {
    case Origin::LabeledA: return "labeled_a";
    case Origin::LabeledB: return "labeled_b";
    case Origin::Unlabeled: return "unlabeled";
  }
  return "?";
}

namespace {

Origin parse_origin(std::string_view s) {
  if (s == "labeled_a") return Origin::LabeledA;
  if (s == "labeled_b") return Origin::LabeledB;
  if (s == "unlabeled") return Origin::Unlabeled;
  throw FormatError("unknown provenance origin '" + std::string(s) + "'");
}

}  // namespace

bool TrainingSet::token_forced() const {
  for (const auto& e : examples)
    if (!e.source.empty() && SubwordModel::is_variety_token(e.source.front())) return true;
  return false;
}

SegmentedPair prepend_variety_token(SegmentedPair pair, VarietyTag tag, const SubwordModel& model) {
  if (tag == VarietyTag::Unlabeled) throw ConfigError("prepend_variety_token: tag must be A or B");
  if (!pair.source.empty() && SubwordModel::is_variety_token(pair.source.front()))
    throw DoubleTagError("source already starts with variety token '" + model.unit(pair.source.front()) + "'");
  pair.source.insert(pair.source.begin(), SubwordModel::variety_token(tag));
  return pair;
}

TrainingSet build_training_set(const PartitionedDataset& data, RecipeKind recipe, const SubwordModel& subword,
                               const VarietyScorer* ensemble, std::uint64_t seed, std::size_t threads) {
  const bool labels_unlabeled = recipe.name == RecipeName::MC2 || recipe.name == RecipeName::MC3;
  const bool uses_unlabeled = labels_unlabeled || recipe.name == RecipeName::MU;
  const bool all_labeled =
      data.scenario == Scenario::Supervised || data.labeled_fraction.num == data.labeled_fraction.den;

  switch (recipe.name) {
    case RecipeName::Ada:
      throw ConfigError("recipe ada is a two-stage plan; build it with ada_plan");
    case RecipeName::Spec: {
      const auto& part = recipe.variety == VarietyTag::B ? data.labeled_b : data.labeled_a;
      if (recipe.variety == VarietyTag::Unlabeled) throw ConfigError("spec recipe needs a variety");
      if (part.empty()) throw EmptyDataError("spec-" + std::string(to_string(recipe.variety)) + ": labeled partition is empty");
      break;
    }
    case RecipeName::Mul:
      if (data.labeled_a.empty() || data.labeled_b.empty())
        throw EmptyDataError("mul: both labeled partitions must be non-empty");
      break;
    default:
      break;
  }
  if (labels_unlabeled && ensemble == nullptr)
    throw ConfigError(recipe.str() + ": a variety classifier ensemble is required");
  if (uses_unlabeled && data.unlabeled.empty() && !all_labeled)
    throw EmptyDataError(recipe.str() + ": the unlabeled partition is empty");

  // Fully automatic labeling must not reuse the classifier's own training data.
  if (labels_unlabeled && data.labeled_a.empty() && data.labeled_b.empty()) {
    if (const auto* trained = dynamic_cast<const VarietyEnsemble*>(ensemble)) {
      std::vector<std::string> targets;
      for (const auto& p : data.unlabeled.pairs) targets.push_back(join(p.target));
      const auto shared = trained->overlap(targets);
      if (!shared.empty())
        throw ContaminationError(recipe.str() + ": " + std::to_string(shared.size()) +
                                 " NMT training sentence(s) also occur in the classifier training data, e.g. '" +
                                 shared.front() + "'");
    }
  }

  TrainingSet set;
  set.recipe = recipe;
  const auto add = [&](const ParallelCorpus& part, Origin origin, std::optional<VarietyTag> tag) {
    for (std::size_t i = 0; i < part.size(); ++i) {
      SegmentedPair pair{subword.segment(part.pairs[i].source), subword.segment(part.pairs[i].target)};
      Provenance prov{origin, i, VarietyTag::Unlabeled, false};
      if (tag) {
        pair = prepend_variety_token(std::move(pair), *tag, subword);
        prov.assigned = *tag;
      }
      set.examples.push_back(std::move(pair));
      set.provenance.push_back(prov);
    }
  };

  switch (recipe.name) {
    case RecipeName::Gen:
      add(data.labeled_a, Origin::LabeledA, std::nullopt);
      add(data.labeled_b, Origin::LabeledB, std::nullopt);
      add(data.unlabeled, Origin::Unlabeled, std::nullopt);
      break;
    case RecipeName::Spec:
      if (recipe.variety == VarietyTag::A) add(data.labeled_a, Origin::LabeledA, std::nullopt);
      else add(data.labeled_b, Origin::LabeledB, std::nullopt);
      break;
    case RecipeName::Mul:
    case RecipeName::MU:
    case RecipeName::MC2:
    case RecipeName::MC3:
      add(data.labeled_a, Origin::LabeledA, VarietyTag::A);
      add(data.labeled_b, Origin::LabeledB, VarietyTag::B);
      if (recipe.name == RecipeName::MU) add(data.unlabeled, Origin::Unlabeled, std::nullopt);
      break;
    case RecipeName::Ada:
      break;
  }

  if (labels_unlabeled) {
    std::vector<VarietyTag> labels(data.unlabeled.size());
    parallel_for(labels.size(), threads, [&](std::size_t i) {
      const std::string sentence = join(data.unlabeled.pairs[i].target);
      labels[i] = recipe.name == RecipeName::MC2 ? ensemble_soft_fuse(*ensemble, sentence)
                                                 : ensemble_majority_abstain(*ensemble, sentence);
    });
    std::size_t abstained = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto& p = data.unlabeled.pairs[i];
      SegmentedPair pair{subword.segment(p.source), subword.segment(p.target)};
      Provenance prov{Origin::Unlabeled, i, labels[i], false};
      if (labels[i] == VarietyTag::Unlabeled) {
        prov.abstained = true;
        ++abstained;
      } else {
        pair = prepend_variety_token(std::move(pair), labels[i], subword);
      }
      set.examples.push_back(std::move(pair));
      set.provenance.push_back(prov);
    }
    set.abstention_rate = labels.empty() ? 0.0 : static_cast<double>(abstained) / static_cast<double>(labels.size());
  }

  // Joint seeded shuffle of examples and provenance.
  std::vector<std::size_t> order(set.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x7ec));
  shuffle(std::span<std::size_t>(order), rng);
  TrainingSet shuffled;
  shuffled.recipe = set.recipe;
  shuffled.abstention_rate = set.abstention_rate;
  shuffled.examples.reserve(order.size());
  shuffled.provenance.reserve(order.size());
  for (std::size_t k : order) {
    shuffled.examples.push_back(std::move(set.examples[k]));
    shuffled.provenance.push_back(set.provenance[k]);
  }
  return shuffled;
}

AdaPlan ada_plan(const PartitionedDataset& data, VarietyTag variety, const SubwordModel& subword,
                 std::uint64_t seed, int generic_steps) {
  if (data.scenario != Scenario::Supervised) throw ConfigError("ada_plan: requires the supervised scenario");
  if (variety == VarietyTag::Unlabeled) throw ConfigError("ada_plan: variety must be A or B");
  if (generic_steps < 2) throw ConfigError("ada_plan: generic stage needs at least 2 steps");
  AdaPlan plan;
  plan.generic = build_training_set(data, RecipeKind::gen(), subword, nullptr, seed);
  plan.adapted = build_training_set(data, RecipeKind::spec(variety), subword, nullptr, seed);
  plan.adapted.recipe = RecipeKind::ada(variety);
  plan.generic_steps = generic_steps;
  plan.adapted_steps = generic_steps / 2;
  return plan;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

std::string ids_text(const std::vector<TokenId>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += std::to_string(ids[i]);
  }
  return out;
}

std::vector<TokenId> parse_ids(std::string_view s, const std::string& where) {
  std::vector<TokenId> out;
  std::istringstream in{std::string(s)};
  long long v = 0;
  while (in >> v) out.push_back(static_cast<TokenId>(v));
  if (!in.eof()) throw FormatError(where + ": malformed id list");
  return out;
}

}  // namespace

void TrainingSet::save(const std::filesystem::path& ids_path, const std::filesystem::path& provenance_path) const {
  std::vector<std::string> ids;
  std::vector<std::string> prov;
  ids.reserve(examples.size());
  prov.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    ids.push_back(ids_text(examples[i].source) + '\t' + ids_text(examples[i].target));
    const auto& p = provenance[i];
    prov.push_back(std::string(to_string(p.origin)) + '\t' + std::to_string(p.index) + '\t' +
                   std::string(to_string(p.assigned)) + '\t' + (p.abstained ? "1" : "0"));
  }
  write_lines(ids, ids_path);
  write_lines(prov, provenance_path);
}

TrainingSet TrainingSet::load(const std::filesystem::path& ids_path, const std::filesystem::path& provenance_path) {
  const auto ids = read_lines(ids_path);
  const auto prov = read_lines(provenance_path);
  if (ids.size() != prov.size())
    throw AlignmentError("training set: " + std::to_string(ids.size()) + " id lines vs " +
                         std::to_string(prov.size()) + " provenance lines");
  TrainingSet set;
  std::size_t abstained = 0;
  std::size_t unlabeled = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::string where = ids_path.string() + ":" + std::to_string(i + 1);
    const auto tab = ids[i].find('\t');
    if (tab == std::string::npos) throw FormatError(where + ": missing tab");
    set.examples.push_back({parse_ids(std::string_view(ids[i]).substr(0, tab), where),
                            parse_ids(std::string_view(ids[i]).substr(tab + 1), where)});
    std::istringstream in(prov[i]);
    std::string origin, tag, flag;
    std::size_t index = 0;
    if (!(in >> origin >> index >> tag >> flag)) throw FormatError(provenance_path.string() + ":" + std::to_string(i + 1) + ": malformed provenance");
    Provenance p{parse_origin(origin), index, parse_variety_tag(tag), flag == "1"};
    if (p.origin == Origin::Unlabeled) ++unlabeled;
    if (p.abstained) ++abstained;
    set.provenance.push_back(p);
  }
  set.abstention_rate = unlabeled ? static_cast<double>(abstained) / static_cast<double>(unlabeled) : 0.0;
  return set;
}

}  // namespace varmt
