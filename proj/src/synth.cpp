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

#include "varmt/synth.hpp"

#include <cmath>

#include "varmt/error.hpp"
#include "varmt/rng.hpp"

namespace varmt {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  if (vocab_size < 1) throw ConfigError("synth: vocab_size must be positive");
  if (!(divergence_rate >= 0.0 && divergence_rate <= 1.0))
    throw ConfigError("synth: divergence_rate must lie in [0, 1]");
  if (min_len < 1 || min_len > max_len) throw ConfigError("synth: need 1 <= min_len <= max_len");
  if (max_len > 70) throw ConfigError("synth: max_len above the 70-token corpus limit");
  if (labeled_fraction.den <= 0 || labeled_fraction.num < 0 || labeled_fraction.num > labeled_fraction.den)
    throw ConfigError("synth: labeled_fraction outside [0, 1]");
}

void VariantTable::add(const std::string& base, std::string variant_a, std::string variant_b) {
  if (variant_a == variant_b) throw ConfigError("variant table: identical variants for '" + base + "'");
  surface_[variant_a] = VarietyTag::A;
  surface_[variant_b] = VarietyTag::B;
  entries_[base] = {std::move(variant_a), std::move(variant_b)};
}

const std::string& VariantTable::realize(const std::string& base, VarietyTag tag) const {
  auto it = entries_.find(base);
  if (it == entries_.end()) return base;
  return tag == VarietyTag::B ? it->second.second : it->second.first;
}

VarietyTag VariantTable::variety_of(const std::string& word) const {
  auto it = surface_.find(word);
  return it == surface_.end() ? VarietyTag::Unlabeled : it->second;
}

bool VariantTable::has_diverged_word(const Tokens& target) const {
  for (const auto& w : target)
    if (variety_of(w) != VarietyTag::Unlabeled) return true;
  return false;
}

void VariantTable::save(const fs::path& path) const {
  std::vector<std::string> lines;
  for (const auto& [base, v] : entries_) lines.push_back(base + '\t' + v.first + '\t' + v.second);
  write_lines(lines, path);
}

VariantTable VariantTable::load(const fs::path& path) {
  VariantTable t;
  std::size_t lineno = 0;
  for (const auto& l : read_lines(path)) {
    ++lineno;
    if (l.empty()) continue;
    const auto t1 = l.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : l.find('\t', t1 + 1);
    if (t2 == std::string::npos || l.find('\t', t2 + 1) != std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected base, A and B columns");
    t.add(l.substr(0, t1), l.substr(t1 + 1, t2 - t1 - 1), l.substr(t2 + 1));
  }
  return t;
}

Tokens SyntheticLexicon::translate(const Tokens& source, VarietyTag tag) const {
  Tokens out;
  out.reserve(source.size());
  for (const auto& w : source) {
    auto it = word_map.find(w);
    if (it == word_map.end()) throw DataError("synthetic lexicon has no entry for '" + w + "'");
    out.push_back(variants.realize(it->second, tag));
  }
  return out;
}

namespace {

class WordFactory {
 public:
  explicit WordFactory(Rng& rng) : rng_(rng) {}

  std::string make(std::string_view consonants, std::string_view vowels) {
    for (;;) {
      const std::size_t syllables = 2 + uniform_index(rng_, 2);
      std::string w;
      for (std::size_t s = 0; s < syllables; ++s) {
        w.push_back(consonants[uniform_index(rng_, consonants.size())]);
        w.push_back(vowels[uniform_index(rng_, vowels.size())]);
      }
      if (used_.insert(w).second) return w;
    }
  }

 private:
  Rng& rng_;
  std::unordered_set<std::string> used_;
};

}  // namespace

SyntheticData generate(const SynthConfig& config) {
  config.validate();
  Rng rng(mix_seed(config.seed, 0x5a));
  WordFactory words(rng);
  SyntheticData out;
  auto& lex = out.lexicon;

  std::vector<std::string> bases;
  for (std::size_t i = 0; i < config.vocab_size; ++i) {
    lex.source_words.push_back(words.make("bdgkmnprstvz", "aeiou"));
    bases.push_back(words.make("cfhjlwxy", "aeiouy"));
    lex.word_map[lex.source_words.back()] = bases.back();
  }
  const auto n_diverged = static_cast<std::size_t>(std::llround(config.divergence_rate * static_cast<double>(config.vocab_size)));
  std::vector<std::size_t> order(bases.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(std::span<std::size_t>(order), rng);
  for (std::size_t k = 0; k < n_diverged; ++k) {
    const auto& base = bases[order[k]];
    std::string va = words.make("cfhjlwxy", "ao");
    std::string vb = words.make("cfhjlwxy", "eiu");
    lex.variants.add(base, std::move(va), std::move(vb));
  }

  std::unordered_set<std::string> seen_targets;
  const auto sample = [&](std::size_t n, VarietyTag tag) {
    ParallelCorpus c;
    c.variety_names = {"A", "B"};
    std::size_t attempts = 0;
    while (c.size() < n) {
      if (++attempts > 100 * n + 1000)
        throw ConfigError("synth: cannot draw enough distinct sentences; enlarge vocab_size or lengths");
      const std::size_t len = config.min_len + uniform_index(rng, config.max_len - config.min_len + 1);
      Tokens src;
      for (std::size_t i = 0; i < len; ++i) src.push_back(lex.source_words[uniform_index(rng, lex.source_words.size())]);
      Tokens tgt = lex.translate(src, tag);
      if (!seen_targets.insert(join(tgt)).second) continue;
      c.pairs.push_back({std::move(src), std::move(tgt), tag});
    }
    return c;
  };
  out.train_a = sample(config.n_pairs_a, VarietyTag::A);
  out.train_b = sample(config.n_pairs_b, VarietyTag::B);
  const ParallelCorpus dev_a = sample(config.n_dev, VarietyTag::A);
  const ParallelCorpus dev_b = sample(config.n_dev, VarietyTag::B);
  const ParallelCorpus test_a = sample(config.n_test, VarietyTag::A);
  const ParallelCorpus test_b = sample(config.n_test, VarietyTag::B);
  out.data = partition(out.train_a, out.train_b, dev_a, dev_b, test_a, test_b, config.scenario,
                       config.labeled_fraction, config.seed);
  return out;
}

void save_synthetic(const SyntheticData& synth, const fs::path& dir) {
  save_dataset(synth.data, dir);
  synth.lexicon.variants.save(dir / "variants.tsv");
  std::vector<std::string> lex;
  for (const auto& w : synth.lexicon.source_words) lex.push_back(w + '\t' + synth.lexicon.word_map.at(w));
  write_lines(lex, dir / "lexicon.tsv");
  const auto raw = dir / "raw";
  write_corpus_files(synth.train_a, raw / "train_a.src", raw / "train_a.tgt");
  write_corpus_files(synth.train_b, raw / "train_b.src", raw / "train_b.tgt");
  write_corpus_files(synth.data.dev_a, raw / "dev_a.src", raw / "dev_a.tgt");
  write_corpus_files(synth.data.dev_b, raw / "dev_b.src", raw / "dev_b.tgt");
  write_corpus_files(synth.data.test_a, raw / "test_a.src", raw / "test_a.tgt");
  write_corpus_files(synth.data.test_b, raw / "test_b.src", raw / "test_b.tgt");
}

OracleScorer::OracleScorer(const PartitionedDataset& data) {
  const auto add = [&](const ParallelCorpus& c) {
    for (const auto& p : c.pairs) truth_[join(p.target)] = p.tag;
  };
  add(data.labeled_a);
  add(data.labeled_b);
  add(data.dev_a);
  add(data.dev_b);
  add(data.test_a);
  add(data.test_b);
  for (std::size_t i = 0; i < data.unlabeled.size(); ++i)
    truth_[join(data.unlabeled.pairs[i].target)] = data.unlabeled_truth.at(i);
}

MemberProbs OracleScorer::member_probabilities(std::string_view sentence) const {
  MemberProbs out;
  auto it = truth_.find(std::string(sentence));
  ProbPair p{0.5, 0.5};
  if (it != truth_.end()) p = it->second == VarietyTag::A ? ProbPair{1.0, 0.0} : ProbPair{0.0, 1.0};
  out.fill(p);
  return out;
}

}  // namespace varmt
