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

#include "varmt/varietyid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "varmt/binary_io.hpp"
#include "varmt/error.hpp"
#include "varmt/hash.hpp"
#include "varmt/parallel.hpp"
#include "varmt/rng.hpp"
#include "varmt/utf8.hpp"

namespace varmt {

namespace fs = std::filesystem;

std::string read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void FeatureConfig::validate() const {
  if (word_ngram_max < 1) throw ConfigError("word_ngram_max must be >= 1");
  if (char_ngram_max != 0 && (char_ngram_min < 1 || char_ngram_min > char_ngram_max))
    throw ConfigError("char n-gram range must satisfy 1 <= min <= max (or max = 0 to disable)");
  if (hash_buckets < (1u << 10) || (hash_buckets & (hash_buckets - 1)) != 0)
    throw ConfigError("hash_buckets must be a power of two >= 1024");
  if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
}

std::vector<std::uint32_t> extract_features(std::string_view text, const FeatureConfig& config) {
  std::vector<std::uint32_t> out;
  const std::uint64_t mask = config.hash_buckets - 1;
  const Tokens words = tokenize(text);
  for (int n = 1; n <= config.word_ngram_max; ++n) {
    const auto order = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + order <= words.size(); ++i) {
      std::uint64_t h = fnv1a_byte(static_cast<unsigned char>(n), fnv1a_byte('w', kFnvOffset));
      for (std::size_t k = 0; k < order; ++k) {
        if (k) h = fnv1a_byte(0x1f, h);
        h = fnv1a(words[i + k], h);
      }
      out.push_back(static_cast<std::uint32_t>(h & mask));
    }
  }
  if (config.char_ngram_max > 0 && !words.empty()) {
    std::vector<std::string> chars = utf8::characters(text);
    if (chars.empty()) {
      for (char c : text) chars.emplace_back(1, c);
    }
    chars.insert(chars.begin(), "<");
    chars.emplace_back(">");
    for (int n = config.char_ngram_min; n <= config.char_ngram_max; ++n) {
      const auto order = static_cast<std::size_t>(n);
      for (std::size_t i = 0; i + order <= chars.size(); ++i) {
        std::uint64_t h = fnv1a_byte(static_cast<unsigned char>(n), fnv1a_byte('c', kFnvOffset));
        for (std::size_t k = 0; k < order; ++k) h = fnv1a(chars[i + k], h);
        out.push_back(static_cast<std::uint32_t>(h & mask));
      }
    }
  }
  return out;
}

std::vector<LabeledSentence> oversample(std::span<const LabeledSentence> examples, std::uint64_t seed) {
  std::vector<std::size_t> a;
  std::vector<std::size_t> b;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].tag == VarietyTag::A)
      a.push_back(i);
    else if (examples[i].tag == VarietyTag::B)
      b.push_back(i);
    else
      throw ConfigError("oversample: unlabeled example at index " + std::to_string(i));
  }
  if (a.empty() || b.empty()) throw ConfigError("oversample: both classes must be present");
  Rng rng(mix_seed(seed, 0x05a));
  std::vector<LabeledSentence> out(examples.begin(), examples.end());
  const auto& minority = a.size() < b.size() ? a : b;
  const std::size_t deficit = std::max(a.size(), b.size()) - minority.size();
  for (std::size_t k = 0; k < deficit; ++k)
    out.push_back(examples[minority[uniform_index(rng, minority.size())]]);
  shuffle(std::span<LabeledSentence>(out), rng);
  return out;
}

// ---------------------------------------------------------------------------
// Classifier

LinearVarietyClassifier::LinearVarietyClassifier(const FeatureConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  config_.validate();
  const auto dim = static_cast<std::size_t>(config_.embed_dim);
  const double bound = 1.0 / static_cast<double>(dim);
  Rng rng(seed);
  input_.resize(static_cast<std::size_t>(config_.hash_buckets) * dim);
  for (double& w : input_) w = uniform_real(rng, -bound, bound);
  output_.resize(2 * dim);
  for (double& w : output_) w = uniform_real(rng, -bound, bound);
}

namespace {

// Fills \`hidden\` with the mean embedding; returns false for no features.
bool mean_embedding(const LinearVarietyClassifier& m, std::span<const std::uint32_t> features,
                    std::vector<double>& hidden) {
  const auto dim = static_cast<std::size_t>(m.config().embed_dim);
  hidden.assign(dim, 0.0);
  if (features.empty()) return false;
  const auto& in = m.input_embeddings();
  for (std::uint32_t f : features) {
    const double* row = in.data() + static_cast<std::size_t>(f) * dim;
    for (std::size_t d = 0; d < dim; ++d) hidden[d] += row[d];
  }
  const double inv = 1.0 / static_cast<double>(features.size());
  for (double& h : hidden) h *= inv;
  return true;
}

ProbPair softmax2(double za, double zb) {
  const double m = std::max(za, zb);
  const double ea = std::exp(za - m);
  const double eb = std::exp(zb - m);
  const double s = ea + eb;
  return {ea / s, eb / s};
}

std::pair<double, double> logits(const std::vector<double>& out, const std::vector<double>& hidden) {
  const std::size_t dim = hidden.size();
  double za = 0.0;
  double zb = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    za += out[d] * hidden[d];
    zb += out[dim + d] * hidden[d];
  }
  return {za, zb};
}

}  // namespace

ProbPair LinearVarietyClassifier::predict_features(std::span<const std::uint32_t> features) const {
  std::vector<double> hidden;
  if (!mean_embedding(*this, features, hidden)) return {0.5, 0.5};
  const auto [za, zb] = logits(output_, hidden);
  return softmax2(za, zb);
}

ProbPair LinearVarietyClassifier::predict_proba(std::string_view sentence) const {
  const auto features = extract_features(sentence, config_);
  return predict_features(features);
}

LinearVarietyClassifier train_classifier(std::span<const LabeledSentence> examples,
                                         const FeatureConfig& config, int epochs, double lr,
                                         std::uint64_t seed) {
  if (examples.empty()) throw EmptyDataError("train_classifier: empty training set");
  bool has_a = false;
  bool has_b = false;
  for (const auto& e : examples) {
    if (e.tag == VarietyTag::A) has_a = true;
    else if (e.tag == VarietyTag::B) has_b = true;
    else throw ConfigError("train_classifier: unlabeled training example");
  }
  if (!has_a || !has_b) throw ConfigError("train_classifier: both classes must be present");
  if (epochs < 1) throw ConfigError("train_classifier: epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train_classifier: lr must be positive");

  LinearVarietyClassifier model(config, seed);
  const auto dim = static_cast<std::size_t>(config.embed_dim);
  std::vector<std::vector<std::uint32_t>> features;
  features.reserve(examples.size());
  for (const auto& e : examples) features.push_back(extract_features(e.text, config));

  auto& in = model.input_embeddings();
  auto& out = model.output_weights();
  std::vector<double> hidden;
  std::vector<double> grad_hidden(dim);
  const double total = static_cast<double>(epochs) * static_cast<double>(examples.size());
  std::size_t step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = 0; i < examples.size(); ++i, ++step) {
      const auto& f = features[i];
      if (!mean_embedding(model, f, hidden)) continue;
      const double rate = lr * (1.0 - static_cast<double>(step) / total);
      const auto [za, zb] = logits(out, hidden);
      const ProbPair p = softmax2(za, zb);
      const bool is_a = examples[i].tag == VarietyTag::A;
      const double loss = -std::log(is_a ? p.a : p.b);
      if (!std::isfinite(loss))
        throw NumericError("classifier loss is not finite at epoch " + std::to_string(epoch + 1) +
                           ", step " + std::to_string(step));
      const double ga = p.a - (is_a ? 1.0 : 0.0);
      const double gb = p.b - (is_a ? 0.0 : 1.0);
      for (std::size_t d = 0; d < dim; ++d) {
        grad_hidden[d] = ga * out[d] + gb * out[dim + d];
        out[d] -= rate * ga * hidden[d];
        out[dim + d] -= rate * gb * hidden[d];
      }
      const double scale = rate / static_cast<double>(f.size());
      for (std::uint32_t id : f) {
        double* row = in.data() + static_cast<std::size_t>(id) * dim;
        for (std::size_t d = 0; d < dim; ++d) row[d] -= scale * grad_hidden[d];
      }
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Voting

VarietyTag soft_fuse(std::span<const ProbPair> members) {
  double sum_a = 0.0;
  double sum_b = 0.0;
  for (const auto& m : members) {
    sum_a += m.a;
    sum_b += m.b;
  }
  // Sums equal up to rounding count as a tie.
  const double tol = 1e-12 * (std::abs(sum_a) + std::abs(sum_b));
  return sum_b - sum_a > tol ? VarietyTag::B : VarietyTag::A;
}

VarietyTag majority_abstain(std::span<const ProbPair> members) {
  std::size_t votes_a = 0;
  std::size_t votes_b = 0;
  for (const auto& m : members) {
    if (m.a > 0.5) ++votes_a;
    if (m.b > 0.5) ++votes_b;
  }
  const std::size_t need = members.size() / 2 + 1;
  if (votes_a >= need) return VarietyTag::A;
  if (votes_b >= need) return VarietyTag::B;
  return VarietyTag::Unlabeled;
}

VarietyTag ensemble_soft_fuse(const VarietyScorer& ensemble, std::string_view sentence) {
  const auto probs = ensemble.member_probabilities(sentence);
  return soft_fuse(probs);
}

VarietyTag ensemble_majority_abstain(const VarietyScorer& ensemble, std::string_view sentence) {
  const auto probs = ensemble.member_probabilities(sentence);
  return majority_abstain(probs);
}

// ---------------------------------------------------------------------------
// Ensemble

std::uint64_t sentence_fingerprint(std::string_view sentence) { return fnv1a(sentence); }

VarietyEnsemble::VarietyEnsemble(std::vector<LinearVarietyClassifier> members,
                                 std::vector<std::uint64_t> training_fingerprints)
    : members_(std::move(members)), fingerprints_(std::move(training_fingerprints)) {
  if (members_.size() != kEnsembleSize)
    throw ConfigError("an ensemble needs exactly " + std::to_string(kEnsembleSize) + " members");
  for (const auto& m : members_)
    if (!(m.config() == members_.front().config()))
      throw ConfigError("ensemble members must share one feature configuration");
  std::sort(fingerprints_.begin(), fingerprints_.end());
  fingerprints_.erase(std::unique(fingerprints_.begin(), fingerprints_.end()), fingerprints_.end());
}

MemberProbs VarietyEnsemble::member_probabilities(std::string_view sentence) const {
  MemberProbs out;
  const auto features = extract_features(sentence, members_.front().config());
  for (std::size_t i = 0; i < kEnsembleSize; ++i) out[i] = members_[i].predict_features(features);
  return out;
}

std::vector<std::string> VarietyEnsemble::overlap(std::span<const std::string> sentences) const {
  std::vector<std::string> out;
  for (const auto& s : sentences)
    if (std::binary_search(fingerprints_.begin(), fingerprints_.end(), sentence_fingerprint(s)))
      out.push_back(s);
  return out;
}

namespace {

constexpr std::string_view kVidMagic = "VARMTVID";
constexpr std::uint32_t kVidVersion = 1;

void write_members(BinaryWriter& w, std::span<const LinearVarietyClassifier> members,
                   std::span<const std::uint64_t> fingerprints) {
  w.put_raw(kVidMagic);
  w.put(kVidVersion);
  const auto& c = members.front().config();
  w.put(static_cast<std::int32_t>(c.word_ngram_max));
  w.put(static_cast<std::int32_t>(c.char_ngram_min));
  w.put(static_cast<std::int32_t>(c.char_ngram_max));
  w.put(c.hash_buckets);
  w.put(static_cast<std::int32_t>(c.embed_dim));
  w.put(static_cast<std::uint32_t>(members.size()));
  for (const auto& m : members) {
    w.put(m.seed());
    w.put_doubles(m.input_embeddings());
    w.put_doubles(m.output_weights());
  }
  w.put(static_cast<std::uint64_t>(fingerprints.size()));
  for (auto f : fingerprints) w.put(f);
}

std::pair<std::vector<LinearVarietyClassifier>, std::vector<std::uint64_t>> read_members(
    const fs::path& path) {
  const std::string bytes = read_binary_file(path.string());
  BinaryReader r(bytes, path.string());
  if (r.get_raw(kVidMagic.size()) != kVidMagic) throw FormatError(path.string() + ": not a classifier file");
  const auto version = r.get<std::uint32_t>();
  if (version != kVidVersion)
    throw FormatError(path.string() + ": unsupported classifier version " + std::to_string(version));
  FeatureConfig c;
  c.word_ngram_max = r.get<std::int32_t>();
  c.char_ngram_min = r.get<std::int32_t>();
  c.char_ngram_max = r.get<std::int32_t>();
  c.hash_buckets = r.get<std::uint32_t>();
  c.embed_dim = r.get<std::int32_t>();
  c.validate();
  const auto n = r.get<std::uint32_t>();
  std::vector<LinearVarietyClassifier> members;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto seed = r.get<std::uint64_t>();
    LinearVarietyClassifier m(c, seed);
    r.get_doubles(m.input_embeddings());
    r.get_doubles(m.output_weights());
    members.push_back(std::move(m));
  }
  std::vector<std::uint64_t> fps(r.get<std::uint64_t>());
  for (auto& f : fps) f = r.get<std::uint64_t>();
  r.expect_done();
  return {std::move(members), std::move(fps)};
}

}  // namespace

void LinearVarietyClassifier::save(const fs::path& path) const {
  BinaryWriter w;
  write_members(w, std::span<const LinearVarietyClassifier>(this, 1), {});
  write_file_atomic(path, w.bytes());
}

LinearVarietyClassifier LinearVarietyClassifier::load(const fs::path& path) {
  auto [members, fps] = read_members(path);
  if (members.size() != 1) throw FormatError(path.string() + ": expected a single classifier");
  return std::move(members.front());
}

void VarietyEnsemble::save(const fs::path& path) const {
  BinaryWriter w;
  write_members(w, members_, fingerprints_);
  write_file_atomic(path, w.bytes());
}

VarietyEnsemble VarietyEnsemble::load(const fs::path& path) {
  auto [members, fps] = read_members(path);
  return VarietyEnsemble(std::move(members), std::move(fps));
}

VarietyEnsemble train_ensemble(std::span<const LabeledSentence> examples, const FeatureConfig& config,
                               int epochs, double lr, std::uint64_t seed, std::size_t threads) {
  const auto balanced = oversample(examples, seed);
  std::vector<LinearVarietyClassifier> members(kEnsembleSize);
  parallel_for(kEnsembleSize, threads, [&](std::size_t i) {
    members[i] = train_classifier(balanced, config, epochs, lr, mix_seed(seed, i + 1));
  });
  std::vector<std::uint64_t> fps;
  fps.reserve(examples.size());
  for (const auto& e : examples) fps.push_back(sentence_fingerprint(e.text));
  return VarietyEnsemble(std::move(members), std::move(fps));
}

// ---------------------------------------------------------------------------
// ROC AUC

AucFraction roc_auc_exact(std::span<const double> scores, std::span<const VarietyTag> labels) {
  if (scores.size() != labels.size())
    throw UndefinedMetricError("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                               std::to_string(labels.size()) + " labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t n_a = 0;
  std::uint64_t n_b = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == VarietyTag::A) ++n_a;
    else if (labels[i] == VarietyTag::B) ++n_b;
    else throw UndefinedMetricError("roc_auc: unlabeled example at index " + std::to_string(i));
    if (std::isnan(scores[i])) throw UndefinedMetricError("roc_auc: NaN score at index " + std::to_string(i));
  }
  if (n_a == 0 || n_b == 0) throw UndefinedMetricError("roc_auc: needs both classes");
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return scores[x] < scores[y]; });
  std::uint64_t numerator = 0;
  std::uint64_t a_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t group_a = 0;
    std::uint64_t group_b = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == VarietyTag::A) ++group_a;
      else ++group_b;
      ++j;
    }
    numerator += group_b * (2 * a_below + group_a);
    a_below += group_a;
    i = j;
  }
  return {numerator, 2 * n_a * n_b};
}

double roc_auc(std::span<const double> scores, std::span<const VarietyTag> labels) {
  return roc_auc_exact(scores, labels).value();
}

}  // namespace varmt
