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

#include "varmt/nmt/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "varmt/error.hpp"

namespace varmt {

void TrainingConfig::validate() const {
  if (!(peak_lr_factor > 0.0)) throw ConfigError("peak_lr_factor must be positive");
  if (warmup_steps <= 0) throw ConfigError("warmup_steps must be positive");
  if (batch_tokens <= 0) throw ConfigError("batch_tokens must be positive");
  if (total_steps <= 0) throw ConfigError("total_steps must be positive");
  if (checkpoint_every <= 0 || checkpoint_every > total_steps)
    throw ConfigError("checkpoint_every must lie in [1, total_steps]");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
}

double learning_rate(const TrainingConfig& config, int model_dim, std::int64_t step) {
  const double s = static_cast<double>(std::max<std::int64_t>(step, 1));
  const double w = static_cast<double>(config.warmup_steps);
  return config.peak_lr_factor / std::sqrt(static_cast<double>(model_dim)) *
         std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

bool within_length_limit(const SegmentedPair& pair) {
  std::size_t src = pair.source.size();
  if (src > 0 && SubwordModel::is_variety_token(pair.source.front())) --src;
  return src > 0 && src <= kMaxUnits && pair.target.size() <= kMaxUnits;
}

namespace {

std::size_t example_tokens(const SegmentedPair& p) { return std::max(p.source.size(), p.target.size() + 1); }

}  // namespace

std::vector<std::vector<std::size_t>> make_batches(std::span<const SegmentedPair> examples,
                                                   std::span<const std::size_t> usable, int batch_tokens, Rng& rng) {
  std::vector<std::size_t> order(usable.begin(), usable.end());
  shuffle(std::span<std::size_t>(order), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return example_tokens(examples[a]) < example_tokens(examples[b]);
  });
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  std::size_t tokens = 0;
  for (std::size_t i : order) {
    const std::size_t t = example_tokens(examples[i]);
    if (!current.empty() && tokens + t > static_cast<std::size_t>(batch_tokens)) {
      batches.push_back(std::move(current));
      current.clear();
      tokens = 0;
    }
    current.push_back(i);
    tokens += t;
  }
  if (!current.empty()) batches.push_back(std::move(current));
  shuffle(std::span<std::vector<std::size_t>>(batches), rng);
  return batches;
}

TranslationModel train(std::span<const SegmentedPair> examples, const TransformerConfig& model_config,
                       const TrainingConfig& config, const CheckpointSink& sink, const TranslationModel* initial,
                       TrainingLog* log, std::uint64_t subword_fingerprint) {
  model_config.validate();
  config.validate();
  if (examples.empty()) throw EmptyDataError("training set is empty");

  std::vector<std::size_t> usable;
  bool forced = false;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!within_length_limit(examples[i])) continue;
    usable.push_back(i);
    forced = forced || SubwordModel::is_variety_token(examples[i].source.front());
  }
  if (usable.empty()) throw EmptyDataError("no training example fits the length limit");
  if (log) {
    log->skipped = examples.size() - usable.size();
    log->step_loss.clear();
  }

  TranslationModel model;
  if (initial) {
    if (!(initial->config == model_config)) throw ConfigError("initial model configuration differs from the requested one");
    model = *initial;
    model.token_forced = model.token_forced || forced;
  } else {
    model = init_model(model_config, mix_seed(config.seed, 0), subword_fingerprint);
    model.token_forced = forced;
  }

  ModelParams m1 = model.params.zeros_like();
  ModelParams m2 = model.params.zeros_like();
  auto params = model.params.tensors();
  auto first = m1.tensors();
  auto second = m2.tensors();
  constexpr double beta1 = 0.9, beta2 = 0.98, eps = 1e-9;

  Rng data_rng(mix_seed(config.seed, 1));
  std::vector<std::vector<std::size_t>> epoch;
  std::size_t next = 0;
  std::vector<SegmentedPair> batch;
  for (int s = 1; s <= config.total_steps; ++s) {
    if (next == epoch.size()) {
      epoch = make_batches(examples, usable, config.batch_tokens, data_rng);
      next = 0;
    }
    batch.clear();
    for (std::size_t i : epoch[next]) batch.push_back(examples[i]);
    ++next;

    Rng dropout_rng(mix_seed(config.seed, 0x100000000ULL + static_cast<std::uint64_t>(model.step)));
    LossResult r = loss_and_gradients(model, batch, config.label_smoothing, &dropout_rng, s);
    if (!r.gradients.all_finite()) throw NumericError("non-finite gradient in batch " + std::to_string(s));
    if (log) log->step_loss.push_back(r.loss);

    ++model.step;
    const double lr = learning_rate(config, model_config.model_dim, model.step);
    const double c1 = 1.0 - std::pow(beta1, s);
    const double c2 = 1.0 - std::pow(beta2, s);
    auto grads = r.gradients.tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto g = grads[k].second->array();
      auto m = first[k].second->array();
      auto v = second[k].second->array();
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g.square();
      params[k].second->array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
    }
    if (sink && (s % config.checkpoint_every == 0 || s == config.total_steps)) sink(model);
  }
  return model;
}

double teacher_forced_accuracy(const TranslationModel& model, std::span<const SegmentedPair> examples) {
  std::size_t correct = 0, total = 0;
  constexpr std::size_t kChunk = 64;
  std::vector<SegmentedPair> batch;
  for (std::size_t i = 0; i < examples.size(); i += kChunk) {
    batch.assign(examples.begin() + static_cast<std::ptrdiff_t>(i),
                 examples.begin() + static_cast<std::ptrdiff_t>(std::min(examples.size(), i + kChunk)));
    const LossResult r = loss_and_gradients(model, batch, 0.0);
    correct += r.correct;
    total += r.tokens;
  }
  if (total == 0) throw EmptyDataError("no examples to score");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace varmt
