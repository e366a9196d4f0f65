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
#include <functional>
#include <span>
#include <vector>

#include "varmt/nmt/transformer.hpp"

namespace varmt {

struct TrainingConfig {
  double peak_lr_factor = 0.2;
  int warmup_steps = 400;
  int batch_tokens = 2048;
  int total_steps = 2000;
  int checkpoint_every = 500;
  double label_smoothing = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

// factor * d^-0.5 * min(step^-0.5, step * warmup^-1.5), step counted from 1.
double learning_rate(const TrainingConfig& config, int model_dim, std::int64_t step);

// Length-bucketed batches of example indices, each holding at most
// batch_tokens tokens (an oversized example forms its own batch).
std::vector<std::vector<std::size_t>> make_batches(std::span<const SegmentedPair> examples,
                                                   std::span<const std::size_t> usable, int batch_tokens, Rng& rng);

// True iff both sides fit the length limit (variety token and EOS excluded).
bool within_length_limit(const SegmentedPair& pair);

struct TrainingLog {
  std::vector<double> step_loss;
  std::size_t skipped = 0;  // examples over the length limit or with empty source
};

using CheckpointSink = std::function<void(const TranslationModel&)>;

// Trains from `initial` when given (its config must match), else from a
// fresh seeded initialization. The sink sees the model every
// checkpoint_every steps and after the final step.
TranslationModel train(std::span<const SegmentedPair> examples, const TransformerConfig& model_config,
                       const TrainingConfig& config, const CheckpointSink& sink = {},
                       const TranslationModel* initial = nullptr, TrainingLog* log = nullptr,
                       std::uint64_t subword_fingerprint = 0);

// Fraction of target tokens (EOS included) whose argmax prediction under
// teacher forcing is the reference token.
double teacher_forced_accuracy(const TranslationModel& model, std::span<const SegmentedPair> examples);

}  // namespace varmt
