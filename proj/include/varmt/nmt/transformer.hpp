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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "varmt/rng.hpp"
#include "varmt/subword.hpp"

namespace varmt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Maximum subword units per sentence side, excluding variety token and EOS.
inline constexpr std::size_t kMaxUnits = 70;

struct TransformerConfig {
  int num_layers = 2;
  int model_dim = 64;
  int num_heads = 4;
  int ffn_dim = 256;
  double dropout = 0.1;
  int max_positions = 72;
  int vocab_size = 0;
  bool share_embeddings = true;

  void validate() const;
  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

struct LayerNormParams {
  Matrix gamma;  // 1 x d
  Matrix beta;   // 1 x d
};

struct AttentionParams {
  Matrix wq, wk, wv, wo;  // d x d
  Matrix bq, bk, bv, bo;  // 1 x d
};

struct FeedForwardParams {
  Matrix w1;  // d x f
  Matrix b1;  // 1 x f
  Matrix w2;  // f x d
  Matrix b2;  // 1 x d
};

struct EncoderLayerParams {
  LayerNormParams norm_self;
  AttentionParams self;
  LayerNormParams norm_ffn;
  FeedForwardParams ffn;
};

struct DecoderLayerParams {
  LayerNormParams norm_self;
  AttentionParams self;
  LayerNormParams norm_cross;
  AttentionParams cross;
  LayerNormParams norm_ffn;
  FeedForwardParams ffn;
};

// With shared embeddings only `embedding` is populated and serves the
// encoder, the decoder and the output projection.
struct ModelParams {
  Matrix embedding;          // V x d
  Matrix target_embedding;   // V x d, unshared only
  Matrix output_projection;  // V x d, unshared only
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
  LayerNormParams encoder_norm;
  LayerNormParams decoder_norm;

  // Named views of every tensor in a fixed order.
  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;
  // Same shapes, all zeros.
  ModelParams zeros_like() const;
  bool all_finite() const;
};

struct TranslationModel {
  TransformerConfig config;
  ModelParams params;
  std::uint64_t subword_fingerprint = 0;
  bool token_forced = false;  // trained on examples carrying variety tokens
  std::int64_t step = 0;
};

TranslationModel init_model(const TransformerConfig& config, std::uint64_t seed, std::uint64_t subword_fingerprint = 0);

// Model-facing view of one training pair.
struct PreparedExample {
  std::vector<TokenId> encoder_input;   // source units, variety token included
  std::vector<TokenId> decoder_input;   // start symbol + target
  std::vector<TokenId> decoder_output;  // target + EOS
};

// The decoder start symbol is the source's variety token if present, BOS otherwise.
TokenId decoder_start(std::span<const TokenId> source);
PreparedExample prepare_example(const SegmentedPair& pair);

// Log-probability rows for decoder input [start] + target_prefix, i.e.
// target_prefix.size() + 1 rows over the vocabulary. Inference mode.
Matrix forward(const TranslationModel& model, std::span<const TokenId> source, std::span<const TokenId> target_prefix);

struct LossResult {
  double loss = 0.0;      // label-smoothed cross-entropy per target token
  std::size_t tokens = 0;
  std::size_t correct = 0;  // argmax hits
  ModelParams gradients;
};

// Dropout is active iff `dropout_rng` is non-null.
LossResult loss_and_gradients(const TranslationModel& model, std::span<const SegmentedPair> batch,
                              double label_smoothing, Rng* dropout_rng = nullptr, std::int64_t batch_index = -1);

// Loss only, no gradients (used for finite differences and evaluation).
double batch_loss(const TranslationModel& model, std::span<const SegmentedPair> batch, double label_smoothing);

// Incremental decoding with cached keys and values.
class DecoderSession {
 public:
  struct State {
    std::vector<Matrix> keys;    // per layer, t x d
    std::vector<Matrix> values;  // per layer, t x d
    std::size_t length() const { return keys.empty() ? 0 : static_cast<std::size_t>(keys.front().rows()); }
  };

  DecoderSession(const TranslationModel& model, const std::vector<std::vector<TokenId>>& sources);

  State initial_state() const;
  std::size_t num_sources() const { return memory_keys_.size(); }

  // Feeds token[i] to hypothesis i (which decodes source[i]) and returns one
  // log-probability row per hypothesis.
  Matrix step(std::span<const std::size_t> source, std::span<State* const> states, std::span<const TokenId> tokens) const;

 private:
  const TranslationModel& model_;
  // [source][layer] cross-attention keys and values.
  std::vector<std::vector<Matrix>> memory_keys_;
  std::vector<std::vector<Matrix>> memory_values_;
};

}  // namespace varmt
