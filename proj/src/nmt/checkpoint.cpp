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

#include "varmt/nmt/checkpoint.hpp"

#include "varmt/binary_io.hpp"
#include "varmt/corpus.hpp"
#include "varmt/error.hpp"

namespace varmt {

namespace {

constexpr std::string_view kMagic = "VARMTNMT";
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::string serialize_checkpoint(const TranslationModel& model) {
  const auto& c = model.config;
  BinaryWriter w;
  w.put_raw(kMagic);
  w.put(kVersion);
  w.put<std::int32_t>(c.num_layers);
  w.put<std::int32_t>(c.model_dim);
  w.put<std::int32_t>(c.num_heads);
  w.put<std::int32_t>(c.ffn_dim);
  w.put<double>(c.dropout);
  w.put<std::int32_t>(c.max_positions);
  w.put<std::int32_t>(c.vocab_size);
  w.put<std::uint8_t>(c.share_embeddings ? 1 : 0);
  w.put<std::int64_t>(model.step);
  w.put<std::uint64_t>(model.subword_fingerprint);
  w.put<std::uint8_t>(model.token_forced ? 1 : 0);
  const auto tensors = model.params.tensors();
  w.put(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    w.put_string(name);
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m->rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m->cols()));
    w.put_doubles(std::span<const double>(m->data(), static_cast<std::size_t>(m->size())));
  }
  return w.bytes();
}

TranslationModel deserialize_checkpoint(std::string_view bytes, const std::string& what) {
  BinaryReader r(bytes, what);
  if (r.get_raw(kMagic.size()) != kMagic) throw FormatError(what + ": not a varmt checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError(what + ": unsupported checkpoint version " + std::to_string(version));
  TransformerConfig c;
  c.num_layers = r.get<std::int32_t>();
  c.model_dim = r.get<std::int32_t>();
  c.num_heads = r.get<std::int32_t>();
  c.ffn_dim = r.get<std::int32_t>();
  c.dropout = r.get<double>();
  c.max_positions = r.get<std::int32_t>();
  c.vocab_size = r.get<std::int32_t>();
  c.share_embeddings = r.get<std::uint8_t>() != 0;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(what + ": invalid model configuration: " + e.what());
  }
  TranslationModel model = init_model(c, 0);
  model.step = r.get<std::int64_t>();
  model.subword_fingerprint = r.get<std::uint64_t>();
  model.token_forced = r.get<std::uint8_t>() != 0;
  auto tensors = model.params.tensors();
  const auto n = r.get<std::uint32_t>();
  if (n != tensors.size())
    throw FormatError(what + ": expected " + std::to_string(tensors.size()) + " tensors, found " + std::to_string(n));
  for (auto& [name, m] : tensors) {
    const std::string stored = r.get_string();
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (stored != name || rows != static_cast<std::uint64_t>(m->rows()) || cols != static_cast<std::uint64_t>(m->cols()))
      throw FormatError(what + ": tensor '" + stored + "' does not match expected '" + name + "' " +
                        std::to_string(m->rows()) + "x" + std::to_string(m->cols()));
    r.get_doubles(std::span<double>(m->data(), static_cast<std::size_t>(m->size())));
  }
  r.expect_done();
  if (!model.params.all_finite()) throw FormatError(what + ": non-finite parameter values");
  return model;
}

void save_checkpoint(const TranslationModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(model));
}

TranslationModel load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_binary_file(path.string()), path.string());
}

}  // namespace varmt
