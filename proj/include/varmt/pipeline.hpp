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

#include "varmt/nmt/decode.hpp"
#include "varmt/nmt/train.hpp"
#include "varmt/nmt/transformer.hpp"
#include "varmt/synth.hpp"
#include "varmt/varietyid.hpp"

namespace varmt::cli {

// Declarative run description. Keys are "section.name"; see to_ini() for
// the documented defaults.
struct RunConfig {
  // [run]
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  // [data]
  std::string raw_dir = "raw";
  std::string scenario = "semi";
  std::string labeled_fraction = "2/3";
  std::size_t max_tokens = kMaxUnits;
  std::string transliterate = "none";  // none | a | b | both (target side)
  std::string variety_a = "A";
  std::string variety_b = "B";

  // [synth]
  SynthConfig synth;

  // [subword]
  std::size_t subword_vocab = 1000;

  // [classifier]
  FeatureConfig features;
  int classifier_epochs = 5;
  double classifier_lr = 0.5;
  std::string classifier_data = "auto";  // auto | labeled | dev

  // [recipe]
  std::string recipe = "mul";

  // [nmt]
  TransformerConfig model;
  TrainingConfig training;

  // [decode]
  DecodeParams decode;

  // [eval]
  std::size_t bootstrap_samples = 1000;
  double alpha = 0.05;

  RunConfig();

  // Throws ConfigError for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  std::vector<std::string> keys() const;
  // Fully resolved INI text, one commented key per line.
  std::string to_ini() const;
  void load_file(const std::filesystem::path& path);
};

// Entry point of the `varmt` executable; returns the process exit code.
int run(int argc, char** argv);

}  // namespace varmt::cli
