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

#include <filesystem>
#include <string>
#include <string_view>

#include "varmt/nmt/transformer.hpp"

namespace varmt {

std::string serialize_checkpoint(const TranslationModel& model);
TranslationModel deserialize_checkpoint(std::string_view bytes, const std::string& what = "checkpoint");

// Written to a temporary file and renamed into place.
void save_checkpoint(const TranslationModel& model, const std::filesystem::path& path);
TranslationModel load_checkpoint(const std::filesystem::path& path);

}  // namespace varmt
