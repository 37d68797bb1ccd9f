// Copyright 2026 The Halo Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "halo/param_store.hpp"

namespace halo {

inline constexpr const char* kCheckpointFormat = "halo-ckpt-v1";

// {"format":"halo-ckpt-v1","params":{path:{"shape":[..],"values":[..]}},
//  "rng_state":u64,"step":u64,"meta":{..}}
// Values are written with 17 significant digits so reading them back is exact.
struct Checkpoint {
  ad::ParamStore params;
  std::uint64_t step = 0;
  nlohmann::json meta = nlohmann::json::object();
};

std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace halo
