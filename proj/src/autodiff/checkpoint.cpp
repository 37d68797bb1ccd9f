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

#include "halo/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "halo/errors.hpp"

namespace halo {

std::string checkpoint_to_string(const Checkpoint& ckpt) {
  std::string out;
  out += fmt::format("{{\"format\":\"{}\",\"params\":{{", kCheckpointFormat);
  bool first = true;
  for (const auto& [path, t] : ckpt.params.all()) {
    if (!first) out += ',';
    first = false;
    out += nlohmann::json(path).dump();
    out += fmt::format(":{{\"shape\":[{}],\"values\":[", fmt::join(t.shape(), ","));
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (i) out += ',';
      out += fmt::format("{:.17g}", t[i]);
    }
    out += "]}";
  }
  out += fmt::format("}},\"rng_state\":{},\"step\":{},\"meta\":{}}}\n",
                     ckpt.params.rng_state(), ckpt.step, ckpt.meta.dump());
  return out;
}

Checkpoint checkpoint_from_string(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  auto require = [&doc](const char* key) -> const nlohmann::json& {
    if (!doc.contains(key)) throw ParseError(fmt::format("checkpoint: missing field '{}'", key));
    return doc.at(key);
  };
  if (require("format") != kCheckpointFormat) {
    throw ParseError("checkpoint: unsupported format " + doc.at("format").dump());
  }
  Checkpoint ckpt;
  try {
    for (const auto& [path, entry] : require("params").items()) {
      if (!entry.contains("shape") || !entry.contains("values")) {
        throw ParseError(fmt::format("checkpoint: parameter '{}' lacks shape/values", path));
      }
      ckpt.params.add(path, ad::Tensor(entry.at("shape").get<ad::Shape>(),
                                       entry.at("values").get<std::vector<double>>()));
    }
    ckpt.params.set_rng_state(require("rng_state").get<std::uint64_t>());
    ckpt.step = require("step").get<std::uint64_t>();
    if (doc.contains("meta")) ckpt.meta = doc.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  out << checkpoint_to_string(ckpt);
  if (!out) throw ConfigError("write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_string(buf.str());
}

}  // namespace halo
