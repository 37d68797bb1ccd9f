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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "halo/checkpoint.hpp"
#include "halo/eval.hpp"
#include "halo/model.hpp"
#include "halo/synth.hpp"

namespace halo::pipeline {

struct TrainConfig {
  int stage = 1;
  geo::Modality primary = geo::Modality::kRadar;
  // Preset name ("toy", "tiny", "paper") or a full model description.
  nlohmann::json model = "toy";
  double lambda1 = 1.0 / 3.0;
  double lambda2 = 2.0 / 3.0;
  std::optional<double> peak_lr;  // defaults: 0.01 in stage 1, 1e-4 in stage 2
  double weight_decay = 0.2;
  double momentum = 0.9;
  std::uint64_t steps = 300;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  double match_radius = model::kDefaultMatchRadius;
  bool augment = true;        // stage 1 only; stage 2 never augments
  std::uint64_t eval_every = 0;  // 0 disables checkpoint selection on val

  double lr() const { return peak_lr.value_or(stage == 1 ? 0.01 : 1e-4); }
  model::ModelConfig model_config() const;
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// One record per optimizer step, batch means of each term.
struct StepLog {
  std::uint64_t step = 0;
  double l_s1 = 0, l_ctr = 0, l_oreg = 0, l_det = 0, l_fm = 0, l_sdet = 0, l_s2 = 0;
  double lr = 0;
  double n_p = 0;  // mean matched pairs per scene

  nlohmann::json to_json(int stage) const;
};

using StepCallback = std::function<void(const StepLog&)>;

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> log;
  std::vector<nlohmann::json> evals;  // {"step","map"} when eval_every > 0
  std::uint64_t selected_step = 0;
};

// A detector restored from a checkpoint, ready for inference.
struct LoadedModel {
  model::ModelConfig config;
  ad::ParamStore params;
  std::optional<model::ProjectionConfig> projection;  // stage-2 models
  int stage = 1;

  geo::Modality modality() const { return config.modality(); }
};

LoadedModel load_model(const Checkpoint& ckpt);

// Parameter paths a stage-2 run must leave untouched.
bool is_auxiliary_path(const std::string& path);

TrainResult train_stage1(const std::vector<data::PairedScene>& train, const TrainConfig& cfg,
                         const std::vector<data::PairedScene>* val = nullptr,
                         const StepCallback& on_step = {});

TrainResult train_stage2(const std::vector<data::PairedScene>& train, const TrainConfig& cfg,
                         const Checkpoint& primary, const Checkpoint& auxiliary,
                         const std::vector<data::PairedScene>* val = nullptr,
                         const StepCallback& on_step = {});

std::vector<std::vector<geo::Detection>> run_inference(const LoadedModel& m,
                                                       const std::vector<data::PairedScene>& scenes);

EvalReport evaluate(const LoadedModel& m, const std::vector<data::PairedScene>& scenes);

}  // namespace halo::pipeline
