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

#include "halo/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "halo/errors.hpp"
#include "halo/optim.hpp"

namespace halo::pipeline {

using ad::ParamStore;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using model::ModelConfig;

namespace {

constexpr std::uint64_t kDataStream = 0xda7a5eed0000c0deULL;
constexpr std::uint64_t kStage2InitStream = 0x57a6e2000000beefULL;

const std::vector<std::string> kConfigKeys = {
    "stage", "primary", "model", "lambda1", "lambda2", "peak_lr", "weight_decay", "momentum",
    "steps", "batch_size", "seed", "match_radius", "augment", "eval_every"};

// Per-scene loss terms; unused ones stay invalid.
struct SceneTerms {
  Var total;
  Var s1, ctr, oreg, det, fm, sdet;
  double n_p = 0.0;
};

double item(const Var& v) { return v.valid() ? v.value().item() : 0.0; }

using SceneLossFn = std::function<SceneTerms(Tape&, std::size_t, Rng&)>;
using TrainablePredicate = std::function<bool(const std::string&)>;

nlohmann::json base_meta(const TrainConfig& cfg, const ModelConfig& mcfg) {
  return {{"stage", cfg.stage},
          {"modality", geo::to_string(mcfg.modality())},
          {"model", mcfg.to_json()},
          {"train", cfg.to_json()}};
}

TrainResult run_loop(ParamStore& store, const TrainConfig& cfg, std::size_t num_scenes,
                     const SceneLossFn& scene_loss, const TrainablePredicate& trainable,
                     const std::function<double(const ParamStore&)>& validate_map,
                     const StepCallback& on_step) {
  if (num_scenes == 0) throw ConfigError("training split is empty");
  TrainResult result;
  ad::OptimizerState opt;
  opt.schedule.peak_lr = cfg.lr();
  opt.schedule.total_steps = cfg.steps;
  opt.adam.beta1 = cfg.momentum;
  opt.adam.weight_decay = cfg.weight_decay;

  Rng data_rng(cfg.seed ^ kDataStream);
  std::vector<std::size_t> perm(num_scenes);
  std::size_t cursor = num_scenes;
  std::optional<ParamStore> best;
  double best_map = -1.0;

  for (std::uint64_t step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> batch;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == num_scenes) {
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = num_scenes; i > 1; --i) std::swap(perm[i - 1], perm[data_rng.index(i)]);
        cursor = 0;
      }
      batch.push_back(perm[cursor++]);
    }
    StepLog log;
    log.step = step;
    Tape tape;
    ad::Gradients grads;
    try {
      Var total;
      for (std::size_t idx : batch) {
        const SceneTerms t = scene_loss(tape, idx, data_rng);
        total = total.valid() ? ad::add(total, t.total) : t.total;
        log.l_s1 += item(t.s1);
        log.l_ctr += item(t.ctr);
        log.l_oreg += item(t.oreg);
        log.l_det += item(t.det);
        log.l_fm += item(t.fm);
        log.l_sdet += item(t.sdet);
        log.l_s2 += cfg.stage == 2 ? item(t.total) : 0.0;
        log.n_p += t.n_p;
      }
      const double inv = 1.0 / static_cast<double>(batch.size());
      Var loss = ad::scale(total, inv);
      for (double* v : {&log.l_s1, &log.l_ctr, &log.l_oreg, &log.l_det, &log.l_fm, &log.l_sdet,
                        &log.l_s2, &log.n_p}) {
        *v *= inv;
      }
      if (!std::isfinite(loss.value().item())) throw NumericError("loss is not finite");
      grads = tape.backward(loss, store);
    } catch (const NumericError& e) {
      throw NumericError(fmt::format(
          "non-finite value at step {} (seed {}, batch scenes [{}]): {}", step, cfg.seed,
          fmt::join(batch, ", "), e.what()));
    }
    for (auto it = grads.begin(); it != grads.end();) {
      if (trainable(it->first)) {
        ++it;
        continue;
      }
      if (cfg.stage == 2 && is_auxiliary_path(it->first)) {
        for (double g : it->second.values()) {
          if (g != 0.0) {
            throw ContractError(fmt::format("frozen parameter '{}' received a gradient", it->first));
          }
        }
      }
      it = grads.erase(it);
    }
    log.lr = ad::optimizer_step(store, grads, opt);
    result.log.push_back(log);
    if (on_step) on_step(log);

    if (cfg.eval_every > 0 && validate_map &&
        ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps)) {
      const double m = validate_map(store);
      result.evals.push_back({{"step", step + 1}, {"map", m}});
      if (m > best_map) {
        best_map = m;
        best = store;
        result.selected_step = step + 1;
      }
    }
  }
  if (best) {
    store = *best;
  } else {
    result.selected_step = cfg.steps;
  }
  return result;
}

std::function<double(const ParamStore&)> val_fn(const std::vector<data::PairedScene>* val,
                                                const ModelConfig& mcfg,
                                                std::optional<model::ProjectionConfig> proj,
                                                int stage) {
  if (val == nullptr || val->empty()) return {};
  return [val, mcfg, proj, stage](const ParamStore& store) {
    LoadedModel m{mcfg, store, proj, stage};
    const EvalReport rep = evaluate(m, *val);
    return rep.map.value_or(0.0);
  };
}

}  // namespace

ModelConfig TrainConfig::model_config() const {
  if (model.is_string()) {
    const std::string name = model.get<std::string>();
    if (name == "toy") return model::toy_model(primary);
    if (name == "tiny") return model::tiny_model(primary);
    if (name == "paper") return model::paper_model(primary);
    throw ConfigError("unknown model preset '" + name + "'");
  }
  ModelConfig m = ModelConfig::from_json(model);
  if (m.modality() != primary) throw ConfigError("model modality differs from the primary modality");
  return m;
}

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("lambdas must be non-negative");
  if (!(lr() > 0.0)) throw ConfigError("peak_lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (steps == 0 || batch_size == 0) throw ConfigError("steps and batch_size must be positive");
  if (!(match_radius > 0.0)) throw ConfigError("match_radius must be positive");
  model_config();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"stage", stage},
          {"primary", geo::to_string(primary)},
          {"model", model},
          {"lambda1", lambda1},
          {"lambda2", lambda2},
          {"peak_lr", lr()},
          {"weight_decay", weight_decay},
          {"momentum", momentum},
          {"steps", steps},
          {"batch_size", batch_size},
          {"seed", seed},
          {"match_radius", match_radius},
          {"augment", augment},
          {"eval_every", eval_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(kConfigKeys.begin(), kConfigKeys.end(), key) == kConfigKeys.end()) {
      throw ConfigError("train config: unknown key '" + key + "'");
    }
  }
  TrainConfig c;
  try {
    c.stage = j.value("stage", c.stage);
    if (j.contains("primary")) {
      c.primary = geo::modality_from_string(j.at("primary").get<std::string>());
    }
    if (j.contains("model")) c.model = j.at("model");
    c.lambda1 = j.value("lambda1", c.lambda1);
    c.lambda2 = j.value("lambda2", c.lambda2);
    if (j.contains("peak_lr") && !j.at("peak_lr").is_null()) c.peak_lr = j.at("peak_lr").get<double>();
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.momentum = j.value("momentum", c.momentum);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.match_radius = j.value("match_radius", c.match_radius);
    c.augment = j.value("augment", c.augment);
    c.eval_every = j.value("eval_every", c.eval_every);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("train config: {}", e.what()));
  } catch (const ParseError& e) {
    throw ConfigError(fmt::format("train config: {}", e.what()));
  }
  c.validate();
  return c;
}

nlohmann::json StepLog::to_json(int stage) const {
  nlohmann::json j = {{"step", step},  {"l_s1", l_s1}, {"l_ctr", l_ctr},   {"l_oreg", l_oreg},
                      {"l_det", l_det}, {"l_fm", l_fm}, {"l_sdet", l_sdet}, {"lr", lr},
                      {"n_p", n_p}};
  if (stage == 2) j["l_s2"] = l_s2;
  return j;
}

bool is_auxiliary_path(const std::string& path) {
  return path.rfind(model::prefix::kAuxiliary, 0) == 0;
}

LoadedModel load_model(const Checkpoint& ckpt) {
  LoadedModel m;
  try {
    m.stage = ckpt.meta.at("stage").get<int>();
    m.config = ModelConfig::from_json(ckpt.meta.at("model"));
    if (m.stage == 2) m.projection = model::ProjectionConfig::from_json(ckpt.meta.at("projection"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("checkpoint meta: {}", e.what()));
  }
  if (m.stage != 1 && m.stage != 2) throw ConfigError("checkpoint meta: stage must be 1 or 2");
  m.params = ckpt.params;
  return m;
}

TrainResult train_stage1(const std::vector<data::PairedScene>& train, const TrainConfig& cfg,
                         const std::vector<data::PairedScene>* val, const StepCallback& on_step) {
  cfg.validate();
  if (cfg.stage != 1) throw ConfigError("train_stage1 needs stage 1");
  const ModelConfig mcfg = cfg.model_config();
  ParamStore store;
  store.set_rng_state(cfg.seed);
  model::init_detector(store, mcfg);
  const auto mode = cfg.augment ? data::augment_mode_for(cfg.primary) : data::AugmentMode::kNone;

  auto scene_loss = [&](Tape& tape, std::size_t idx, Rng& rng) {
    const data::PairedScene* scene = &train[idx];
    data::PairedScene augmented;
    if (mode != data::AugmentMode::kNone) {
      augmented = *scene;
      data::augment_scene(augmented, mode, rng);
      scene = &augmented;
    }
    const auto enc = model::encode_scene(tape, scene->cloud(cfg.primary), mcfg, store);
    const auto targets = model::build_targets(enc, scene->gt, mcfg);
    const auto head = model::stage1_head(tape, enc, mcfg, store);
    const auto t = model::stage1_terms(enc, head, targets);
    SceneTerms out;
    out.total = out.s1 = t.s1;
    out.ctr = t.ctr;
    out.oreg = t.oreg;
    out.det = t.det.total;
    return out;
  };
  TrainResult result = run_loop(store, cfg, train.size(), scene_loss,
                                [](const std::string&) { return true; },
                                val_fn(val, mcfg, std::nullopt, 1), on_step);
  result.checkpoint.params = store;
  result.checkpoint.step = result.selected_step;
  result.checkpoint.meta = base_meta(cfg, mcfg);
  return result;
}

TrainResult train_stage2(const std::vector<data::PairedScene>& train, const TrainConfig& cfg,
                         const Checkpoint& primary, const Checkpoint& auxiliary,
                         const std::vector<data::PairedScene>* val, const StepCallback& on_step) {
  cfg.validate();
  if (cfg.stage != 2) throw ConfigError("train_stage2 needs stage 2");
  const LoadedModel pri = load_model(primary);
  const LoadedModel aux = load_model(auxiliary);
  if (pri.stage != 1 || aux.stage != 1) throw ConfigError("stage 2 starts from stage-1 checkpoints");
  if (pri.modality() != cfg.primary) {
    throw ConfigError(fmt::format("primary checkpoint is {}, config asks for {}",
                                  geo::to_string(pri.modality()), geo::to_string(cfg.primary)));
  }
  if (aux.modality() == pri.modality()) {
    throw ConfigError("auxiliary checkpoint must use the other modality");
  }
  const ModelConfig& mcfg = pri.config;
  const model::ProjectionConfig proj = model::projection_config(pri.config, aux.config);
  const geo::Modality aux_mod = aux.modality();

  ParamStore store = pri.params;
  store.set_rng_state(cfg.seed ^ kStage2InitStream);
  model::init_stage2(store, mcfg, aux.params, proj);

  // The auxiliary model is frozen and stage 2 does not augment, so its output
  // for each scene is fixed.
  std::vector<model::AuxiliaryView> cache;
  cache.reserve(train.size());
  for (const auto& scene : train) {
    cache.push_back(model::auxiliary_view(scene.cloud(aux_mod), aux.config, store));
  }
  const model::Stage2Weights weights{cfg.lambda1, cfg.lambda2, cfg.match_radius};

  auto scene_loss = [&](Tape& tape, std::size_t idx, Rng&) {
    const data::PairedScene& scene = train[idx];
    const auto t = model::stage2_terms(tape, scene.cloud(cfg.primary), scene.gt, mcfg, proj,
                                       store, cache[idx], weights);
    SceneTerms out;
    out.total = t.s2;
    out.s1 = t.s1.s1;
    out.ctr = t.s1.ctr;
    out.oreg = t.s1.oreg;
    out.det = t.s1.det.total;
    out.fm = t.fm;
    out.sdet = t.sdet.total;
    out.n_p = static_cast<double>(t.num_pairs);
    return out;
  };
  const std::string old_head = std::string(model::prefix::kHead) + "/";
  auto trainable = [&old_head](const std::string& path) {
    return !is_auxiliary_path(path) && path.rfind(old_head, 0) != 0;
  };
  TrainResult result = run_loop(store, cfg, train.size(), scene_loss, trainable,
                                val_fn(val, mcfg, proj, 2), on_step);
  result.checkpoint.params = store;
  result.checkpoint.step = result.selected_step;
  result.checkpoint.meta = base_meta(cfg, mcfg);
  result.checkpoint.meta["projection"] = proj.to_json();
  result.checkpoint.meta["aux_model"] = aux.config.to_json();
  return result;
}

std::vector<std::vector<geo::Detection>> run_inference(
    const LoadedModel& m, const std::vector<data::PairedScene>& scenes) {
  std::vector<std::vector<geo::Detection>> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) {
    out.push_back(model::infer(s.cloud(m.modality()), m.config, m.params, m.projection));
  }
  return out;
}

EvalReport evaluate(const LoadedModel& m, const std::vector<data::PairedScene>& scenes) {
  const auto dets = run_inference(m, scenes);
  std::vector<std::vector<geo::Box3D>> gts;
  for (const auto& s : scenes) gts.push_back(s.gt);
  return evaluate_detections(dets, gts, m.modality());
}

}  // namespace halo::pipeline
