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

// halo: data generation, training, evaluation and reporting.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "halo/errors.hpp"
#include "halo/report.hpp"
#include "halo/synth.hpp"
#include "halo/train.hpp"

#include "selfcheck.hpp"

namespace fs = std::filesystem;
using namespace halo;
using namespace halo::pipeline;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

struct GenDataArgs {
  std::string out;
  std::size_t scenes = 250;
  std::uint64_t seed = 0;
  std::string profile = "toy";
};

int gen_data(const GenDataArgs& a) {
  const auto m = data::generate_dataset(a.out, a.scenes, a.seed, a.profile);
  fmt::print("wrote {} train and {} val scenes to {}\n", m.splits.at("train").size(),
             m.splits.at("val").size(), a.out);
  return kExitOk;
}

struct TrainArgs {
  int stage = 1;
  std::string modality;
  std::string data;
  std::string config;
  std::string out;
  std::string aux_ckpt;
  std::string init_ckpt;
};

TrainConfig load_train_config(const TrainArgs& a) {
  nlohmann::json j = a.config.empty() ? nlohmann::json::object() : read_json(a.config);
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  if (j.contains("stage") && j.at("stage") != a.stage) {
    throw ConfigError("config stage differs from --stage");
  }
  if (j.contains("primary") && j.at("primary") != a.modality) {
    throw ConfigError("config primary modality differs from --modality");
  }
  j["stage"] = a.stage;
  j["primary"] = a.modality;
  return TrainConfig::from_json(j);
}

int train(const TrainArgs& a) {
  if (a.stage == 2 && a.aux_ckpt.empty()) {
    throw ConfigError("stage 2 needs --aux-ckpt (the auxiliary stage-1 checkpoint)");
  }
  if (a.stage == 2 && a.init_ckpt.empty()) {
    throw ConfigError("stage 2 needs --init-ckpt (the primary stage-1 checkpoint)");
  }
  const TrainConfig cfg = load_train_config(a);
  const auto train_split = data::load_split(a.data, "train");
  std::vector<data::PairedScene> val;
  if (cfg.eval_every > 0) val = data::load_split(a.data, "val");

  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const fs::path log_path = out.string() + ".log.jsonl";
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw ConfigError(fmt::format("cannot write '{}'", log_path.string()));
  auto on_step = [&](const StepLog& l) { log << l.to_json(cfg.stage).dump() << '\n' << std::flush; };

  TrainResult r;
  try {
    if (cfg.stage == 1) {
      r = train_stage1(train_split, cfg, val.empty() ? nullptr : &val, on_step);
    } else {
      r = train_stage2(train_split, cfg, read_checkpoint(a.init_ckpt), read_checkpoint(a.aux_ckpt),
                       val.empty() ? nullptr : &val, on_step);
    }
  } catch (const NumericError& e) {
    const fs::path dump = out.string() + ".nan.json";
    write_text(dump, nlohmann::json({{"error", e.what()}, {"config", cfg.to_json()}}).dump(2));
    fmt::print(stderr, "numeric abort: {}\ndiagnostics written to {}\n", e.what(), dump.string());
    return kExitNumeric;
  }
  write_checkpoint(out, r.checkpoint);
  const auto& last = r.log.back();
  fmt::print("wrote {} (stage {}, {} steps, selected step {}, final L_s1 {:.4f})\n", a.out,
             cfg.stage, r.log.size(), r.selected_step, last.l_s1);
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "val";
  std::string report;
};

int eval(const EvalArgs& a) {
  const LoadedModel m = load_model(read_checkpoint(a.ckpt));
  const auto scenes = data::load_split(a.data, a.split);
  const EvalReport rep = evaluate(m, scenes);
  write_text(a.report, rep.to_json().dump(2) + "\n");
  for (const auto& [cls, r] : rep.classes) {
    fmt::print("{:<10} AP {:>6}  (IoU {:.2f}, {} GT, {} detections)\n", geo::class_name(cls),
               r.ap ? fmt::format("{:.2f}", *r.ap) : std::string("-"), r.iou, r.pr.num_gt,
               r.pr.num_det);
  }
  fmt::print("mAP {}\n", rep.map ? fmt::format("{:.2f}", *rep.map) : std::string("-"));
  return kExitOk;
}

struct ReportArgs {
  std::string eval;
  std::string log;
  std::string out;
};

int report(const ReportArgs& a) {
  EvalReport rep;
  try {
    rep = EvalReport::from_json(read_json(a.eval));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("{}: {}", a.eval, e.what()));
  }
  std::vector<StepLog> log;
  if (!a.log.empty()) log = parse_log(read_text(a.log));
  fs::create_directories(a.out);
  for (const auto& [name, text] : render_report(rep, log)) {
    write_text(fs::path(a.out) / name, text);
    fmt::print("wrote {}\n", (fs::path(a.out) / name).string());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal point cloud detection: data, training, evaluation"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a paired synthetic dataset");
  gen_cmd->add_option("--out", gd.out, "Output directory")->required();
  gen_cmd->add_option("--scenes", gd.scenes, "Number of scenes")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gd.seed, "Dataset seed");
  gen_cmd->add_option("--profile", gd.profile, "Point budgets")
      ->check(CLI::IsMember({"toy", "paper"}));

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train stage 1 or stage 2");
  train_cmd->add_option("--stage", ta.stage, "Training stage")->required()
      ->check(CLI::IsMember({1, 2}));
  train_cmd->add_option("--modality", ta.modality, "Primary modality")->required()
      ->check(CLI::IsMember({"lidar", "radar"}));
  train_cmd->add_option("--data", ta.data, "Dataset directory")->required();
  train_cmd->add_option("--config", ta.config, "Train config JSON");
  train_cmd->add_option("--out", ta.out, "Output checkpoint")->required();
  train_cmd->add_option("--aux-ckpt", ta.aux_ckpt, "Auxiliary stage-1 checkpoint (stage 2)");
  train_cmd->add_option("--init-ckpt", ta.init_ckpt, "Primary stage-1 checkpoint (stage 2)");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--data", ea.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ea.split, "Split name");
  eval_cmd->add_option("--report", ea.report, "Output report JSON")->required();

  ReportArgs ra;
  auto* report_cmd = app.add_subcommand("report", "Render PR and loss curves and a summary");
  report_cmd->add_option("--eval", ra.eval, "Report JSON from eval")->required();
  report_cmd->add_option("--log", ra.log, "Training log (JSON lines)");
  report_cmd->add_option("--out", ra.out, "Output directory")->required();

  auto* selfcheck_cmd = app.add_subcommand("selfcheck", "Run gradient and kernel checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen_cmd) return gen_data(gd);
    if (*train_cmd) return train(ta);
    if (*eval_cmd) return eval(ea);
    if (*report_cmd) return report(ra);
    if (*selfcheck_cmd) return run_selfcheck() ? kExitOk : kExitFailure;
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const ParseError& e) {
    fmt::print(stderr, "parse error: {}\n", e.what());
    return kExitConfig;
  } catch (const NumericError& e) {
    fmt::print(stderr, "numeric abort: {}\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
