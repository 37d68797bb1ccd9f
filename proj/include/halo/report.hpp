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

#include <map>
#include <string>
#include <vector>

#include "halo/eval.hpp"
#include "halo/train.hpp"

namespace halo::pipeline {

// Parses a JSON-lines training log; blank lines are skipped.
std::vector<StepLog> parse_log(const std::string& text);

// File name -> contents: "pr_curves.svg", "summary.md", and "loss_curves.svg"
// when a log is given. Output is a pure function of the inputs.
std::map<std::string, std::string> render_report(const EvalReport& report,
                                                 const std::vector<StepLog>& log);

}  // namespace halo::pipeline
