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

#include "halo/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "halo/errors.hpp"

namespace halo::pipeline {

namespace {

constexpr double kWidth = 560, kHeight = 400;
constexpr double kLeft = 64, kRight = 150, kTop = 40, kBottom = 56;
constexpr const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Axis range [0, top] with a tick step from {1, 2, 5} x 10^k.
double nice_step(double top) {
  const double raw = top / 4.0;
  const double base = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * base >= raw) return m * base;
  }
  return 10.0 * base;
}

std::string fmt_num(double v) {
  std::string s = fmt::format("{:.4f}", v);
  while (s.back() == '0') s.pop_back();
  if (s.back() == '.') s.pop_back();
  return s == "-0" ? "0" : s;
}

std::string plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                 const std::vector<Series>& series, double xmax, double ymax) {
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + pw * x / xmax; };
  auto sy = [&](double y) { return kTop + ph * (1.0 - y / ymax); };
  std::ostringstream o;
  o << fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" "
      "viewBox=\"0 0 {} {}\" font-family=\"sans-serif\" font-size=\"12\">\n",
      kWidth, kHeight, kWidth, kHeight);
  o << fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", kWidth, kHeight);
  o << fmt::format("<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
                   fmt_num(kLeft + pw / 2), title);
  const double xs = nice_step(xmax), ys = nice_step(ymax);
  for (double x = 0.0; x <= xmax * (1 + 1e-9); x += xs) {
    o << fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#ddd\"/>\n",
                     fmt_num(sx(x)), fmt_num(sy(0)), fmt_num(sy(ymax)));
    o << fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                     fmt_num(sx(x)), fmt_num(sy(0) + 16), fmt_num(x));
  }
  for (double y = 0.0; y <= ymax * (1 + 1e-9); y += ys) {
    o << fmt::format("<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"#ddd\"/>\n",
                     fmt_num(sy(y)), fmt_num(sx(0)), fmt_num(sx(xmax)));
    o << fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
                     fmt_num(sx(0) - 6), fmt_num(sy(y) + 4), fmt_num(y));
  }
  o << fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" "
                   "stroke=\"black\"/>\n",
                   fmt_num(kLeft), fmt_num(kTop), fmt_num(pw), fmt_num(ph));
  o << fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                   fmt_num(kLeft + pw / 2), fmt_num(kHeight - 16), xlabel);
  o << fmt::format("<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" "
                   "transform=\"rotate(-90 16 {0})\">{1}</text>\n",
                   fmt_num(kTop + ph / 2), ylabel);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % std::size(kColors)];
    if (!series[s].points.empty()) {
      o << fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"",
                       color);
      for (std::size_t i = 0; i < series[s].points.size(); ++i) {
        const auto& [x, y] = series[s].points[i];
        o << (i ? " " : "") << fmt_num(sx(x)) << ',' << fmt_num(sy(std::min(y, ymax)));
      }
      o << "\"/>\n";
    }
    const double ly = kTop + 12 + 18.0 * static_cast<double>(s);
    const double lx = kWidth - kRight + 12;
    o << fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" "
                     "stroke-width=\"2\"/>\n",
                     fmt_num(lx), fmt_num(ly), fmt_num(lx + 18), fmt_num(ly), color);
    o << fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", fmt_num(lx + 24), fmt_num(ly + 4),
                     series[s].name);
  }
  o << "</svg>\n";
  return o.str();
}

std::string pr_svg(const EvalReport& report) {
  std::vector<Series> series;
  for (const auto& [cls, r] : report.classes) {
    Series s;
    s.name = geo::class_name(cls) +
             (r.ap ? fmt::format(" (AP {:.2f})", *r.ap) : std::string(" (no GT)"));
    // Step curve through (recall, precision) after each detection.
    if (r.ap && !r.pr.points.empty()) {
      s.points.push_back({0.0, r.pr.points.front().second});
      for (const auto& p : r.pr.points) s.points.push_back(p);
    }
    series.push_back(std::move(s));
  }
  return plot(fmt::format("Precision-recall ({})", geo::to_string(report.modality)), "recall",
              "precision", series, 1.0, 1.0);
}

std::string loss_svg(const std::vector<StepLog>& log) {
  const bool stage2 = std::any_of(log.begin(), log.end(), [](const StepLog& l) {
    return l.l_s2 != 0.0 || l.l_fm != 0.0 || l.l_sdet != 0.0;
  });
  std::vector<Series> series = {{"L_s1", {}}, {"L_Ctr", {}}, {"L_O-Reg", {}}, {"L_Det", {}}};
  if (stage2) {
    series.push_back({"L_FM", {}});
    series.insert(series.begin(), Series{"L_s2", {}});
  }
  double xmax = 1.0, ymax = 0.0;
  for (const auto& l : log) {
    const double x = static_cast<double>(l.step);
    xmax = std::max(xmax, x);
    std::vector<double> ys = {l.l_s1, l.l_ctr, l.l_oreg, l.l_det};
    if (stage2) {
      ys.push_back(l.l_fm);
      ys.insert(ys.begin(), l.l_s2);
    }
    for (std::size_t s = 0; s < ys.size(); ++s) {
      series[s].points.push_back({x, ys[s]});
      ymax = std::max(ymax, ys[s]);
    }
  }
  if (!(ymax > 0.0)) ymax = 1.0;
  return plot("Training losses", "step", "loss", series, xmax, ymax);
}

std::string summary_md(const EvalReport& report, const std::vector<StepLog>& log) {
  std::ostringstream o;
  o << "# Evaluation summary\n\n";
  o << "Modality: " << geo::to_string(report.modality) << "\n\n";
  o << "| Class | AP | IoU | GT | Detections | TP |\n";
  o << "|---|---|---|---|---|---|\n";
  for (const auto& [cls, r] : report.classes) {
    o << fmt::format("| {} | {} | {:.2f} | {} | {} | {} |\n", geo::class_name(cls),
                     r.ap ? fmt::format("{:.2f}", *r.ap) : std::string("-"), r.iou, r.pr.num_gt,
                     r.pr.num_det, r.pr.true_positives);
  }
  o << "\nmAP: " << (report.map ? fmt::format("{:.2f}", *report.map) : std::string("-"))
    << "\n";
  if (!log.empty()) {
    const std::size_t tail = std::min<std::size_t>(10, log.size());
    double last = 0.0;
    for (std::size_t i = log.size() - tail; i < log.size(); ++i) last += log[i].l_s1;
    last /= static_cast<double>(tail);
    o << fmt::format("\nTraining: {} steps, L_s1 {:.4f} at the first step, {:.4f} over the "
                     "last {} steps\n",
                     log.size(), log.front().l_s1, last, tail);
  }
  return o.str();
}

}  // namespace

std::vector<StepLog> parse_log(const std::string& text) {
  std::vector<StepLog> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      StepLog l;
      l.step = j.at("step").get<std::uint64_t>();
      l.l_s1 = j.at("l_s1").get<double>();
      l.l_ctr = j.at("l_ctr").get<double>();
      l.l_oreg = j.at("l_oreg").get<double>();
      l.l_det = j.at("l_det").get<double>();
      l.l_fm = j.at("l_fm").get<double>();
      l.l_sdet = j.at("l_sdet").get<double>();
      l.l_s2 = j.value("l_s2", 0.0);
      l.lr = j.at("lr").get<double>();
      l.n_p = j.at("n_p").get<double>();
      out.push_back(l);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("log line {}: {}", lineno, e.what()));
    }
  }
  return out;
}

std::map<std::string, std::string> render_report(const EvalReport& report,
                                                 const std::vector<StepLog>& log) {
  std::map<std::string, std::string> files;
  files["pr_curves.svg"] = pr_svg(report);
  files["summary.md"] = summary_md(report, log);
  if (!log.empty()) files["loss_curves.svg"] = loss_svg(log);
  return files;
}

}  // namespace halo::pipeline
