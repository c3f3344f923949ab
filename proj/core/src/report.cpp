// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fusetrack/errors.hpp"
#include "fusetrack/experiment.hpp"
#include "json_util.hpp"

namespace fusetrack {

namespace fs = std::filesystem;
using detail::json;

namespace {

std::string num(double v, const char* f = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          std::span<const SvgSeries> series) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  constexpr double kW = 640, kH = 400, kL = 70, kR = 20, kT = 40, kB = 60;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return kL + (x - x0) / (x1 - x0) * (kW - kL - kR); };
  auto py = [&](double y) { return kH - kB - (y - y0) / (y1 - y0) * (kH - kT - kB); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
         escape_xml(title) + "</text>\n";
  svg += "<line x1=\"" + num(kL, "%.1f") + "\" y1=\"" + num(kH - kB, "%.1f") + "\" x2=\"" + num(kW - kR, "%.1f") +
         "\" y2=\"" + num(kH - kB, "%.1f") + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + num(kL, "%.1f") + "\" y1=\"" + num(kT, "%.1f") + "\" x2=\"" + num(kL, "%.1f") + "\" y2=\"" +
         num(kH - kB, "%.1f") + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    svg += "<text x=\"" + num(px(xv), "%.1f") + "\" y=\"" + num(kH - kB + 18, "%.1f") +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + num(xv, "%.3g") + "</text>\n";
    svg += "<text x=\"" + num(kL - 6, "%.1f") + "\" y=\"" + num(py(yv) + 4, "%.1f") +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + num(yv, "%.3g") + "</text>\n";
  }
  svg += "<text x=\"" + num((kL + kW - kR) / 2, "%.1f") + "\" y=\"" + num(kH - 18, "%.1f") +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + escape_xml(x_label) + "</text>\n";
  svg += "<text x=\"18\" y=\"" + num((kT + kH - kB) / 2, "%.1f") + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
         num((kT + kH - kB) / 2, "%.1f") + ")\" font-family=\"sans-serif\" font-size=\"13\">" + escape_xml(y_label) +
         "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % 6];
    std::string pts;
    for (std::size_t i = 0; i < std::min(series[s].x.size(), series[s].y.size()); ++i) {
      if (!pts.empty()) pts += " ";
      pts += num(px(series[s].x[i]), "%.2f") + "," + num(py(series[s].y[i]), "%.2f");
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts +
           "\"/>\n";
    const double ly = kT + 14 + 16 * static_cast<double>(s);
    svg += "<line x1=\"" + num(kW - kR - 120, "%.1f") + "\" y1=\"" + num(ly, "%.1f") + "\" x2=\"" +
           num(kW - kR - 100, "%.1f") + "\" y2=\"" + num(ly, "%.1f") + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + num(kW - kR - 94, "%.1f") + "\" y=\"" + num(ly + 4, "%.1f") +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + escape_xml(series[s].label) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

fs::path cmd_report(const fs::path& run_dir, const fs::path& out_root) {
  if (!fs::is_directory(run_dir)) throw IoError("run directory not found: " + run_dir.string());
  std::vector<fs::path> evals;
  for (const auto& e : fs::directory_iterator(run_dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_directory() && name.rfind("eval-", 0) == 0 && fs::exists(e.path() / "summary.json")) {
      evals.push_back(e.path());
    }
  }
  if (evals.empty()) throw IoError("no eval results under " + run_dir.string());
  std::sort(evals.begin(), evals.end());

  struct Run {
    std::string id;
    std::string method;
    json summary;
    std::vector<std::string> dof_names;
    std::vector<std::vector<double>> angles;  // [sample][dof]
  };
  std::vector<Run> runs;
  std::string fingerprint;
  for (const auto& dir : evals) {
    Run r;
    r.id = dir.filename().string();
    const std::string text = detail::read_text_file(dir / "summary.json");
    fingerprint += r.id + "\n" + text;
    r.summary = detail::parse_json(text, "summary.json");
    r.method = r.summary.at("method").get<std::string>();
    const auto rows = read_csv(dir / "angles.csv");
    if (rows.empty()) throw IoError("empty angles.csv in " + dir.string());
    r.dof_names.assign(rows[0].begin() + 3, rows[0].end());
    for (std::size_t i = 1; i < rows.size(); ++i) {
      std::vector<double> v;
      for (std::size_t c = 3; c < rows[i].size(); ++c) v.push_back(std::stod(rows[i][c]));
      r.angles.push_back(std::move(v));
    }
    runs.push_back(std::move(r));
  }

  const fs::path dir = make_run_dir(out_root, "report", fingerprint);

  std::string summary = "run,method,metric,value\n";
  for (const auto& r : runs) {
    for (const auto& [k, v] : r.summary.at("metrics").items()) {
      summary += r.id + "," + r.method + "," + k + "," + num(v.get<double>()) + "\n";
    }
  }
  write_text(dir / "summary.csv", summary);

  std::string per_dof = "dof";
  for (const auto& r : runs) per_dof += "," + r.id;
  per_dof += "\n";
  const std::vector<std::string>& names = runs.front().dof_names;
  for (std::size_t d = 0; d < names.size(); ++d) {
    per_dof += names[d];
    for (const auto& r : runs) {
      double s = 0.0;
      for (const auto& a : r.angles) s += a.at(d);
      per_dof += "," + num(r.angles.empty() ? 0.0 : s / static_cast<double>(r.angles.size()));
    }
    per_dof += "\n";
  }
  write_text(dir / "per_dof.csv", per_dof);

  std::vector<double> thresholds;
  for (int t = 0; t <= 30; ++t) thresholds.push_back(t);
  std::vector<SvgSeries> curves;
  std::vector<std::vector<double>> cdfs;
  for (const auto& r : runs) {
    std::vector<double> all;
    for (const auto& a : r.angles) all.insert(all.end(), a.begin(), a.end());
    cdfs.push_back(all.empty() ? std::vector<double>(thresholds.size(), 0.0) : error_cdf(all, thresholds));
    curves.push_back({r.method, thresholds, cdfs.back()});
  }
  std::string cdf = "threshold_deg";
  for (const auto& r : runs) cdf += "," + r.id;
  cdf += "\n";
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    cdf += num(thresholds[t], "%.0f");
    for (const auto& c : cdfs) cdf += "," + num(c[t]);
    cdf += "\n";
  }
  write_text(dir / "cdf.csv", cdf);
  write_text(dir / "cdf.svg", line_plot_svg("Joint angle error CDF", "angle error (deg)", "joints below (%)", curves));

  static const char* kFingers[5] = {"thumb", "index", "middle", "ring", "pinky"};
  std::string attention = "run,finger,occluded_mass,visible_mass,difference,occluded_frames,visible_frames\n";
  for (const auto& r : runs) {
    if (!r.summary.contains("attention")) continue;
    const json& a = r.summary.at("attention");
    for (std::size_t f = 0; f < 5; ++f) {
      const double occ = a.at("occluded_mass")[f].get<double>();
      const double vis = a.at("visible_mass")[f].get<double>();
      attention += r.id + "," + kFingers[f] + "," + num(occ) + "," + num(vis) + "," + num(occ - vis) + "," +
                   std::to_string(a.at("occluded_count")[f].get<int>()) + "," +
                   std::to_string(a.at("visible_count")[f].get<int>()) + "\n";
    }
  }
  write_text(dir / "attention.csv", attention);

  json consolidated;
  for (const auto& r : runs) consolidated[r.id] = r.summary;
  write_text(dir / "report.json", consolidated.dump(2) + "\n");
  return dir;
}

}  // namespace fusetrack
