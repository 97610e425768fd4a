#include "lnpde/eval/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "lnpde/util/files.hpp"

namespace lnpde::eval {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(num(v));
}

nlohmann::json breakdown_json(const NrmseBreakdown& b) {
  nlohmann::json per_time = nlohmann::json::array();
  for (double v : b.per_time) per_time.push_back(finite_or_null(v));
  return {{"nrmse", finite_or_null(b.overall)}, {"per_time", per_time}, {"excluded_frames", b.excluded}};
}

std::string mu_columns(std::size_t z) {
  std::string s;
  for (std::size_t k = 0; k < z; ++k) s += ",mu" + std::to_string(k);
  return s;
}

std::string mu_values(const std::vector<double>& mu) {
  std::string s;
  for (double v : mu) s += "," + num(v);
  return s;
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series,
                           bool log_y) {
  constexpr double W = 720, H = 440, L = 70, R = 170, T = 40, Bm = 50;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  auto ty = [&](double y) { return log_y ? std::log10(y) : y; };
  auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!log_y || y > 0); };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  if (!log_y) y0 = std::min(y0, 0.0);
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - Bm - (ty(y) - y0) / (y1 - y0) * (H - T - Bm); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << escape_xml(title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - Bm << "\" x2=\"" << W - R << "\" y2=\"" << H - Bm
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - Bm
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0, fy = y0 + (y1 - y0) * k / 4.0;
    const double sx = px(fx), sy = H - Bm - (fy - y0) / (y1 - y0) * (H - T - Bm);
    o << "<text x=\"" << sx << "\" y=\"" << H - Bm + 16 << "\" text-anchor=\"middle\">" << num(fx)
      << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\">"
      << num(log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << sy << "\" x2=\"" << W - R << "\" y2=\"" << sy
      << "\" stroke=\"#dddddd\"/>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
    << escape_xml(x_label) << "</text>\n";
  o << "<text transform=\"translate(16," << (T + H - Bm) / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << escape_xml(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % std::size(colors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < std::min(series[s].x.size(), series[s].y.size()); ++i) {
      if (!usable(series[s].x[i], series[s].y[i])) continue;
      o << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
    }
    o << "\"/>\n";
    const double ly = T + 10 + 18.0 * static_cast<double>(s);
    o << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 36 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << W - R + 42 << "\" y=\"" << ly + 4 << "\">" << escape_xml(series[s].name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

nlohmann::json summary_json(const std::vector<EvalReport>& reports) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : r.groups) {
      groups.push_back({{"mu", g.mu}, {"trajectories", g.trajectories.size()},
                        {"nrmse", finite_or_null(g.overall)}});
    }
    out.push_back({{"factor", r.factor},
                   {"dt", r.dt},
                   {"space", to_string(r.space)},
                   {"model_nrmse", finite_or_null(r.model_nrmse)},
                   {"physical_nrmse", finite_or_null(r.physical_nrmse)},
                   {"frames", r.times.size()},
                   {"all_times", breakdown_json(r.all)},
                   {"training_times", breakdown_json(r.training_times)},
                   {"diverged_trajectories", r.diverged},
                   {"groups", groups}});
  }
  return out;
}

void write_eval_report(const std::filesystem::path& dir, const std::vector<EvalReport>& reports) {
  std::filesystem::create_directories(dir);
  const std::size_t z = reports.empty() || reports.front().groups.empty()
                            ? 0
                            : reports.front().groups.front().mu.size();
  std::ostringstream by_time, per_traj, fields;
  by_time << "factor,group" << mu_columns(z) << ",t_index,time,training_time,nrmse,count\n";
  per_traj << "factor,group" << mu_columns(z) << ",trajectory,nrmse\n";
  fields << "factor,trajectory,t_index,time,cell,error\n";
  std::vector<Series> series;
  for (const auto& r : reports) {
    const std::size_t F = r.times.size() - 1;
    for (std::size_t gi = 0; gi < r.groups.size(); ++gi) {
      const auto& g = r.groups[gi];
      for (std::size_t j = 0; j < F; ++j) {
        std::size_t count = 0;
        for (auto i : g.trajectories) count += std::isnan(r.all.cells[i * F + j]) ? 0 : 1;
        by_time << r.factor << ',' << gi << mu_values(g.mu) << ',' << j + 1 << ',' << num(r.times[j + 1])
                << ',' << ((j + 1) % r.factor == 0 ? 1 : 0) << ',' << num(g.per_time[j]) << ','
                << count << '\n';
      }
      for (auto i : g.trajectories) {
        per_traj << r.factor << ',' << gi << mu_values(g.mu) << ',' << i << ','
                 << num(r.all.per_trajectory[i]) << '\n';
      }
    }
    for (const auto& ef : r.error_fields)
      for (std::size_t k = 0; k < ef.field.size(); ++k)
        fields << r.factor << ',' << ef.trajectory << ',' << ef.frame << ',' << num(ef.time) << ','
               << k << ',' << num(ef.field[k]) << '\n';
    Series s{"dt/" + std::to_string(r.factor), {}, {}};
    s.x.assign(r.times.begin() + 1, r.times.end());
    s.y = r.all.per_time;
    series.push_back(std::move(s));
  }
  write_file_atomic(dir / "nrmse_by_time.csv", by_time.str());
  write_file_atomic(dir / "per_trajectory.csv", per_traj.str());
  write_file_atomic(dir / "error_fields.csv", fields.str());
  write_file_atomic(dir / "summary.json", summary_json(reports).dump(2) + "\n");
  write_file_atomic(dir / "nrmse_vs_time.svg",
                    line_chart_svg("nRMSE over time", "t", "nRMSE", series, true));
}

void write_ablation_report(const std::filesystem::path& dir,
                           const std::vector<AblationResult>& results) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  csv << "variant,factor,t_index,time,nrmse\n";
  nlohmann::json summary = nlohmann::json::array();
  std::vector<std::size_t> factors;
  for (const auto& res : results) {
    for (const auto& r : res.reports) {
      if (std::find(factors.begin(), factors.end(), r.factor) == factors.end()) factors.push_back(r.factor);
      for (std::size_t j = 0; j < r.all.per_time.size(); ++j)
        csv << res.label << ',' << r.factor << ',' << j + 1 << ',' << num(r.times[j + 1]) << ','
            << num(r.all.per_time[j]) << '\n';
    }
    summary.push_back({{"variant", res.label},
                       {"epochs", res.training.history.size()},
                       {"best_epoch", res.training.best_epoch},
                       {"best_val", finite_or_null(res.training.best_val)},
                       {"reports", summary_json(res.reports)}});
  }
  write_file_atomic(dir / "ablation.csv", csv.str());
  write_file_atomic(dir / "ablation_summary.json", summary.dump(2) + "\n");
  for (std::size_t a : factors) {
    std::vector<Series> series;
    for (const auto& res : results)
      for (const auto& r : res.reports) {
        if (r.factor != a) continue;
        Series s{res.label, {r.times.begin() + 1, r.times.end()}, r.all.per_time};
        series.push_back(std::move(s));
      }
    write_file_atomic(dir / ("ablation_dt" + std::to_string(a) + ".svg"),
                      line_chart_svg("nRMSE over time, dt/" + std::to_string(a), "t", "nRMSE", series, true));
  }
}

}  // namespace lnpde::eval
