#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lnpde/eval/evaluate.hpp"

namespace lnpde::eval {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Static SVG line chart; non-finite points are skipped.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series,
                           bool log_y = false);

nlohmann::json summary_json(const std::vector<EvalReport>& reports);

/// Writes nrmse_by_time.csv (one row per parameter group and time index),
/// per_trajectory.csv, error_fields.csv, summary.json and nrmse_vs_time.svg.
void write_eval_report(const std::filesystem::path& dir, const std::vector<EvalReport>& reports);

/// Writes ablation.csv, ablation_summary.json and one SVG per factor.
void write_ablation_report(const std::filesystem::path& dir,
                           const std::vector<AblationResult>& results);

}  // namespace lnpde::eval
