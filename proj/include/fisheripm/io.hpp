#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fisheripm/mlp.hpp"
#include "fisheripm/train.hpp"

#include <json.hpp>

namespace fisheripm {

struct MalformedCsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Metrics CSV: header iter,e_hat,omega_hat,lambda,loss,chi2_oracle,
// chi2_kde_proxy,wall_ms; missing values are empty cells.
void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricsRecord>& metrics,
                       double chi2_oracle = std::numeric_limits<double>::quiet_NaN());

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<Vec> rows;  // NaN for empty cells

  int column(const std::string& name) const;  // -1 when absent
  Vec column_values(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

// Params file: one JSON header line with layout metadata, then the flat
// values as little-endian float64. Versioned; see docs/formats.md.
void save_params(const std::filesystem::path& path, const Params& p);
Params load_params(const std::filesystem::path& path);

// Deterministic SVG line plots: fixed formatting, no timestamps.
struct SvgSeries {
  std::string name;
  Vec x, y;
  std::string color = "#1f77b4";
  bool points_only = false;
};

struct SvgOptions {
  std::string title, x_label, y_label;
  bool log_x = false;
  bool log_y = false;
};

std::string render_line_plot(const std::vector<SvgSeries>& series, const SvgOptions& opt);
void write_line_plot(const std::filesystem::path& path, const std::vector<SvgSeries>& series,
                     const SvgOptions& opt);

// Run manifest: config + seed + format versions + build revision, enough to
// re-run bit-identically.
void write_manifest(const std::filesystem::path& path, const nlohmann::json& config);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace fisheripm
