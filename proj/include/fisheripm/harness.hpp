#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fisheripm/io.hpp"
#include "fisheripm/oracle.hpp"
#include "fisheripm/train.hpp"

namespace fisheripm {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Experiment configuration: one JSON file plus dot-path overrides.
struct ExperimentConfig {
  std::string experiment;
  nlohmann::json raw;
  std::optional<DistributionSpec> p, q, data;
  TrainConfig train;
  QuadratureConfig quad;
  std::vector<double> shifts{0.0, 0.5, 1.0, 2.0, 4.0};
  std::vector<long> n_train_grid{1000, 10000, 100000};
  std::vector<uint64_t> seeds{1};
  int fig2_dim = 2;
  long n_train = 0;
  long n_eval = 100000;
  std::filesystem::path out_dir;

  static ExperimentConfig parse(const nlohmann::json& j);
};

QuadratureConfig quad_from_json(const nlohmann::json& j);
nlohmann::json quad_to_json(const QuadratureConfig& q);

// Applies `key.path=value` into the JSON tree; values parse as JSON when
// possible and fall back to strings.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Output root: explicit out_dir, else $FISHERIPM_OUT, else ./out.
std::filesystem::path resolve_out_dir(const ExperimentConfig& cfg);

nlohmann::json run_oracle(const ExperimentConfig& cfg);

nlohmann::json run_estimate(const ExperimentConfig& cfg);

struct Fig2Row {
  double shift = 0.0;
  long n_train = 0;
  uint64_t seed = 0;
  double chi2_oracle = 0.0;
  double estimate = 0.0;
  double std_error = 0.0;
};

struct Fig2Report {
  std::vector<Fig2Row> rows;
  Vec mean_abs_err_per_n;          // over shifts with chi2 >= 0.5, seed-averaged
  double error_slope = 0.0;        // log-log mean |err| vs n, shifts with chi2 >= 0.5
  double max_rel_err_top_n = 0.0;  // at the largest n, over shifts with chi2 >= 0.5
  bool below_bound = true;         // estimate <= oracle + 3 SE on every row
};

Fig2Report run_fig2(const ExperimentConfig& cfg);

nlohmann::json run_train_gan(const ExperimentConfig& cfg);

nlohmann::json run_train_ssl(const ExperimentConfig& cfg);

struct CompareRow {
  std::string mode;
  double estimate = 0.0;
  double abs_err = 0.0;
  double median_iter_ms = 0.0;
  bool diverged = false;
  double max_abs_f = 0.0;
};

struct CompareReport {
  double chi2_oracle = 0.0;
  std::vector<CompareRow> rows;
  const CompareRow* find(const std::string& mode) const;
};

CompareReport run_baseline_compare(const ExperimentConfig& cfg);

// One SVG per panel from a metrics CSV; returns the written paths.
// Throws MalformedCsvError for empty or malformed input.
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& csv,
                                              const std::filesystem::path& out_dir,
                                              const std::string& prefix = "metrics");

// Fraction of samples claimed by each of the k ring modes under
// nearest-center assignment.
Vec ring_coverage(const Matrix& samples, int k, double radius);

// OLS slope of log10(y) against log10(x).
double loglog_slope(const Vec& x, const Vec& y);

}  // namespace fisheripm
