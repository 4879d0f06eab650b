#include "fisheripm/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>

namespace fisheripm {

namespace {

DistributionSpec shifted_pair_member(int d, double shift) {
  Vec mean(d, 0.0);
  mean[0] = shift;
  Matrix cov(d, d);
  for (int i = 0; i < d; ++i) cov(i, i) = 1.0;
  return Gaussian(std::move(mean), std::move(cov));
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

QuadratureConfig quad_from_json(const nlohmann::json& j) {
  QuadratureConfig q;
  q.points_per_axis = j.value("points_per_axis", 0);
  const std::string scheme = j.value("scheme", std::string("trapezoid"));
  q.scheme = scheme == "gauss_legendre" ? QuadratureConfig::Scheme::GaussLegendre
                                        : QuadratureConfig::Scheme::Trapezoid;
  q.refinement_factor = j.value("refinement_factor", 2);
  q.converge_tol = j.value("converge_tol", 1e-3);
  if (j.contains("bounds"))
    for (const auto& b : j.at("bounds"))
      q.bounds.push_back({b[0].get<double>(), b[1].get<double>()});
  return q;
}

nlohmann::json quad_to_json(const QuadratureConfig& q) {
  nlohmann::json j = {
      {"points_per_axis", q.points_per_axis},
      {"scheme",
       q.scheme == QuadratureConfig::Scheme::GaussLegendre ? "gauss_legendre" : "trapezoid"},
      {"refinement_factor", q.refinement_factor},
      {"converge_tol", q.converge_tol},
  };
  if (!q.bounds.empty()) {
    nlohmann::json b = nlohmann::json::array();
    for (const auto& ax : q.bounds) b.push_back({ax[0], ax[1]});
    j["bounds"] = b;
  }
  return j;
}

ExperimentConfig ExperimentConfig::parse(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.raw = j;
  try {
    cfg.experiment = j.value("experiment", std::string());
    if (j.contains("p")) cfg.p = spec_from_json(j.at("p"));
    if (j.contains("q")) cfg.q = spec_from_json(j.at("q"));
    if (j.contains("data")) cfg.data = spec_from_json(j.at("data"));
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
    if (j.contains("quad")) cfg.quad = quad_from_json(j.at("quad"));
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      if (s.contains("shifts")) cfg.shifts = s.at("shifts").get<std::vector<double>>();
      if (s.contains("n_train")) cfg.n_train_grid = s.at("n_train").get<std::vector<long>>();
      if (s.contains("seeds")) cfg.seeds = s.at("seeds").get<std::vector<uint64_t>>();
    }
    cfg.fig2_dim = j.value("fig2_dim", 2);
    cfg.n_train = j.value("n_train", cfg.n_train);
    cfg.n_eval = j.value("n_eval", cfg.n_eval);
    if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (cfg.shifts.empty() || cfg.n_train_grid.empty() || cfg.seeds.empty())
    throw ConfigError("config: sweep grids must be non-empty");
  return cfg;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw ConfigError("override has an empty path segment: " + assignment);
    if (dot == std::string::npos) {
      nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

std::filesystem::path resolve_out_dir(const ExperimentConfig& cfg) {
  std::filesystem::path dir = cfg.out_dir;
  if (dir.empty()) {
    if (const char* env = std::getenv("FISHERIPM_OUT")) dir = env;
    else dir = "out";
  }
  std::filesystem::create_directories(dir);
  return dir;
}

nlohmann::json run_oracle(const ExperimentConfig& cfg) {
  if (!cfg.p || !cfg.q) throw ConfigError("oracle: config needs p and q specs");
  nlohmann::json out;
  const QuadratureResult chi2 = chi2_distance(*cfg.p, *cfg.q, cfg.quad);
  out["chi2"] = chi2.value;
  out["error_estimate"] = chi2.error_estimate;
  try {
    out["pearson"] = pearson_divergence(*cfg.p, *cfg.q, cfg.quad).value;
  } catch (const std::runtime_error& e) {
    out["pearson"] = nullptr;
    out["pearson_error"] = e.what();
  }
  try {
    out["neyman"] = neyman_divergence(*cfg.p, *cfg.q, cfg.quad).value;
  } catch (const std::runtime_error& e) {
    out["neyman"] = nullptr;
    out["neyman_error"] = e.what();
  }
  nlohmann::json grid = quad_to_json(cfg.quad);
  grid["resolved_points_per_axis"] = chi2.points_per_axis;
  out["grid_config"] = grid;
  return out;
}

nlohmann::json run_estimate(const ExperimentConfig& cfg) {
  if (!cfg.p || !cfg.q) throw ConfigError("estimate: config needs p and q specs");
  const auto out_dir = resolve_out_dir(cfg);
  const EstimateResult res = estimate_ipm(*cfg.p, *cfg.q, cfg.train, cfg.n_train, cfg.n_eval);
  double oracle = std::numeric_limits<double>::quiet_NaN();
  if (dim(*cfg.p) <= 4) oracle = chi2_distance(*cfg.p, *cfg.q, cfg.quad).value;
  write_metrics_csv(out_dir / "estimate_metrics.csv", res.metrics, oracle);
  save_params(out_dir / "critic.params", res.critic);
  write_manifest(out_dir / "manifest.json", cfg.raw);
  return nlohmann::json{{"estimate", res.estimate},
                        {"std_error", res.std_error},
                        {"chi2_oracle", oracle},
                        {"diverged", res.diverged},
                        {"median_iter_ms", res.median_iter_ms},
                        {"metrics_csv", (out_dir / "estimate_metrics.csv").string()}};
}

double loglog_slope(const Vec& x, const Vec& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log10(x[i]);
    const double ly = std::log10(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

Fig2Report run_fig2(const ExperimentConfig& cfg) {
  if (cfg.fig2_dim < 1 || cfg.fig2_dim > 2)
    throw ConfigError("fig2: dimension must be 1 or 2");
  const auto out_dir = resolve_out_dir(cfg);
  const int d = cfg.fig2_dim;

  // Oracle chi2 per shift, once.
  std::vector<double> oracle(cfg.shifts.size());
  for (std::size_t i = 0; i < cfg.shifts.size(); ++i) {
    const DistributionSpec p = shifted_pair_member(d, 0.0);
    const DistributionSpec q = shifted_pair_member(d, cfg.shifts[i]);
    oracle[i] = cfg.shifts[i] == 0.0 ? 0.0 : chi2_distance(p, q, cfg.quad).value;
  }

  // Sweep points run in parallel; each point is internally sequential and
  // lands in its preassigned slot, so the merge order is deterministic.
  const std::size_t n_pts = cfg.shifts.size() * cfg.n_train_grid.size() * cfg.seeds.size();
  Fig2Report report;
  report.rows.resize(n_pts);
#pragma omp parallel for schedule(dynamic)
  for (long long idx = 0; idx < static_cast<long long>(n_pts); ++idx) {
    std::size_t rem = static_cast<std::size_t>(idx);
    const std::size_t si = rem % cfg.shifts.size();
    rem /= cfg.shifts.size();
    const std::size_t ni = rem % cfg.n_train_grid.size();
    const std::size_t ki = rem / cfg.n_train_grid.size();
    const DistributionSpec p = shifted_pair_member(d, 0.0);
    const DistributionSpec q = shifted_pair_member(d, cfg.shifts[si]);
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seeds[ki], 1000 + idx);
    const EstimateResult res =
        estimate_ipm(p, q, tc, cfg.n_train_grid[ni], cfg.n_eval, Exec::Serial);
    Fig2Row& row = report.rows[idx];
    row.shift = cfg.shifts[si];
    row.n_train = cfg.n_train_grid[ni];
    row.seed = cfg.seeds[ki];
    row.chi2_oracle = oracle[si];
    row.estimate = res.estimate;
    row.std_error = res.std_error;
  }

  // CSV
  {
    std::ofstream out(out_dir / "fig2_results.csv");
    out << "shift,n_train,seed,chi2_oracle,estimate,std_error\n";
    for (const auto& r : report.rows)
      out << fmt(r.shift) << ',' << r.n_train << ',' << r.seed << ',' << fmt(r.chi2_oracle)
          << ',' << fmt(r.estimate) << ',' << fmt(r.std_error) << '\n';
  }

  // Aggregate: mean estimate per (shift, n); mean abs error per n over the
  // shifts whose oracle distance is informative (chi2 >= 0.5).
  const auto mean_estimate = [&](std::size_t si, std::size_t ni) {
    double acc = 0.0;
    int cnt = 0;
    for (const auto& r : report.rows)
      if (r.shift == cfg.shifts[si] && r.n_train == cfg.n_train_grid[ni]) {
        acc += r.estimate;
        ++cnt;
      }
    return acc / cnt;
  };

  for (const auto& r : report.rows)
    if (r.estimate > r.chi2_oracle + 3.0 * r.std_error) report.below_bound = false;

  Vec err_per_n;
  for (std::size_t ni = 0; ni < cfg.n_train_grid.size(); ++ni) {
    double acc = 0.0;
    int cnt = 0;
    for (std::size_t si = 0; si < cfg.shifts.size(); ++si) {
      if (oracle[si] < 0.5) continue;
      for (const auto& r : report.rows)
        if (r.shift == cfg.shifts[si] && r.n_train == cfg.n_train_grid[ni]) {
          acc += std::abs(r.estimate - r.chi2_oracle);
          ++cnt;
        }
    }
    err_per_n.push_back(cnt > 0 ? acc / cnt : 0.0);
  }
  report.mean_abs_err_per_n = err_per_n;
  if (err_per_n.size() >= 2) {
    Vec ns;
    for (long n : cfg.n_train_grid) ns.push_back(static_cast<double>(n));
    report.error_slope = loglog_slope(ns, err_per_n);
  }

  const std::size_t ni_max = cfg.n_train_grid.size() - 1;
  for (std::size_t si = 0; si < cfg.shifts.size(); ++si) {
    if (oracle[si] < 0.5) continue;
    const double est = mean_estimate(si, ni_max);
    report.max_rel_err_top_n =
        std::max(report.max_rel_err_top_n, std::abs(est - oracle[si]) / oracle[si]);
  }

  // Plots: estimate vs shift at the largest n, and error vs n (log-log).
  {
    SvgSeries oracle_s{"chi2 oracle", {}, {}, "#d62728", false};
    SvgSeries est_s{"estimate", {}, {}, "#1f77b4", false};
    for (std::size_t si = 0; si < cfg.shifts.size(); ++si) {
      oracle_s.x.push_back(cfg.shifts[si]);
      oracle_s.y.push_back(oracle[si]);
      est_s.x.push_back(cfg.shifts[si]);
      est_s.y.push_back(mean_estimate(si, ni_max));
    }
    write_line_plot(out_dir / "fig2_estimate_vs_shift.svg", {oracle_s, est_s},
                    {"distance vs mean shift", "shift", "distance", false, false});
    SvgSeries err_s{"mean |error|", {}, {}, "#2ca02c", false};
    for (std::size_t ni = 0; ni < cfg.n_train_grid.size(); ++ni) {
      err_s.x.push_back(static_cast<double>(cfg.n_train_grid[ni]));
      err_s.y.push_back(err_per_n[ni]);
    }
    write_line_plot(out_dir / "fig2_error_vs_n.svg", {err_s},
                    {"estimation error vs training samples", "n_train", "mean |error|", true,
                     true});
  }
  write_manifest(out_dir / "manifest.json", cfg.raw);
  return report;
}

Vec ring_coverage(const Matrix& samples, int k, double radius) {
  Vec counts(k, 0.0);
  for (std::size_t r = 0; r < samples.rows; ++r) {
    const double x = samples(r, 0), y = samples(r, 1);
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) {
      const double angle = 2.0 * std::numbers::pi * j / k;
      const double dx = x - radius * std::cos(angle);
      const double dy = y - radius * std::sin(angle);
      const double dist = dx * dx + dy * dy;
      if (dist < best_d) {
        best_d = dist;
        best = j;
      }
    }
    counts[best] += 1.0;
  }
  for (double& c : counts) c /= static_cast<double>(samples.rows);
  return counts;
}

nlohmann::json run_train_gan(const ExperimentConfig& cfg) {
  if (!cfg.data) throw ConfigError("train-gan: config needs a data spec");
  const auto out_dir = resolve_out_dir(cfg);
  const TrainResult res = train_gan(*cfg.data, cfg.train);
  write_metrics_csv(out_dir / "gan_metrics.csv", res.metrics);
  save_params(out_dir / "generator.params", res.generator);
  save_params(out_dir / "critic.params", res.critic);
  write_manifest(out_dir / "manifest.json", cfg.raw);

  nlohmann::json out = {{"diverged", res.diverged},
                        {"fail_iter", res.fail_iter},
                        {"max_abs_f", res.max_abs_f},
                        {"median_iter_ms", res.median_iter_ms},
                        {"metrics_csv", (out_dir / "gan_metrics.csv").string()}};
  if (const auto* ring = std::get_if<Ring>(&*cfg.data)) {
    Rng rng(derive_seed(cfg.train.seed, 9999));
    const Matrix z = standard_normal(8000, cfg.train.n_z, rng);
    const Matrix xs = forward(res.generator, z);
    const Vec cov = ring_coverage(xs, ring->k, ring->radius);
    out["mode_coverage"] = cov;
    out["min_mode_coverage"] = *std::min_element(cov.begin(), cov.end());
  }
  try {
    emit_plots(out_dir / "gan_metrics.csv", out_dir, "gan");
  } catch (const MalformedCsvError&) {
    // no plottable columns; metrics file still stands
  }
  return out;
}

nlohmann::json run_train_ssl(const ExperimentConfig& cfg) {
  if (!cfg.data) throw ConfigError("train-ssl: config needs a data spec");
  const auto* labeled = std::get_if<LabeledMixture>(&*cfg.data);
  if (!labeled) throw ConfigError("train-ssl: data spec must be a labeled_mixture");
  if (!cfg.train.ssl) throw ConfigError("train-ssl: config needs train.ssl settings");
  const auto out_dir = resolve_out_dir(cfg);
  const SslConfig ssl = *cfg.train.ssl;
  const TrainResult res = train_ssl(*labeled, ssl, cfg.train);
  write_metrics_csv(out_dir / "ssl_metrics.csv", res.metrics);
  save_params(out_dir / "critic.params", res.critic);
  save_params(out_dir / "generator.params", res.generator);
  write_manifest(out_dir / "manifest.json", cfg.raw);
  const nlohmann::json summary = {
      {"seed", cfg.train.seed},
      {"labeled_per_class", ssl.labeled_per_class},
      {"critic_form", ssl.critic_form == SslConfig::CriticForm::KPlusOne ? "kplus1" : "split"},
      {"conditional", ssl.conditional},
      {"test_accuracy", res.test_accuracy},
      {"diverged", res.diverged},
  };
  std::ofstream(out_dir / "ssl_summary.json") << summary.dump(2) << '\n';
  return summary;
}

const CompareRow* CompareReport::find(const std::string& mode) const {
  for (const auto& r : rows)
    if (r.mode == mode) return &r;
  return nullptr;
}

CompareReport run_baseline_compare(const ExperimentConfig& cfg) {
  if (!cfg.p || !cfg.q) throw ConfigError("compare: config needs p and q specs");
  const auto out_dir = resolve_out_dir(cfg);
  CompareReport report;
  report.chi2_oracle = chi2_distance(*cfg.p, *cfg.q, cfg.quad).value;

  const std::vector<ConstraintMode> modes = {FisherAlm{}, WeightClip{0.01}, GradientPenalty{10.0},
                                             FGanChi2{}};
  for (const auto& mode : modes) {
    TrainConfig tc = cfg.train;
    tc.mode = mode;
    CompareRow row;
    row.mode = mode_name(mode);
    try {
      const EstimateResult res = estimate_ipm(*cfg.p, *cfg.q, tc, cfg.n_train, cfg.n_eval);
      row.estimate = res.estimate;
      row.abs_err = std::abs(res.estimate - report.chi2_oracle);
      row.median_iter_ms = res.median_iter_ms;
      row.diverged = res.diverged || res.max_abs_f > 1e6;
      row.max_abs_f = res.max_abs_f;
    } catch (const std::runtime_error&) {
      row.diverged = true;  // per-mode failures are recorded, not fatal
    }
    report.rows.push_back(row);
  }

  std::ofstream out(out_dir / "compare.csv");
  out << "mode,estimate,abs_err,median_iter_ms,diverged,max_abs_f\n";
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : report.rows) {
    out << r.mode << ',' << fmt(r.estimate) << ',' << fmt(r.abs_err) << ','
        << fmt(r.median_iter_ms) << ',' << (r.diverged ? 1 : 0) << ',' << fmt(r.max_abs_f)
        << '\n';
    rows_json.push_back({{"mode", r.mode},
                         {"estimate", r.estimate},
                         {"abs_err", r.abs_err},
                         {"median_iter_ms", r.median_iter_ms},
                         {"diverged", r.diverged},
                         {"max_abs_f", r.max_abs_f}});
  }
  std::ofstream(out_dir / "compare.json")
      << nlohmann::json{{"chi2_oracle", report.chi2_oracle}, {"rows", rows_json}}.dump(2) << '\n';
  write_manifest(out_dir / "manifest.json", cfg.raw);
  return report;
}

std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& csv,
                                              const std::filesystem::path& out_dir,
                                              const std::string& prefix) {
  const CsvTable t = read_csv(csv);
  if (t.rows.empty()) throw MalformedCsvError("emit_plots: metrics file has no rows");
  if (t.column("iter") < 0) throw MalformedCsvError("emit_plots: missing iter column");
  const Vec iters = t.column_values("iter");

  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  const auto panel = [&](const std::string& col, const std::string& color) {
    if (t.column(col) < 0) return;
    const Vec ys = t.column_values(col);
    bool has = false;
    for (double v : ys)
      if (std::isfinite(v)) has = true;
    if (!has) return;
    const auto path = out_dir / (prefix + "_" + col + ".svg");
    write_line_plot(path, {{col, iters, ys, color, false}}, {col + " trace", "iter", col});
    written.push_back(path);
  };
  panel("e_hat", "#1f77b4");
  panel("omega_hat", "#2ca02c");
  panel("lambda", "#d62728");
  panel("loss", "#9467bd");
  panel("chi2_kde_proxy", "#8c564b");
  if (written.empty()) throw MalformedCsvError("emit_plots: no plottable columns");
  return written;
}

}  // namespace fisheripm
