#include <omp.h>

#include <fstream>
#include <iostream>

#include "fisheripm/harness.hpp"

#include <CLI11.hpp>

namespace {

using fisheripm::ConfigError;
using fisheripm::ExperimentConfig;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  int threads = 0;
  bool serial = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("-c,--config", opts.config_path, "experiment config JSON file");
  cmd->add_option("--set", opts.overrides, "override config values, key.path=value")
      ->take_all();
  cmd->add_option("-o,--out", opts.out_dir, "output directory");
  cmd->add_option("--threads", opts.threads, "OpenMP thread count (0 = runtime default)");
  cmd->add_flag("--serial", opts.serial, "run the serial reference kernels");
}

ExperimentConfig load_config(const CommonOpts& opts, const std::string& experiment) {
  nlohmann::json j;
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in) throw ConfigError("cannot open config file: " + opts.config_path);
    in >> j;
  }
  j["experiment"] = experiment;
  for (const auto& ov : opts.overrides) fisheripm::apply_override(j, ov);
  if (!opts.out_dir.empty()) j["out_dir"] = opts.out_dir;
  ExperimentConfig cfg = ExperimentConfig::parse(j);
  if (opts.serial) fisheripm::set_default_exec(fisheripm::Exec::Serial);
  if (opts.threads > 0) omp_set_num_threads(opts.threads);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fisher IPM toolkit: chi-squared oracles, constrained critic training, "
               "toy GAN/SSL experiments"};
  app.require_subcommand(1);

  CommonOpts oracle_o, estimate_o, fig2_o, gan_o, ssl_o, compare_o, plot_o;
  auto* cmd_oracle = app.add_subcommand("oracle", "exact chi2/Pearson/Neyman via quadrature");
  add_common(cmd_oracle, oracle_o);
  auto* cmd_estimate = app.add_subcommand("estimate", "train a critic and estimate the distance");
  add_common(cmd_estimate, estimate_o);
  auto* cmd_fig2 = app.add_subcommand("fig2", "shifted-Gaussian sweep: oracle vs MLP estimate");
  add_common(cmd_fig2, fig2_o);
  auto* cmd_gan = app.add_subcommand("train-gan", "adversarial training on a synthetic target");
  add_common(cmd_gan, gan_o);
  auto* cmd_ssl = app.add_subcommand("train-ssl", "semi-supervised toy training");
  add_common(cmd_ssl, ssl_o);
  auto* cmd_compare = app.add_subcommand("compare", "constraint mechanisms side by side");
  add_common(cmd_compare, compare_o);

  std::string plot_csv, plot_prefix = "metrics";
  auto* cmd_plot = app.add_subcommand("plot", "render SVG panels from a metrics CSV");
  add_common(cmd_plot, plot_o);
  cmd_plot->add_option("csv", plot_csv, "metrics CSV file")->required();
  cmd_plot->add_option("--prefix", plot_prefix, "output file prefix");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_oracle->parsed()) {
      std::cout << fisheripm::run_oracle(load_config(oracle_o, "oracle_check")).dump(2) << '\n';
    } else if (cmd_estimate->parsed()) {
      std::cout << fisheripm::run_estimate(load_config(estimate_o, "estimate")).dump(2) << '\n';
    } else if (cmd_fig2->parsed()) {
      const ExperimentConfig cfg = load_config(fig2_o, "fig2_sweep");
      const fisheripm::Fig2Report rep = fisheripm::run_fig2(cfg);
      nlohmann::json j = {{"rows", rep.rows.size()},
                          {"error_slope", rep.error_slope},
                          {"max_rel_err_top_n", rep.max_rel_err_top_n},
                          {"below_bound", rep.below_bound}};
      std::cout << j.dump(2) << '\n';
    } else if (cmd_gan->parsed()) {
      std::cout << fisheripm::run_train_gan(load_config(gan_o, "toy_gan")).dump(2) << '\n';
    } else if (cmd_ssl->parsed()) {
      std::cout << fisheripm::run_train_ssl(load_config(ssl_o, "ssl_toy")).dump(2) << '\n';
    } else if (cmd_compare->parsed()) {
      const ExperimentConfig cfg = load_config(compare_o, "baseline_compare");
      const fisheripm::CompareReport rep = fisheripm::run_baseline_compare(cfg);
      bool any_failed = false;
      for (const auto& r : rep.rows) {
        std::cout << r.mode << ": estimate=" << r.estimate << " abs_err=" << r.abs_err
                  << " median_iter_ms=" << r.median_iter_ms << " diverged=" << r.diverged
                  << '\n';
        if (r.mode == "fisher_alm" && r.diverged) any_failed = true;
      }
      if (any_failed) return 1;
    } else if (cmd_plot->parsed()) {
      const ExperimentConfig cfg = load_config(plot_o, "plot");
      const auto files = fisheripm::emit_plots(plot_csv, fisheripm::resolve_out_dir(cfg),
                                               plot_prefix);
      for (const auto& f : files) std::cout << f.string() << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
