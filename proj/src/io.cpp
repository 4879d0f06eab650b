#include "fisheripm/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#ifndef FISHERIPM_GIT_REV
#define FISHERIPM_GIT_REV "unknown"
#endif

namespace fisheripm {

namespace {

constexpr int kParamsFormatVersion = 1;
constexpr int kMetricsFormatVersion = 1;

std::string fmt_full(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_svg(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricsRecord>& metrics, double chi2_oracle) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path.string());
  out << "iter,e_hat,omega_hat,lambda,loss,chi2_oracle,chi2_kde_proxy,wall_ms\n";
  for (const auto& m : metrics) {
    out << m.iter << ',' << fmt_full(m.e_hat) << ',' << fmt_full(m.omega_hat) << ','
        << fmt_full(m.lambda) << ',' << fmt_full(m.loss) << ',' << fmt_full(chi2_oracle) << ','
        << fmt_full(m.chi2_kde_proxy) << ',' << fmt_full(m.wall_ms) << '\n';
  }
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  return -1;
}

Vec CsvTable::column_values(const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw MalformedCsvError("csv: missing column " + name);
  Vec out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MalformedCsvError("read_csv: cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw MalformedCsvError("read_csv: missing header");
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) t.columns.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Vec row;
    row.reserve(t.columns.size());
    std::stringstream ls(line);
    while (std::getline(ls, cell, ',')) {
      if (cell.empty()) {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw MalformedCsvError("read_csv: bad numeric cell '" + cell + "'");
      }
    }
    while (row.size() < t.columns.size())
      row.push_back(std::numeric_limits<double>::quiet_NaN());
    if (row.size() != t.columns.size()) throw MalformedCsvError("read_csv: ragged row");
    t.rows.push_back(std::move(row));
  }
  return t;
}

void save_params(const std::filesystem::path& path, const Params& p) {
  nlohmann::json header = {
      {"format", "fisheripm-params"},
      {"version", kParamsFormatVersion},
      {"layer_sizes", p.spec.layer_sizes},
      {"leaky_slope", p.spec.leaky_slope},
      {"output_activation",
       p.spec.output_activation == OutputActivation::Tanh ? "tanh" : "linear"},
      {"output_bias", p.spec.output_bias},
      {"klass_count", p.klass_count},
      {"count", p.x.size()},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_params: cannot open " + path.string());
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(p.x.data()),
            static_cast<std::streamsize>(p.x.size() * sizeof(double)));
}

Params load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_params: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_params: missing header");
  const nlohmann::json header = nlohmann::json::parse(line);
  if (header.at("format") != "fisheripm-params" ||
      header.at("version").get<int>() != kParamsFormatVersion)
    throw std::runtime_error("load_params: unsupported format");
  MlpSpec spec;
  spec.layer_sizes = header.at("layer_sizes").get<std::vector<int>>();
  spec.leaky_slope = header.at("leaky_slope").get<double>();
  spec.output_activation = header.at("output_activation").get<std::string>() == "tanh"
                               ? OutputActivation::Tanh
                               : OutputActivation::Linear;
  spec.output_bias = header.at("output_bias").get<bool>();
  Params p = make_params(spec, header.at("klass_count").get<int>());
  const std::size_t count = header.at("count").get<std::size_t>();
  if (count != p.x.size()) throw std::runtime_error("load_params: size mismatch");
  in.read(reinterpret_cast<char*>(p.x.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("load_params: truncated value block");
  return p;
}

namespace {

struct PlotScale {
  double lo, hi;
  bool log;
  double map(double v, double px_lo, double px_hi) const {
    const double a = log ? std::log10(v) : v;
    const double l = log ? std::log10(lo) : lo;
    const double h = log ? std::log10(hi) : hi;
    const double t = (a - l) / (h - l);
    return px_lo + t * (px_hi - px_lo);
  }
};

bool usable(double v, bool log_scale) {
  return std::isfinite(v) && (!log_scale || v > 0.0);
}

}  // namespace

std::string render_line_plot(const std::vector<SvgSeries>& series, const SvgOptions& opt) {
  bool any = false;
  double x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], opt.log_x) || !usable(s.y[i], opt.log_y)) continue;
      if (!any) {
        x_lo = x_hi = s.x[i];
        y_lo = y_hi = s.y[i];
        any = true;
      } else {
        x_lo = std::min(x_lo, s.x[i]);
        x_hi = std::max(x_hi, s.x[i]);
        y_lo = std::min(y_lo, s.y[i]);
        y_hi = std::max(y_hi, s.y[i]);
      }
    }
  }
  if (!any) throw std::invalid_argument("render_line_plot: no plottable points");
  if (x_lo == x_hi) {
    x_lo -= 0.5;
    x_hi += 0.5;
  }
  if (y_lo == y_hi) {
    y_lo = opt.log_y ? y_lo * 0.5 : y_lo - 0.5;
    y_hi = opt.log_y ? y_hi * 2.0 : y_hi + 0.5;
  }
  if (!opt.log_y) {
    const double pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;
  }
  const PlotScale xs{x_lo, x_hi, opt.log_x};
  const PlotScale ys{y_lo, y_hi, opt.log_y};
  const double w = 640, h = 420, ml = 70, mr = 20, mt = 40, mb = 50;

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" "
         "viewBox=\"0 0 640 420\">\n";
  svg += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"15\">" + opt.title + "</text>\n";
  svg += "<rect x=\"" + fmt_svg(ml) + "\" y=\"" + fmt_svg(mt) + "\" width=\"" +
         fmt_svg(w - ml - mr) + "\" height=\"" + fmt_svg(h - mt - mb) +
         "\" fill=\"none\" stroke=\"#333\"/>\n";

  // 5 ticks per axis
  for (int i = 0; i <= 4; ++i) {
    const double t = i / 4.0;
    const double xv = opt.log_x ? std::pow(10.0, std::log10(x_lo) +
                                                     t * (std::log10(x_hi) - std::log10(x_lo)))
                                : x_lo + t * (x_hi - x_lo);
    const double yv = opt.log_y ? std::pow(10.0, std::log10(y_lo) +
                                                     t * (std::log10(y_hi) - std::log10(y_lo)))
                                : y_lo + t * (y_hi - y_lo);
    const double px = xs.map(xv, ml, w - mr);
    const double py = ys.map(yv, h - mb, mt);
    svg += "<line x1=\"" + fmt_svg(px) + "\" y1=\"" + fmt_svg(h - mb) + "\" x2=\"" + fmt_svg(px) +
           "\" y2=\"" + fmt_svg(h - mb + 5) + "\" stroke=\"#333\"/>\n";
    svg += "<text x=\"" + fmt_svg(px) + "\" y=\"" + fmt_svg(h - mb + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
           fmt_svg(xv) + "</text>\n";
    svg += "<line x1=\"" + fmt_svg(ml - 5) + "\" y1=\"" + fmt_svg(py) + "\" x2=\"" + fmt_svg(ml) +
           "\" y2=\"" + fmt_svg(py) + "\" stroke=\"#333\"/>\n";
    svg += "<text x=\"" + fmt_svg(ml - 8) + "\" y=\"" + fmt_svg(py + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fmt_svg(yv) +
           "</text>\n";
  }
  svg += "<text x=\"320\" y=\"" + fmt_svg(h - 12) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + opt.x_label +
         "</text>\n";
  svg += "<text x=\"16\" y=\"230\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" transform=\"rotate(-90 16 230)\">" + opt.y_label + "</text>\n";

  int legend_row = 0;
  for (const auto& s : series) {
    std::string pts;
    std::string markers;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], opt.log_x) || !usable(s.y[i], opt.log_y)) continue;
      const double px = xs.map(s.x[i], ml, w - mr);
      const double py = ys.map(s.y[i], h - mb, mt);
      if (!s.points_only) pts += fmt_svg(px) + "," + fmt_svg(py) + " ";
      markers += "<circle cx=\"" + fmt_svg(px) + "\" cy=\"" + fmt_svg(py) +
                 "\" r=\"2.5\" fill=\"" + s.color + "\"/>\n";
    }
    if (!s.points_only && !pts.empty())
      svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + s.color +
             "\" stroke-width=\"1.5\"/>\n";
    svg += markers;
    const double ly = mt + 14 + 16 * legend_row++;
    svg += "<line x1=\"" + fmt_svg(w - mr - 130) + "\" y1=\"" + fmt_svg(ly) + "\" x2=\"" +
           fmt_svg(w - mr - 110) + "\" y2=\"" + fmt_svg(ly) + "\" stroke=\"" + s.color +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + fmt_svg(w - mr - 105) + "\" y=\"" + fmt_svg(ly + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + s.name + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void write_line_plot(const std::filesystem::path& path, const std::vector<SvgSeries>& series,
                     const SvgOptions& opt) {
  const std::string svg = render_line_plot(series, opt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_line_plot: cannot open " + path.string());
  out << svg;
}

void write_manifest(const std::filesystem::path& path, const nlohmann::json& config) {
  nlohmann::json j = {
      {"config", config},
      {"formats",
       {{"params", kParamsFormatVersion}, {"metrics_csv", kMetricsFormatVersion}}},
      {"git_revision", FISHERIPM_GIT_REV},
  };
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_manifest: cannot open " + path.string());
  out << j.dump(2) << '\n';
}

namespace {

nlohmann::json mlp_to_json(const MlpSpec& s) {
  return {{"layers", s.layer_sizes},
          {"leaky_slope", s.leaky_slope},
          {"output_activation", s.output_activation == OutputActivation::Tanh ? "tanh" : "linear"},
          {"output_bias", s.output_bias}};
}

MlpSpec mlp_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.layer_sizes = j.at("layers").get<std::vector<int>>();
  s.leaky_slope = j.value("leaky_slope", 0.2);
  s.output_activation =
      j.value("output_activation", std::string("linear")) == "tanh" ? OutputActivation::Tanh
                                                                    : OutputActivation::Linear;
  s.output_bias = j.value("output_bias", true);
  return s;
}

nlohmann::json adam_to_json(const AdamConfig& a) {
  return {{"eta", a.eta}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

AdamConfig adam_from_json(const nlohmann::json& j) {
  AdamConfig a;
  a.eta = j.value("eta", 1e-3);
  a.beta1 = j.value("beta1", 0.5);
  a.beta2 = j.value("beta2", 0.999);
  a.eps = j.value("eps", 1e-8);
  return a;
}

nlohmann::json mode_to_json(const ConstraintMode& m) {
  nlohmann::json j = {{"name", mode_name(m)}};
  if (const auto* wc = std::get_if<WeightClip>(&m)) j["c"] = wc->c;
  if (const auto* gp = std::get_if<GradientPenalty>(&m)) j["mu"] = gp->mu;
  return j;
}

ConstraintMode mode_from_json(const nlohmann::json& j) {
  const std::string name = j.at("name").get<std::string>();
  if (name == "fisher_alm") return FisherAlm{};
  if (name == "weight_clip") return WeightClip{j.value("c", 0.01)};
  if (name == "gradient_penalty") return GradientPenalty{j.value("mu", 10.0)};
  if (name == "fgan_chi2") return FGanChi2{};
  if (name == "neyman_alm") return NeymanAlm{};
  throw std::invalid_argument("mode_from_json: unknown mode '" + name + "'");
}

nlohmann::json ssl_to_json(const SslConfig& s) {
  return {{"k", s.k},
          {"lambda_d", s.lambda_d},
          {"lambda_g", s.lambda_g},
          {"labeled_per_class", s.labeled_per_class},
          {"critic_form", s.critic_form == SslConfig::CriticForm::KPlusOne ? "kplus1" : "split"},
          {"conditional", s.conditional}};
}

SslConfig ssl_from_json(const nlohmann::json& j) {
  SslConfig s;
  s.k = j.value("k", 3);
  s.lambda_d = j.value("lambda_d", 0.1);
  s.lambda_g = j.value("lambda_g", 0.1);
  s.labeled_per_class = j.value("labeled_per_class", 10);
  s.critic_form = j.value("critic_form", std::string("split")) == "kplus1"
                      ? SslConfig::CriticForm::KPlusOne
                      : SslConfig::CriticForm::Split;
  s.conditional = j.value("conditional", false);
  return s;
}

}  // namespace

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j = {
      {"critic", mlp_to_json(cfg.critic)},
      {"generator", mlp_to_json(cfg.generator)},
      {"n_c", cfg.n_c},
      {"batch", cfg.batch},
      {"n_z", cfg.n_z},
      {"mode", mode_to_json(cfg.mode)},
      {"critic_adam", adam_to_json(cfg.critic_adam)},
      {"gen_adam", adam_to_json(cfg.gen_adam)},
      {"rho", cfg.rho},
      {"gamma", cfg.gamma},
      {"total_iters", cfg.total_iters},
      {"seed", cfg.seed},
      {"init_stdev", cfg.init_stdev},
      {"wd_omega", cfg.wd_omega},
      {"wd_v", cfg.wd_v},
      {"train_v_only", cfg.train_v_only},
      {"freeze_critic", cfg.freeze_critic},
      {"fixed_dataset", cfg.fixed_dataset},
      {"proxy_every", cfg.proxy_every},
      {"metrics_every", cfg.metrics_every},
      {"metrics_eval_n", cfg.metrics_eval_n},
  };
  if (cfg.ssl) j["ssl"] = ssl_to_json(*cfg.ssl);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  if (j.contains("critic")) cfg.critic = mlp_from_json(j.at("critic"));
  if (j.contains("generator")) cfg.generator = mlp_from_json(j.at("generator"));
  cfg.n_c = j.value("n_c", cfg.n_c);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.n_z = j.value("n_z", cfg.n_z);
  if (j.contains("mode")) cfg.mode = mode_from_json(j.at("mode"));
  if (j.contains("critic_adam")) cfg.critic_adam = adam_from_json(j.at("critic_adam"));
  if (j.contains("gen_adam")) cfg.gen_adam = adam_from_json(j.at("gen_adam"));
  cfg.rho = j.value("rho", cfg.rho);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.total_iters = j.value("total_iters", cfg.total_iters);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.init_stdev = j.value("init_stdev", cfg.init_stdev);
  cfg.wd_omega = j.value("wd_omega", cfg.wd_omega);
  cfg.wd_v = j.value("wd_v", cfg.wd_v);
  cfg.train_v_only = j.value("train_v_only", cfg.train_v_only);
  cfg.freeze_critic = j.value("freeze_critic", cfg.freeze_critic);
  cfg.fixed_dataset = j.value("fixed_dataset", cfg.fixed_dataset);
  cfg.proxy_every = j.value("proxy_every", cfg.proxy_every);
  cfg.metrics_every = j.value("metrics_every", cfg.metrics_every);
  cfg.metrics_eval_n = j.value("metrics_eval_n", cfg.metrics_eval_n);
  if (j.contains("ssl") && !j.at("ssl").is_null()) cfg.ssl = ssl_from_json(j.at("ssl"));
  return cfg;
}

}  // namespace fisheripm
