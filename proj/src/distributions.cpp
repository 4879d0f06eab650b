#include "fisheripm/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "fisheripm/rng.hpp"

namespace fisheripm {

namespace {

constexpr double kSimplexTol = 1e-12;
constexpr std::size_t kSampleBlock = 4096;  // rows per RNG substream

void check_simplex(const Vec& w, const char* what) {
  double s = 0.0;
  for (double v : w) {
    if (v < 0.0) throw std::invalid_argument(std::string(what) + ": negative weight");
    s += v;
  }
  if (std::abs(s - 1.0) > kSimplexTol)
    throw std::invalid_argument(std::string(what) + ": weights do not sum to 1");
}

std::size_t pick_component(const Vec& weights, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;
}

void sample_gaussian_row(const Gaussian& g, Rng& rng, double* out) {
  const std::size_t d = g.dim();
  Vec z(d);
  for (auto& v : z) v = rng.normal();
  const Matrix& L = g.chol();
  for (std::size_t i = 0; i < d; ++i) {
    double s = g.mean[i];
    for (std::size_t k = 0; k <= i; ++k) s += L(i, k) * z[k];
    out[i] = s;
  }
}

}  // namespace

Gaussian::Gaussian(Vec mean_, Matrix cov_) : mean(std::move(mean_)), cov(std::move(cov_)) {
  const std::size_t d = mean.size();
  if (d == 0) throw std::invalid_argument("Gaussian: empty mean");
  if (cov.rows != d || cov.cols != d) throw std::invalid_argument("Gaussian: cov shape mismatch");
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      if (std::abs(cov(i, j) - cov(j, i)) > 1e-12 * (1.0 + std::abs(cov(i, j))))
        throw std::invalid_argument("Gaussian: cov not symmetric");
  chol_ = linalg::cholesky(cov);  // throws if not SPD
  log_norm_ = -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) +
                      linalg::log_det(chol_));
}

double Gaussian::log_density(const double* x) const {
  const std::size_t d = dim();
  Vec diff(d);
  for (std::size_t i = 0; i < d; ++i) diff[i] = x[i] - mean[i];
  return log_norm_ - 0.5 * linalg::quad_form_inv(chol_, diff);
}

double Gaussian::density(const double* x) const { return std::exp(log_density(x)); }

GaussianMixture::GaussianMixture(Vec weights_, std::vector<Gaussian> components_)
    : weights(std::move(weights_)), components(std::move(components_)) {
  if (components.empty()) throw std::invalid_argument("GaussianMixture: no components");
  if (weights.size() != components.size())
    throw std::invalid_argument("GaussianMixture: weight/component count mismatch");
  check_simplex(weights, "GaussianMixture");
  const std::size_t d = components.front().dim();
  for (const auto& c : components)
    if (c.dim() != d) throw std::invalid_argument("GaussianMixture: mixed dimensions");
}

double GaussianMixture::density(const double* x) const {
  double s = 0.0;
  for (std::size_t i = 0; i < components.size(); ++i)
    s += weights[i] * components[i].density(x);
  return s;
}

Ring::Ring(int k_, double radius_, double sigma_) : k(k_), radius(radius_), sigma(sigma_) {
  if (k < 1) throw std::invalid_argument("Ring: k must be >= 1");
  if (!(radius > 0.0)) throw std::invalid_argument("Ring: radius must be > 0");
  if (!(sigma > 0.0)) throw std::invalid_argument("Ring: sigma must be > 0");
}

UniformBox::UniformBox(Vec lo_, Vec hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
  if (lo.empty() || lo.size() != hi.size())
    throw std::invalid_argument("UniformBox: bad bounds");
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (!(lo[i] < hi[i])) throw std::invalid_argument("UniformBox: lo must be < hi");
}

double UniformBox::volume() const {
  double v = 1.0;
  for (std::size_t i = 0; i < lo.size(); ++i) v *= hi[i] - lo[i];
  return v;
}

double UniformBox::density(const double* x) const {
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (x[i] < lo[i] || x[i] > hi[i]) return 0.0;
  return 1.0 / volume();
}

LabeledMixture::LabeledMixture(std::vector<GaussianMixture> classes_, Vec prior_)
    : classes(std::move(classes_)), prior(std::move(prior_)) {
  if (classes.empty()) throw std::invalid_argument("LabeledMixture: no classes");
  if (prior.size() != classes.size())
    throw std::invalid_argument("LabeledMixture: prior/class count mismatch");
  check_simplex(prior, "LabeledMixture");
  const std::size_t d = classes.front().dim();
  for (const auto& c : classes)
    if (c.dim() != d) throw std::invalid_argument("LabeledMixture: mixed dimensions");
}

std::size_t dim(const DistributionSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::size_t {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Ring>) return 2;
        else return s.dim();
      },
      spec);
}

GaussianMixture as_mixture(const DistributionSpec& spec) {
  if (const auto* g = std::get_if<Gaussian>(&spec)) return GaussianMixture({1.0}, {*g});
  if (const auto* m = std::get_if<GaussianMixture>(&spec)) return *m;
  if (const auto* r = std::get_if<Ring>(&spec)) {
    Vec w(static_cast<std::size_t>(r->k), 1.0 / r->k);
    std::vector<Gaussian> comps;
    comps.reserve(r->k);
    Matrix cov(2, 2);
    cov(0, 0) = cov(1, 1) = r->sigma * r->sigma;
    for (int j = 0; j < r->k; ++j) {
      const double angle = 2.0 * std::numbers::pi * j / r->k;
      comps.emplace_back(Vec{r->radius * std::cos(angle), r->radius * std::sin(angle)}, cov);
    }
    return GaussianMixture(std::move(w), std::move(comps));
  }
  if (const auto* l = std::get_if<LabeledMixture>(&spec)) {
    Vec w;
    std::vector<Gaussian> comps;
    for (std::size_t c = 0; c < l->classes.size(); ++c) {
      for (std::size_t i = 0; i < l->classes[c].components.size(); ++i) {
        w.push_back(l->prior[c] * l->classes[c].weights[i]);
        comps.push_back(l->classes[c].components[i]);
      }
    }
    // renormalize to absorb roundoff so the simplex check stays tight
    double s = 0.0;
    for (double v : w) s += v;
    for (double& v : w) v /= s;
    return GaussianMixture(std::move(w), std::move(comps));
  }
  throw std::invalid_argument("as_mixture: spec has no Gaussian mixture form");
}

GaussianMixture pooled_mixture(const DistributionSpec& p, const DistributionSpec& q) {
  GaussianMixture mp = as_mixture(p);
  GaussianMixture mq = as_mixture(q);
  Vec w;
  std::vector<Gaussian> comps;
  for (std::size_t i = 0; i < mp.components.size(); ++i) {
    w.push_back(0.5 * mp.weights[i]);
    comps.push_back(mp.components[i]);
  }
  for (std::size_t i = 0; i < mq.components.size(); ++i) {
    w.push_back(0.5 * mq.weights[i]);
    comps.push_back(mq.components[i]);
  }
  double s = 0.0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
  return GaussianMixture(std::move(w), std::move(comps));
}

double density(const DistributionSpec& spec, const double* x) {
  if (const auto* g = std::get_if<Gaussian>(&spec)) return g->density(x);
  if (const auto* m = std::get_if<GaussianMixture>(&spec)) return m->density(x);
  if (const auto* u = std::get_if<UniformBox>(&spec)) return u->density(x);
  return as_mixture(spec).density(x);  // Ring, LabeledMixture
}

double density(const DistributionSpec& spec, const Vec& x) { return density(spec, x.data()); }

namespace {

// Row sampler over a resolved spec; one call per row, sequential within a block.
struct RowSampler {
  const DistributionSpec* spec;
  const GaussianMixture* mix = nullptr;  // set when spec samples via mixture

  void operator()(Rng& rng, double* out, int* label) const {
    if (const auto* g = std::get_if<Gaussian>(spec)) {
      sample_gaussian_row(*g, rng, out);
      return;
    }
    if (const auto* u = std::get_if<UniformBox>(spec)) {
      for (std::size_t i = 0; i < u->lo.size(); ++i) out[i] = rng.uniform(u->lo[i], u->hi[i]);
      return;
    }
    if (const auto* l = std::get_if<LabeledMixture>(spec)) {
      const std::size_t c = pick_component(l->prior, rng.uniform());
      if (label) *label = static_cast<int>(c);
      const auto& cls = l->classes[c];
      const std::size_t i = pick_component(cls.weights, rng.uniform());
      sample_gaussian_row(cls.components[i], rng, out);
      return;
    }
    const std::size_t i = pick_component(mix->weights, rng.uniform());
    sample_gaussian_row(mix->components[i], rng, out);
  }
};

Matrix sample_impl(const DistributionSpec& spec, std::size_t n, uint64_t seed, Exec exec,
                   std::vector<int>* labels) {
  const std::size_t d = dim(spec);
  Matrix out(n, d);
  GaussianMixture mix_storage({1.0}, {Gaussian(Vec(1, 0.0), Matrix(1, 1, 1.0))});
  RowSampler sampler{&spec, nullptr};
  if (std::holds_alternative<GaussianMixture>(spec) || std::holds_alternative<Ring>(spec)) {
    mix_storage = as_mixture(spec);
    sampler.mix = &mix_storage;
  }
  const Rng master(seed);
  par::for_blocks(n, kSampleBlock, exec, [&](std::size_t b, std::size_t begin, std::size_t end) {
    Rng rng = master.split(b);
    for (std::size_t r = begin; r < end; ++r)
      sampler(rng, out.row(r), labels ? labels->data() + r : nullptr);
  });
  return out;
}

}  // namespace

Matrix sample(const DistributionSpec& spec, std::size_t n, uint64_t seed, Exec exec) {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  return sample_impl(spec, n, seed, exec, nullptr);
}

SpecSampler::SpecSampler(const DistributionSpec& spec) : spec_(&spec), dim_(fisheripm::dim(spec)) {
  if (std::holds_alternative<GaussianMixture>(spec) || std::holds_alternative<Ring>(spec))
    mix_ = std::make_unique<GaussianMixture>(as_mixture(spec));
}

void SpecSampler::row(Rng& rng, double* out) const {
  RowSampler sampler{spec_, mix_.get()};
  sampler(rng, out, nullptr);
}

LabeledSample sample_labeled(const LabeledMixture& spec, std::size_t n, uint64_t seed, Exec exec) {
  if (n < 1) throw std::invalid_argument("sample_labeled: n must be >= 1");
  LabeledSample out;
  out.labels.assign(n, 0);
  DistributionSpec s = spec;
  out.x = sample_impl(s, n, seed, exec, &out.labels);
  return out;
}

Vec analytic_mean(const DistributionSpec& spec) {
  if (const auto* g = std::get_if<Gaussian>(&spec)) return g->mean;
  if (const auto* u = std::get_if<UniformBox>(&spec)) {
    Vec m(u->lo.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (u->lo[i] + u->hi[i]);
    return m;
  }
  const GaussianMixture mix = as_mixture(spec);
  Vec m(mix.dim(), 0.0);
  for (std::size_t i = 0; i < mix.components.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j)
      m[j] += mix.weights[i] * mix.components[i].mean[j];
  return m;
}

Matrix analytic_cov(const DistributionSpec& spec) {
  if (const auto* g = std::get_if<Gaussian>(&spec)) return g->cov;
  if (const auto* u = std::get_if<UniformBox>(&spec)) {
    const std::size_t d = u->lo.size();
    Matrix c(d, d);
    for (std::size_t i = 0; i < d; ++i) {
      const double w = u->hi[i] - u->lo[i];
      c(i, i) = w * w / 12.0;
    }
    return c;
  }
  const GaussianMixture mix = as_mixture(spec);
  const std::size_t d = mix.dim();
  const Vec m = analytic_mean(spec);
  Matrix c(d, d);
  for (std::size_t i = 0; i < mix.components.size(); ++i) {
    const auto& comp = mix.components[i];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        c(a, b) += mix.weights[i] * (comp.cov(a, b) + comp.mean[a] * comp.mean[b]);
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) c(a, b) -= m[a] * m[b];
  return c;
}

void support_box(const DistributionSpec& spec, Vec& lo, Vec& hi) {
  const std::size_t d = dim(spec);
  lo.assign(d, std::numeric_limits<double>::infinity());
  hi.assign(d, -std::numeric_limits<double>::infinity());
  if (const auto* u = std::get_if<UniformBox>(&spec)) {
    lo = u->lo;
    hi = u->hi;
    return;
  }
  const GaussianMixture mix = as_mixture(spec);
  for (const auto& comp : mix.components) {
    for (std::size_t i = 0; i < d; ++i) {
      const double sd = std::sqrt(comp.cov(i, i));
      lo[i] = std::min(lo[i], comp.mean[i] - 8.0 * sd);
      hi[i] = std::max(hi[i], comp.mean[i] + 8.0 * sd);
    }
  }
}

namespace {

nlohmann::json gaussian_to_json(const Gaussian& g) {
  nlohmann::json cov = nlohmann::json::array();
  for (std::size_t i = 0; i < g.cov.rows; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < g.cov.cols; ++j) row.push_back(g.cov(i, j));
    cov.push_back(row);
  }
  return {{"mean", g.mean}, {"cov", cov}};
}

Gaussian gaussian_from_json(const nlohmann::json& j) {
  Vec mean = j.at("mean").get<Vec>();
  const auto& cov_rows = j.at("cov");
  Matrix cov(cov_rows.size(), cov_rows.empty() ? 0 : cov_rows[0].size());
  for (std::size_t i = 0; i < cov.rows; ++i)
    for (std::size_t k = 0; k < cov.cols; ++k) cov(i, k) = cov_rows[i][k].get<double>();
  return Gaussian(std::move(mean), std::move(cov));
}

nlohmann::json mixture_to_json(const GaussianMixture& m) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : m.components) comps.push_back(gaussian_to_json(c));
  return {{"weights", m.weights}, {"components", comps}};
}

GaussianMixture mixture_from_json(const nlohmann::json& j) {
  std::vector<Gaussian> comps;
  for (const auto& c : j.at("components")) comps.push_back(gaussian_from_json(c));
  return GaussianMixture(j.at("weights").get<Vec>(), std::move(comps));
}

}  // namespace

nlohmann::json spec_to_json(const DistributionSpec& spec) {
  nlohmann::json j;
  if (const auto* g = std::get_if<Gaussian>(&spec)) {
    j = gaussian_to_json(*g);
    j["variant"] = "gaussian";
  } else if (const auto* m = std::get_if<GaussianMixture>(&spec)) {
    j = mixture_to_json(*m);
    j["variant"] = "gaussian_mixture";
  } else if (const auto* r = std::get_if<Ring>(&spec)) {
    j = {{"variant", "ring"}, {"k", r->k}, {"radius", r->radius}, {"sigma", r->sigma}};
  } else if (const auto* u = std::get_if<UniformBox>(&spec)) {
    j = {{"variant", "uniform_box"}, {"lo", u->lo}, {"hi", u->hi}};
  } else if (const auto* l = std::get_if<LabeledMixture>(&spec)) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : l->classes) classes.push_back(mixture_to_json(c));
    j = {{"variant", "labeled_mixture"}, {"classes", classes}, {"prior", l->prior}};
  }
  return j;
}

DistributionSpec spec_from_json(const nlohmann::json& j) {
  const std::string variant = j.at("variant").get<std::string>();
  if (variant == "gaussian") return gaussian_from_json(j);
  if (variant == "gaussian_mixture") return mixture_from_json(j);
  if (variant == "ring")
    return Ring(j.at("k").get<int>(), j.at("radius").get<double>(), j.at("sigma").get<double>());
  if (variant == "uniform_box") return UniformBox(j.at("lo").get<Vec>(), j.at("hi").get<Vec>());
  if (variant == "labeled_mixture") {
    std::vector<GaussianMixture> classes;
    for (const auto& c : j.at("classes")) classes.push_back(mixture_from_json(c));
    return LabeledMixture(std::move(classes), j.at("prior").get<Vec>());
  }
  throw std::invalid_argument("spec_from_json: unknown variant '" + variant + "'");
}

}  // namespace fisheripm
