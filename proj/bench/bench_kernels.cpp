// Serial reference vs OpenMP kernels: same blocked algorithms, same pairwise
// reductions, so outputs must match bit for bit while only wall time differs.

#include <omp.h>

#include <chrono>
#include <cstdio>

#include "fisheripm/distributions.hpp"
#include "fisheripm/mlp.hpp"
#include "fisheripm/oracle.hpp"
#include "fisheripm/train.hpp"

using namespace fisheripm;

namespace {

template <typename F>
double time_ms(F&& fn, int reps) {
  // one warmup
  fn();
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double omp_ms, bool identical) {
  std::printf("%-28s serial %9.2f ms   openmp %9.2f ms   speedup %5.2fx   bitwise %s\n", name,
              serial_ms, omp_ms, serial_ms / omp_ms, identical ? "equal" : "DIFFER");
}

}  // namespace

int main() {
  std::printf("threads available: %d\n\n", omp_get_max_threads());

  {  // flat pairwise reduction
    const std::size_t n = 1 << 24;
    Vec xs(n);
    Rng rng(7);
    for (auto& v : xs) v = rng.uniform(-1.0, 1.0);
    double s_serial = 0, s_omp = 0;
    const auto serial = [&] {
      s_serial = par::map_sum(n, Exec::Serial, [&](std::size_t i) { return xs[i]; });
    };
    const auto parallel = [&] {
      s_omp = par::map_sum(n, Exec::OpenMP, [&](std::size_t i) { return xs[i]; });
    };
    const double t_s = time_ms(serial, 3);
    const double t_p = time_ms(parallel, 3);
    report("pairwise reduction (16M)", t_s, t_p, s_serial == s_omp);
  }

  {  // chi2 quadrature grid, d = 2
    Matrix cov(2, 2);
    cov(0, 0) = cov(1, 1) = 1.0;
    const DistributionSpec pa = Gaussian({0.0, 0.0}, cov);
    const DistributionSpec pb = Gaussian({2.0, 0.0}, cov);
    QuadratureConfig quad;
    quad.points_per_axis = 512;
    double v_serial = 0, v_omp = 0;
    const double t_s =
        time_ms([&] { v_serial = chi2_distance(pa, pb, quad, Exec::Serial).value; }, 2);
    const double t_p =
        time_ms([&] { v_omp = chi2_distance(pa, pb, quad, Exec::OpenMP).value; }, 2);
    report("chi2 quadrature 1024^2", t_s, t_p, v_serial == v_omp);
  }

  {  // batch MLP forward+backward
    MlpSpec spec;
    spec.layer_sizes = {2, 64, 64, 64, 1};
    const Params params = init_params(spec, 11, 0.02);
    Rng rng(13);
    const Matrix x = standard_normal(4096, 2, rng);
    Matrix d_out(4096, 1, 1.0 / 4096.0);
    Gradient g_serial(params.x.size(), 0.0), g_omp(params.x.size(), 0.0);
    const auto run = [&](Exec exec, Gradient& g) {
      std::fill(g.begin(), g.end(), 0.0);
      const ForwardTrace t = forward_trace(params, x, exec);
      backward(params, t, d_out, &g, nullptr, exec);
    };
    const double t_s = time_ms([&] { run(Exec::Serial, g_serial); }, 3);
    const double t_p = time_ms([&] { run(Exec::OpenMP, g_omp); }, 3);
    report("mlp fwd+bwd 4096x[2,64^3,1]", t_s, t_p, g_serial == g_omp);
  }

  {  // mixture sampling
    const DistributionSpec ring = Ring(8, 2.0, 0.1);
    Matrix s_serial, s_omp;
    const double t_s = time_ms([&] { s_serial = sample(ring, 1 << 20, 42, Exec::Serial); }, 2);
    const double t_p = time_ms([&] { s_omp = sample(ring, 1 << 20, 42, Exec::OpenMP); }, 2);
    report("ring sampling (1M rows)", t_s, t_p, s_serial.a == s_omp.a);
  }

  return 0;
}
