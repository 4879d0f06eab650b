#include "fisheripm/parallel.hpp"

#include <omp.h>

#include <atomic>

namespace fisheripm {

namespace {
std::atomic<Exec> g_exec{Exec::OpenMP};
}

Exec default_exec() { return g_exec.load(); }
void set_default_exec(Exec e) { g_exec.store(e); }

namespace par {

std::size_t block_count(std::size_t n, std::size_t block) {
  return n == 0 ? 0 : (n + block - 1) / block;
}

void for_blocks(std::size_t n, std::size_t block, Exec exec,
                const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
  const std::size_t nb = block_count(n, block);
  if (exec == Exec::OpenMP && nb > 1) {
#pragma omp parallel for schedule(static)
    for (long long b = 0; b < static_cast<long long>(nb); ++b) {
      const std::size_t begin = static_cast<std::size_t>(b) * block;
      const std::size_t end = begin + block < n ? begin + block : n;
      body(static_cast<std::size_t>(b), begin, end);
    }
  } else {
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t begin = b * block;
      const std::size_t end = begin + block < n ? begin + block : n;
      body(b, begin, end);
    }
  }
}

double pairwise_combine(std::vector<double>& partials) {
  std::size_t m = partials.size();
  if (m == 0) return 0.0;
  while (m > 1) {
    const std::size_t half = m / 2;
    for (std::size_t i = 0; i < half; ++i) partials[i] = partials[2 * i] + partials[2 * i + 1];
    if (m & 1) {
      partials[half] = partials[m - 1];
      m = half + 1;
    } else {
      m = half;
    }
  }
  return partials[0];
}

void pairwise_combine_vec(std::vector<std::vector<double>>& partials,
                          std::vector<double>& out) {
  std::size_t m = partials.size();
  if (m == 0) return;
  const std::size_t len = partials[0].size();
  while (m > 1) {
    const std::size_t half = m / 2;
    // Slot i was already consumed earlier in this pass (as slot 2j or 2j+1
    // with j < i), so merging pair (2i, 2i+1) into slot i is safe.
    for (std::size_t i = 0; i < half; ++i) {
      auto& lhs = partials[2 * i];
      const auto& rhs = partials[2 * i + 1];
      for (std::size_t k = 0; k < len; ++k) lhs[k] += rhs[k];
      if (i != 2 * i) partials[i].swap(partials[2 * i]);
    }
    if (m & 1) {
      partials[half].swap(partials[m - 1]);
      m = half + 1;
    } else {
      m = half;
    }
  }
  out = std::move(partials[0]);
}

double map_sum(std::size_t n, Exec exec, const std::function<double(std::size_t)>& f) {
  const std::size_t nb = block_count(n, kFlatBlock);
  std::vector<double> partials(nb, 0.0);
  for_blocks(n, kFlatBlock, exec, [&](std::size_t b, std::size_t begin, std::size_t end) {
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) acc += f(i);
    partials[b] = acc;
  });
  return pairwise_combine(partials);
}

double naive_sum(std::span<const double> xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc;
}

}  // namespace par
}  // namespace fisheripm
