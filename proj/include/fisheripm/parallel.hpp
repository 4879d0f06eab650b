#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace fisheripm {

// Execution policy for the data-parallel kernels. Serial runs the exact
// same blocked algorithm sequentially, so both policies are bit-identical;
// the OpenMP path only changes who executes each block.
enum class Exec { Serial, OpenMP };

Exec default_exec();
void set_default_exec(Exec e);

namespace par {

inline constexpr std::size_t kFlatBlock = 1 << 14;  // elements per reduction block
inline constexpr std::size_t kRowBlock = 64;        // batch rows per block

std::size_t block_count(std::size_t n, std::size_t block);

// Runs body(block_index, begin, end) over fixed-size blocks of [0, n).
// Block geometry depends only on (n, block), never on the thread count.
void for_blocks(std::size_t n, std::size_t block, Exec exec,
                const std::function<void(std::size_t, std::size_t, std::size_t)>& body);

// Fixed-shape pairwise combine of per-block partials: adjacent pairs are
// merged left to right until one remains. The shape depends only on the
// number of partials, making the reduction order independent of threads.
double pairwise_combine(std::vector<double>& partials);

// Combines vector-valued partials (each of length m) in place into out.
void pairwise_combine_vec(std::vector<std::vector<double>>& partials,
                          std::vector<double>& out);

// Deterministic sum of f(i) for i in [0, n): serial in-block accumulation,
// pairwise tree across blocks.
double map_sum(std::size_t n, Exec exec, const std::function<double(std::size_t)>& f);

// Plain left-to-right sum; accuracy reference for tests and small totals.
double naive_sum(std::span<const double> xs);

}  // namespace par
}  // namespace fisheripm
