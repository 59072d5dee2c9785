#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace dro {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
[[nodiscard]] constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic seed for a sub-stream identified by a path of indices,
// e.g. derive_seed(master, {epoch, batch, row}).
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t master,
                                                  std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t s = mix_seed(master);
  for (auto p : path) s = mix_seed(s ^ mix_seed(p + 0x632be59bd9b4e019ULL));
  return s;
}

// Gaussian direction normalized to unit L2 length.
std::vector<double> random_unit_vector(std::size_t dim, Rng& rng);

} // namespace dro
