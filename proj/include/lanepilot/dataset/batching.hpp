#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lanepilot/common/error.hpp"
#include "lanepilot/common/rng.hpp"

namespace lanepilot::dataset {

// Index batches for one epoch. The permutation depends only on (seed, epoch);
// every index in [0, n) appears exactly once and the last batch may be short.
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                        std::size_t epoch, std::uint64_t seed) {
  if (n == 0) throw ConfigError("batch_iter: empty training set");
  if (batch_size == 0) throw ConfigError("batch_iter: batch size must be positive");
  const auto order = permutation(n, mix_seed(seed, epoch));
  std::vector<std::vector<std::size_t>> batches;
  batches.reserve((n + batch_size - 1) / batch_size);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace lanepilot::dataset
