#pragma once

#include <cstdint>
#include <random>

namespace mlest {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer applied to (master, stream). Used everywhere a
/// caller needs an independent stream per sample, replicate or model, so
/// parallel execution stays deterministic regardless of scheduling.
std::uint64_t split_seed(std::uint64_t master, std::uint64_t stream);

inline Rng make_rng(std::uint64_t master, std::uint64_t stream) {
  return Rng(split_seed(master, stream));
}

}  // namespace mlest
