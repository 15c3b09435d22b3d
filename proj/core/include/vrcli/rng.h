#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

#include "vrcli/text.h"

namespace vrcli {

// Seeded generator with platform-independent range mapping. The standard
// distributions are implementation-defined, which would make artifacts differ
// between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound), rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Independent child stream, e.g. one per pipeline stage or per rollout sample.
  Rng derive(std::string_view label) const { return Rng(derive_seed(seed_material(), label)); }

  static std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
    return fnv1a64(label, root ^ 0x9e3779b97f4a7c15ULL);
  }

 private:
  std::uint64_t seed_material() const {
    std::mt19937_64 copy = engine_;
    return copy();
  }

  std::mt19937_64 engine_;
};

}  // namespace vrcli
