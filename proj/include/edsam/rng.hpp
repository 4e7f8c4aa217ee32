#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "edsam/tensor.hpp"

namespace edsam {

// Counter-based generator: draw k is a pure function of (key, k), so streams
// are reproducible across platforms and cheap to split per sample.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller; the paired draw is cached.
  double normal();

  // Independent child stream keyed by the parent seed and `path`.
  SeededRng child(std::initializer_list<std::uint64_t> path) const;

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

std::uint64_t mix64(std::uint64_t x);

// I.i.d. N(mean, std^2) draws of the given shape. `mean` has either one
// element (broadcast) or exactly shape_product(shape) elements.
Tensor gaussian_sample(SeededRng& rng, const Tensor& mean, double std,
                       std::vector<std::size_t> shape);

// Hashes a seed together with a path of indices into a new seed.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

}  // namespace edsam
