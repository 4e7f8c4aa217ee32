#include "edsam/rng.hpp"

#include <cmath>
#include <numbers>

#include "edsam/error.hpp"

namespace edsam {

namespace {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(seed ^ 0x6A09E667F3BCC909ULL);
  for (auto p : path) {
    h = mix64(h + kGamma + mix64(p + 0x3C6EF372FE94F82BULL));
  }
  return h;
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), key_(mix64(seed + kGamma)) {}

std::uint64_t SeededRng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGamma);
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t SeededRng::below(std::uint64_t n) {
  if (n == 0) throw InvalidInput("SeededRng::below requires n > 0");
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double SeededRng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_normal_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

Tensor gaussian_sample(SeededRng& rng, const Tensor& mean, double std,
                       std::vector<std::size_t> shape) {
  if (!(std >= 0.0) || !std::isfinite(std)) throw InvalidInput("gaussian_sample: std must be >= 0");
  Tensor out(std::move(shape));
  if (mean.size() != 1 && mean.size() != out.size()) {
    throw InvalidInput("gaussian_sample: mean must be scalar or match the requested shape");
  }
  require_finite(mean, "gaussian_sample mean");
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mu = mean.size() == 1 ? mean[0] : mean[i];
    // Always consume a draw so the stream position does not depend on std.
    const double z = rng.normal();
    out[i] = std == 0.0 ? mu : mu + std * z;
  }
  return out;
}

SeededRng SeededRng::child(std::initializer_list<std::uint64_t> path) const {
  return SeededRng(derive_seed(seed_, path));
}

}  // namespace edsam
