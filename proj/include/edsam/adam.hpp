#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace edsam {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(std::size_t n, AdamConfig cfg) : config(cfg), m(n, 0.0), v(n, 0.0) {}
};

// Bias-corrected Adam update. Rejects non-finite gradients before touching
// any state.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

}  // namespace edsam
