#pragma once

#include <cstdint>

#include "edsam/advdataset.hpp"
#include "edsam/contrastive.hpp"
#include "edsam/datagen.hpp"
#include "edsam/diffusion.hpp"

namespace edsam {

// For every source: z_s = ddim_invert(x_s, p_s); then for each of M variants
// z* = T(z_s, rho) (or z* ~ N(rho, I) for the random ablation) and
// x* = clamp(ddim_sample(z*, p_s), 0, 1). Variant (s, m) draws from its own
// stream derived from (seed, s, m), so the output does not depend on how the
// sources are scheduled. Sources are processed in parallel blocks.
AdvDataset generate_adversarial(const Dataset& dataset, const Denoiser& denoiser,
                                const DiffusionSchedule& schedule, const GenConfig& config);
// Single-threaded reference; bit-identical to generate_adversarial.
AdvDataset generate_adversarial_serial(const Dataset& dataset, const Denoiser& denoiser,
                                       const DiffusionSchedule& schedule, const GenConfig& config);

struct AdaConfig {
  double lambda = 1.0;
  std::size_t steps = 5;
  double step_size = 1.0;

  void validate() const;
  friend bool operator==(const AdaConfig&, const AdaConfig&) = default;
};

// Gradient ascent on L_CLIP(x, p) - lambda |x - x_s|^2 from x = x_s with a
// fixed step, clamping to [0, 1] after every step. The penalty enters as a
// proximal step so that large lambda stays stable.
Tensor ada_perturb(const ContrastiveModel& model, const ClipBatch& batch, const AdaConfig& config);

// ADA-style adversarial set: one perturbed copy of every source image (M = 1).
AdvDataset ada_adversarial_set(const ContrastiveModel& model, const Dataset& dataset,
                               const AdaConfig& config, std::size_t batch_size, std::uint64_t seed);

}  // namespace edsam
