#pragma once

// Expensive shared objects, built once per test process.

#include <cstddef>
#include <span>
#include <vector>

#include "edsam/datagen.hpp"
#include "edsam/diffusion.hpp"

namespace fixture {

struct ToyDiffusion {
  edsam::Dataset data;
  edsam::DiffusionSchedule schedule;
  edsam::Denoiser model;
};

// Default-domain image dataset with a denoiser trained at default settings.
inline const ToyDiffusion& toy_diffusion() {
  static const ToyDiffusion toy = [] {
    ToyDiffusion t;
    t.data = edsam::gen_dataset(edsam::DomainSpec{}, 400, 11);
    t.schedule = edsam::default_schedule();
    edsam::DenoiserTrainConfig cfg;
    cfg.seed = 11;
    t.model = edsam::train_denoiser(t.data, t.schedule, cfg);
    return t;
  }();
  return toy;
}

// Nearest-class-mean classifier fitted on a dataset.
struct NearestMean {
  std::vector<std::vector<double>> means;

  explicit NearestMean(const edsam::Dataset& ds) {
    const std::size_t d = ds.dim();
    means.assign(static_cast<std::size_t>(ds.num_classes), std::vector<double>(d, 0.0));
    std::vector<double> counts(means.size(), 0.0);
    for (const auto& s : ds.samples) {
      auto& m = means[static_cast<std::size_t>(s.prompt)];
      for (std::size_t k = 0; k < d; ++k) m[k] += s.image[k];
      counts[static_cast<std::size_t>(s.prompt)] += 1.0;
    }
    for (std::size_t c = 0; c < means.size(); ++c) {
      for (double& v : means[c]) v /= counts[c];
    }
  }

  int predict(std::span<const double> x) const {
    int best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < means.size(); ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - means[c][k]) * (x[k] - means[c][k]);
      if (s < best_d) {
        best_d = s;
        best = static_cast<int>(c);
      }
    }
    return best;
  }
};

}  // namespace fixture
