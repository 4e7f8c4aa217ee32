#include "edsam/advgen.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>

#include "edsam/error.hpp"
#include "edsam/transport.hpp"

namespace edsam {

namespace {

constexpr std::size_t kSourceBlock = 32;

// Generates entries for sources [s0, s1). Rows inside a block are batched
// through the denoiser; row results do not depend on batch composition.
std::vector<AdvEntry> generate_block(const Dataset& ds, const Denoiser& den, const DiffusionSchedule& sch,
                                     const GenConfig& cfg, std::size_t s0, std::size_t s1,
                                     std::vector<std::string>& diagnostics) {
  const std::size_t d = ds.dim();
  const std::size_t rows = s1 - s0;
  SamplerConfig sampler;
  sampler.steps = cfg.ddim_steps;
  sampler.spacing = cfg.spacing;
  Tensor x = Tensor::matrix(rows, d);
  std::vector<int> conds(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& s = ds.samples[s0 + r];
    std::copy(s.image.data().begin(), s.image.data().end(), x.row(r).begin());
    conds[r] = s.prompt;
  }
  Tensor z;
  if (cfg.transform == TransformKind::transport) z = ddim_invert(den, sch, x, conds, sampler);

  std::vector<bool> ok(rows, true);
  if (cfg.transform == TransformKind::transport) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (double v : z.row(r)) {
        if (!std::isfinite(v)) ok[r] = false;
      }
      if (!ok[r]) diagnostics.push_back("source " + std::to_string(s0 + r) + ": inversion produced non-finite latent; skipped");
    }
  }

  // All M variants of the block go through the sampler together.
  std::vector<std::size_t> live;
  for (std::size_t r = 0; r < rows; ++r) {
    if (ok[r]) live.push_back(r);
  }
  const std::size_t total = live.size() * cfg.M;
  Tensor zstar = Tensor::matrix(total, d);
  std::vector<int> zconds(total);
  std::vector<AdvEntry> entries(total);
  for (std::size_t li = 0; li < live.size(); ++li) {
    const std::size_t r = live[li];
    const std::size_t src = s0 + r;
    for (std::size_t m = 0; m < cfg.M; ++m) {
      SeededRng rng(derive_seed(cfg.seed, {src, m}));
      const std::size_t row = li * cfg.M + m;
      Tensor out;
      TransportRecord rec{0.0, cfg.rho, src};
      if (cfg.transform == TransformKind::transport) {
        auto res = apply_transport(Tensor({d}, std::vector<double>(z.row(r).begin(), z.row(r).end())), cfg.rho,
                                   rng, src);
        out = std::move(res.z_star);
        rec = res.record;
      } else {
        out = random_transform(cfg.rho, d, rng);
        rec.alpha = cfg.rho;
      }
      std::copy(out.data().begin(), out.data().end(), zstar.row(row).begin());
      zconds[row] = conds[r];
      entries[row].source = static_cast<std::uint32_t>(src);
      entries[row].variant = static_cast<std::uint16_t>(m);
      entries[row].prompt = conds[r];
      entries[row].record = rec;
    }
  }
  if (total == 0) return {};
  const Tensor xs = ddim_sample(den, sch, zstar, zconds, sampler);
  for (std::size_t row = 0; row < total; ++row) {
    Tensor img({d});
    for (std::size_t k = 0; k < d; ++k) img[k] = std::clamp(xs.at(row, k), 0.0, 1.0);
    entries[row].image = std::move(img);
  }
  return entries;
}

void check_inputs(const Dataset& ds, const Denoiser& den, const GenConfig& cfg, AdvDataset& adv) {
  cfg.validate();
  if (cfg.transform == TransformKind::ada) {
    throw InvalidInput("generate_adversarial: the ada transform needs a contrastive model; use ada_adversarial_set");
  }
  if (ds.samples.empty()) throw InvalidInput("generate_adversarial: empty dataset");
  if (ds.dim() != den.data_dim) throw InvalidInput("generate_adversarial: dataset dim != denoiser dim");
  if (ds.num_classes > den.num_conditions) {
    throw InvalidInput("generate_adversarial: dataset has more prompts than the denoiser conditions on");
  }
  if (!den.trained()) adv.diagnostics.push_back("warning: denoiser has no loss trace (untrained?)");
  adv.config = cfg;
  adv.dim = ds.dim();
}

void report_skips(AdvDataset& adv, std::size_t sources) {
  const std::size_t expected = sources * adv.config.M;
  if (adv.entries.size() != expected) {
    adv.diagnostics.push_back("generated " + std::to_string(adv.entries.size()) + " of " +
                              std::to_string(expected) + " entries");
  }
}

}  // namespace

AdvDataset generate_adversarial_serial(const Dataset& dataset, const Denoiser& denoiser,
                                       const DiffusionSchedule& schedule, const GenConfig& config) {
  AdvDataset adv;
  check_inputs(dataset, denoiser, config, adv);
  const std::size_t n = dataset.samples.size();
  for (std::size_t s0 = 0; s0 < n; s0 += kSourceBlock) {
    auto e = generate_block(dataset, denoiser, schedule, config, s0, std::min(n, s0 + kSourceBlock), adv.diagnostics);
    adv.entries.insert(adv.entries.end(), std::make_move_iterator(e.begin()), std::make_move_iterator(e.end()));
  }
  report_skips(adv, n);
  return adv;
}

AdvDataset generate_adversarial(const Dataset& dataset, const Denoiser& denoiser,
                                const DiffusionSchedule& schedule, const GenConfig& config) {
  AdvDataset adv;
  check_inputs(dataset, denoiser, config, adv);
  const std::size_t n = dataset.samples.size();
  const std::size_t blocks = (n + kSourceBlock - 1) / kSourceBlock;
  std::vector<std::vector<AdvEntry>> parts(blocks);
  std::vector<std::vector<std::string>> diags(blocks);
  const auto nb = static_cast<long long>(blocks);
  // Exceptions may not cross the parallel region; the first block error is
  // rethrown after it.
  std::vector<std::exception_ptr> errors(blocks);
#pragma omp parallel for schedule(dynamic, 1)
  for (long long b = 0; b < nb; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    const std::size_t s0 = bi * kSourceBlock;
    try {
      parts[bi] = generate_block(dataset, denoiser, schedule, config, s0, std::min(n, s0 + kSourceBlock), diags[bi]);
    } catch (...) {
      errors[bi] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (std::size_t b = 0; b < blocks; ++b) {
    adv.entries.insert(adv.entries.end(), std::make_move_iterator(parts[b].begin()),
                       std::make_move_iterator(parts[b].end()));
    adv.diagnostics.insert(adv.diagnostics.end(), diags[b].begin(), diags[b].end());
  }
  report_skips(adv, n);
  return adv;
}

void AdaConfig::validate() const {
  if (!(lambda >= 0.0)) throw InvalidInput("AdaConfig: lambda must be >= 0");
  if (!(step_size >= 0.0)) throw InvalidInput("AdaConfig: step_size must be >= 0");
}

Tensor ada_perturb(const ContrastiveModel& model, const ClipBatch& batch, const AdaConfig& config) {
  config.validate();
  ClipBatch cur = batch;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto res = clip_loss(model, cur);
    // Explicit step on the loss, implicit (proximal) step on the penalty:
    // x' = argmax eta g.x - eta lambda |x - x_s|^2 - |x - x_k|^2 / 2. The
    // explicit penalty step diverges once 2 lambda eta > 2.
    const double shrink = 1.0 / (1.0 + 2.0 * config.step_size * config.lambda);
    const double pull = 2.0 * config.step_size * config.lambda;
    for (std::size_t k = 0; k < cur.images.size(); ++k) {
      const double ascent = cur.images[k] + config.step_size * res.grads.images[k];
      cur.images[k] = std::clamp((ascent + pull * batch.images[k]) * shrink, 0.0, 1.0);
    }
  }
  return cur.images;
}

AdvDataset ada_adversarial_set(const ContrastiveModel& model, const Dataset& dataset, const AdaConfig& config,
                               std::size_t batch_size, std::uint64_t seed) {
  AdvDataset adv;
  adv.config = GenConfig{1, 0.0, 1, seed, TransformKind::ada};
  adv.dim = dataset.dim();
  const std::size_t n = dataset.samples.size();
  adv.entries.resize(n);
  SeededRng rng(derive_seed(seed, {0xADAULL}));
  for (const auto& idx : epoch_batches(dataset, batch_size, rng)) {
    const auto batch = make_batch(dataset, idx);
    const Tensor pert = ada_perturb(model, batch, config);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto& e = adv.entries[idx[r]];
      e.source = static_cast<std::uint32_t>(idx[r]);
      e.variant = 0;
      e.prompt = batch.prompts[r];
      e.record = TransportRecord{0.0, 0.0, idx[r]};
      e.image = Tensor({adv.dim}, std::vector<double>(pert.row(r).begin(), pert.row(r).end()));
    }
  }
  // Sources left out of the last partial batch keep their original image.
  for (std::size_t i = 0; i < n; ++i) {
    auto& e = adv.entries[i];
    if (e.image.empty()) {
      e = AdvEntry{static_cast<std::uint32_t>(i), 0, dataset.samples[i].prompt, TransportRecord{0.0, 0.0, i},
                   dataset.samples[i].image};
    }
  }
  return adv;
}

}  // namespace edsam
