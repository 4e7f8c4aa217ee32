#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "edsam/datagen.hpp"
#include "edsam/mlp.hpp"
#include "edsam/rng.hpp"
#include "edsam/tensor.hpp"

namespace edsam {

// Linear beta schedule. Steps are 1-based; alpha_bar(0) == 1.
class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;

  int T() const { return static_cast<int>(betas_.size()); }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }
  double beta(int i) const;
  double alpha(int i) const { return 1.0 - beta(i); }
  double alpha_bar(int i) const;

  friend DiffusionSchedule make_schedule(int T, double beta_start, double beta_end);

 private:
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

DiffusionSchedule make_schedule(int T, double beta_start, double beta_end);
inline DiffusionSchedule default_schedule() { return make_schedule(1000, 1e-4, 0.02); }

// sqrt(abar_i) x0 + sqrt(1 - abar_i) eps
Tensor q_sample(const DiffusionSchedule& schedule, const Tensor& x0, int i, const Tensor& eps);

inline constexpr std::size_t kTimeEmbedWidth = 16;
inline constexpr std::size_t kCondEmbedWidth = 8;

void time_embedding(int step, std::span<double> out);

// eps_theta(x_i, i, p): an MLP over [x_i | time features | condition row].
// The condition table has one row per prompt plus a trailing null row.
struct Denoiser {
  MlpParams mlp;
  Tensor cond_table;  // [(num_conditions + 1) x kCondEmbedWidth]
  std::size_t data_dim = 0;
  int num_conditions = 0;
  // The network works on (x - data_offset) * data_scale.
  double data_offset = 0.0;
  double data_scale = 1.0;
  // When set, the predicted noise is the network output plus
  // sqrt(1 - alpha_bar) * x; clear it to get the bare network.
  bool noise_skip = true;
  std::vector<double> loss_trace;

  int null_condition() const { return num_conditions; }
  double to_model(double x) const { return (x - data_offset) * data_scale; }
  double to_data(double y) const { return y / data_scale + data_offset; }
  bool trained() const { return !loss_trace.empty(); }
};

Denoiser make_denoiser(std::size_t data_dim, int num_conditions, std::vector<std::size_t> hidden,
                       Activation act, SeededRng& rng);

// Builds the network input rows for a batch.
Tensor denoiser_input(const Denoiser& model, const Tensor& x, std::span<const int> steps,
                      std::span<const int> conds);
// Batched noise prediction; x is [n x data_dim]. cond -1 means the null row.
// With model.noise_skip the result is the network output plus
// sqrt(1 - alpha_bar) * x.
Tensor predict_noise(const Denoiser& model, const DiffusionSchedule& schedule, const Tensor& x,
                     std::span<const int> steps, std::span<const int> conds);

struct DenoiserBatch {
  Tensor x0;               // [n x d]
  Tensor eps;              // [n x d]
  std::vector<int> steps;  // each in [1, T]
  std::vector<int> conds;  // prompt id or -1 for null
};

struct DenoiserLoss {
  double loss = 0.0;
  MlpParams grad_mlp;
  Tensor grad_cond_table;
};

// Mean over batch and coordinates of (eps - eps_theta(x_i, i, p))^2, with
// exact gradients for the network and the condition table.
DenoiserLoss denoiser_loss(const Denoiser& model, const DiffusionSchedule& schedule,
                           const DenoiserBatch& batch);

struct DenoiserTrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 128;
  double learning_rate = 2e-3;
  double p_uncond = 0.1;
  std::vector<std::size_t> hidden = {128, 128};
  Activation activation = Activation::gelu;
  double data_offset = 0.5;
  double data_scale = 2.0;
  std::uint64_t seed = 0;
};

// Adam on the eps-prediction objective with uniform steps in [1, T] and
// condition dropout. Throws NumericalError if the loss diverges.
Denoiser train_denoiser(const Dataset& dataset, const DiffusionSchedule& schedule,
                        const DenoiserTrainConfig& config);
// Same, starting from a given network (used to check the frozen-optimizer case).
Denoiser train_denoiser(Denoiser init, const Dataset& dataset, const DiffusionSchedule& schedule,
                        const DenoiserTrainConfig& config);

// Ancestral DDPM sampling over all T steps, sigma_i^2 = beta_i, no noise at
// the last step. The rng supplies x_T first, then one draw per later step.
Tensor ddpm_sample(const Denoiser& model, const DiffusionSchedule& schedule, int cond,
                   SeededRng& rng);
// Row k is ddpm_sample with SeededRng(derive_seed(seed, {k})).
Tensor ddpm_sample_batch(const Denoiser& model, const DiffusionSchedule& schedule,
                         std::span<const int> conds, std::uint64_t seed);

// Placement of the sampler's grid points over [1, T]. Quadratic spacing puts
// more points at low noise levels, where the inversion error concentrates.
enum class GridSpacing { uniform, quadratic };

const char* spacing_name(GridSpacing s);
GridSpacing parse_spacing(std::string_view name);

struct SamplerConfig {
  int steps = 10;
  double eta = 0.0;
  GridSpacing spacing = GridSpacing::quadratic;
  // Explicit step grid (strictly increasing, within [1, T]); empty means the
  // spaced grid: uniform {floor(k T / S)}, quadratic
  // {max(prev + 1, floor(T (k / S)^2))}, k = 1..S.
  std::vector<int> grid;
};

std::vector<int> sampler_grid(const DiffusionSchedule& schedule, const SamplerConfig& sampler);

// DDIM from the top grid point down to x0. z is one rank-1 latent or an
// [n x d] batch. The rng is used only when eta > 0.
Tensor ddim_sample(const Denoiser& model, const DiffusionSchedule& schedule, const Tensor& z,
                   std::span<const int> conds, const SamplerConfig& sampler,
                   SeededRng* rng = nullptr);
Tensor ddim_sample(const Denoiser& model, const DiffusionSchedule& schedule, const Tensor& z,
                   int cond, const SamplerConfig& sampler, SeededRng* rng = nullptr);

// Deterministic DDIM run in reverse grid order. Requires eta == 0.
Tensor ddim_invert(const Denoiser& model, const DiffusionSchedule& schedule, const Tensor& x0,
                   std::span<const int> conds, const SamplerConfig& sampler);
Tensor ddim_invert(const Denoiser& model, const DiffusionSchedule& schedule, const Tensor& x0,
                   int cond, const SamplerConfig& sampler);

// Checkpoint: <base>.bin holds the MLP, <base>.json the schedule, embedding
// dims, condition count, condition table and loss trace.
void save_denoiser(const std::filesystem::path& base, const Denoiser& model,
                   const DiffusionSchedule& schedule);
struct LoadedDenoiser {
  Denoiser model;
  DiffusionSchedule schedule;
};
LoadedDenoiser load_denoiser(const std::filesystem::path& base);

}  // namespace edsam
