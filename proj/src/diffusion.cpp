#include "edsam/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "edsam/adam.hpp"
#include "edsam/binio.hpp"
#include "edsam/error.hpp"

namespace edsam {

DiffusionSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw InvalidInput("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw InvalidInput("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  DiffusionSchedule s;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  s.betas_.resize(static_cast<std::size_t>(T));
  s.alpha_bars_.resize(static_cast<std::size_t>(T));
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    s.betas_[static_cast<std::size_t>(i)] = beta;
    prod *= 1.0 - beta;
    s.alpha_bars_[static_cast<std::size_t>(i)] = prod;
  }
  return s;
}

double DiffusionSchedule::beta(int i) const {
  if (i < 1 || i > T()) throw InvalidInput("schedule step " + std::to_string(i) + " out of range");
  return betas_[static_cast<std::size_t>(i - 1)];
}

double DiffusionSchedule::alpha_bar(int i) const {
  if (i == 0) return 1.0;
  if (i < 0 || i > T()) throw InvalidInput("schedule step " + std::to_string(i) + " out of range");
  return alpha_bars_[static_cast<std::size_t>(i - 1)];
}

Tensor q_sample(const DiffusionSchedule& schedule, const Tensor& x0, int i, const Tensor& eps) {
  if (i < 1 || i > schedule.T()) {
    throw InvalidInput("q_sample: step " + std::to_string(i) + " outside [1, T]");
  }
  if (x0.shape() != eps.shape()) throw InvalidInput("q_sample: eps shape differs from x0");
  const double ab = schedule.alpha_bar(i);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Tensor out(x0.shape());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a * x0[k] + b * eps[k];
  return out;
}

void time_embedding(int step, std::span<double> out) {
  const std::size_t half = out.size() / 2;
  const double t = static_cast<double>(step);
  for (std::size_t k = 0; k < half; ++k) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    out[k] = std::sin(t * freq);
    out[half + k] = std::cos(t * freq);
  }
}

Denoiser make_denoiser(std::size_t data_dim, int num_conditions, std::vector<std::size_t> hidden,
                       Activation act, SeededRng& rng) {
  if (data_dim == 0 || num_conditions < 1 || hidden.empty()) {
    throw InvalidInput("make_denoiser: need data_dim >= 1, >= 1 condition and >= 1 hidden layer");
  }
  std::vector<std::size_t> widths{data_dim + kTimeEmbedWidth + kCondEmbedWidth};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(data_dim);
  Denoiser d;
  d.mlp = MlpParams::init(MlpSpec::uniform(std::move(widths), act), rng);
  d.cond_table = Tensor::matrix(static_cast<std::size_t>(num_conditions) + 1, kCondEmbedWidth);
  for (double& v : d.cond_table.data()) v = rng.normal();
  d.data_dim = data_dim;
  d.num_conditions = num_conditions;
  return d;
}

namespace {

std::size_t cond_row(const Denoiser& m, int cond) {
  if (cond == -1) return static_cast<std::size_t>(m.null_condition());
  if (cond < 0 || cond >= m.num_conditions) {
    throw InvalidInput("condition id " + std::to_string(cond) + " out of range");
  }
  return static_cast<std::size_t>(cond);
}

Tensor as_rows(const Tensor& t) {
  if (t.rank() == 1) return Tensor({1, t.size()}, t.values());
  return t;
}

}  // namespace

Tensor denoiser_input(const Denoiser& model, const Tensor& x, std::span<const int> steps,
                      std::span<const int> conds) {
  const std::size_t n = x.rows();
  const std::size_t d = model.data_dim;
  if (x.cols() != d) throw InvalidInput("denoiser input width does not match data dim");
  if (steps.size() != n || conds.size() != n) {
    throw InvalidInput("denoiser input: steps/conds length must equal batch size");
  }
  const std::size_t width = d + kTimeEmbedWidth + kCondEmbedWidth;
  Tensor in = Tensor::matrix(n, width);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = in.row(r);
    auto xr = x.row(r);
    std::copy(xr.begin(), xr.end(), row.begin());
    time_embedding(steps[r], row.subspan(d, kTimeEmbedWidth));
    auto c = model.cond_table.row(cond_row(model, conds[r]));
    std::copy(c.begin(), c.end(), row.begin() + static_cast<std::ptrdiff_t>(d + kTimeEmbedWidth));
  }
  return in;
}

// The network predicts the residual on top of sqrt(1 - alpha_bar) * x, the
// exact noise for standard-normal data. Near pure noise that skip carries
// almost all of the answer, which keeps the x0 estimate stable at high steps.
namespace {

void add_noise_skip(const DiffusionSchedule& schedule, const Tensor& x, std::span<const int> steps,
                    Tensor& out) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double g = std::sqrt(1.0 - schedule.alpha_bar(steps[r]));
    auto o = out.row(r);
    auto xr = x.row(r);
    for (std::size_t k = 0; k < o.size(); ++k) o[k] += g * xr[k];
  }
}

}  // namespace

Tensor predict_noise(const Denoiser& model, const DiffusionSchedule& schedule, const Tensor& x,
                     std::span<const int> steps, std::span<const int> conds) {
  const Tensor xr = as_rows(x);
  auto acts = mlp_forward(model.mlp, denoiser_input(model, xr, steps, conds));
  Tensor out = std::move(acts.pre.back());
  if (model.noise_skip) add_noise_skip(schedule, xr, steps, out);
  return out;
}

DenoiserLoss denoiser_loss(const Denoiser& model, const DiffusionSchedule& schedule,
                           const DenoiserBatch& batch) {
  const Tensor x0 = as_rows(batch.x0);
  const Tensor eps = as_rows(batch.eps);
  const std::size_t n = x0.rows();
  const std::size_t d = model.data_dim;
  if (x0.shape() != eps.shape() || x0.cols() != d) {
    throw InvalidInput("denoiser_loss: x0/eps shape mismatch");
  }
  Tensor xi = Tensor::matrix(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    const int step = batch.steps.at(r);
    if (step < 1 || step > schedule.T()) throw InvalidInput("denoiser_loss: step out of range");
    const double a = std::sqrt(schedule.alpha_bar(step));
    const double b = std::sqrt(1.0 - schedule.alpha_bar(step));
    for (std::size_t k = 0; k < d; ++k) xi.at(r, k) = a * x0.at(r, k) + b * eps.at(r, k);
  }
  const Tensor input = denoiser_input(model, xi, batch.steps, batch.conds);
  const auto acts = mlp_forward(model.mlp, input);
  Tensor pred = acts.output();
  if (model.noise_skip) add_noise_skip(schedule, xi, batch.steps, pred);

  const double scale = 1.0 / static_cast<double>(n * d);
  DenoiserLoss out;
  Tensor grad_out = Tensor::matrix(n, d);
  double loss = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double diff = pred[k] - eps[k];
    loss += diff * diff;
    grad_out[k] = 2.0 * diff * scale;
  }
  out.loss = loss * scale;
  auto grads = mlp_backward(model.mlp, acts, grad_out);
  out.grad_mlp = std::move(grads.params);
  out.grad_cond_table = Tensor(model.cond_table.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t row = cond_row(model, batch.conds[r]);
    for (std::size_t k = 0; k < kCondEmbedWidth; ++k) {
      out.grad_cond_table.at(row, k) += grads.input.at(r, d + kTimeEmbedWidth + k);
    }
  }
  return out;
}

Denoiser train_denoiser(const Dataset& dataset, const DiffusionSchedule& schedule,
                        const DenoiserTrainConfig& config) {
  if (dataset.samples.empty()) throw InvalidInput("train_denoiser: empty dataset");
  SeededRng init_rng(derive_seed(config.seed, {0x1A17ULL}));
  Denoiser model = make_denoiser(dataset.dim(), dataset.num_classes, config.hidden, config.activation,
                                 init_rng);
  return train_denoiser(std::move(model), dataset, schedule, config);
}

Denoiser train_denoiser(Denoiser model, const Dataset& dataset, const DiffusionSchedule& schedule,
                        const DenoiserTrainConfig& config) {
  if (dataset.samples.empty()) throw InvalidInput("train_denoiser: empty dataset");
  const std::size_t d = dataset.dim();
  if (d != model.data_dim) throw InvalidInput("train_denoiser: dataset dim differs from model");
  for (const auto& s : dataset.samples) {
    if (s.image.size() != d) throw InvalidInput("train_denoiser: images differ in dimension");
  }
  if (config.batch_size == 0) throw InvalidInput("train_denoiser: batch_size must be >= 1");
  if (!(config.data_scale > 0.0)) throw InvalidInput("train_denoiser: data_scale must be > 0");
  model.data_offset = config.data_offset;
  model.data_scale = config.data_scale;

  SeededRng rng(derive_seed(config.seed, {0x7EA1ULL}));
  AdamState net_state(model.mlp.values().size(), AdamConfig{config.learning_rate});
  AdamState cond_state(model.cond_table.size(), AdamConfig{config.learning_rate});
  const std::size_t n = dataset.samples.size();
  const std::size_t B = config.batch_size;
  model.loss_trace.clear();
  model.loss_trace.reserve(config.steps);

  DenoiserBatch batch;
  batch.x0 = Tensor::matrix(B, d);
  batch.eps = Tensor::matrix(B, d);
  batch.steps.resize(B);
  batch.conds.resize(B);
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (std::size_t r = 0; r < B; ++r) {
      const auto& s = dataset.samples[rng.below(n)];
      for (std::size_t k = 0; k < d; ++k) batch.x0.at(r, k) = model.to_model(s.image[k]);
      batch.steps[r] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.T())));
      batch.conds[r] = rng.uniform() < config.p_uncond ? -1 : s.prompt;
      for (std::size_t k = 0; k < d; ++k) batch.eps.at(r, k) = rng.normal();
    }
    auto res = denoiser_loss(model, schedule, batch);
    if (!std::isfinite(res.loss)) {
      throw NumericalError("train_denoiser: loss diverged at step " + std::to_string(step));
    }
    model.loss_trace.push_back(res.loss);
    // Cosine decay to a tenth of the base rate.
    const double progress = config.steps > 1 ? static_cast<double>(step) / (config.steps - 1) : 0.0;
    const double lr = config.learning_rate *
                      (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    net_state.config.learning_rate = lr;
    cond_state.config.learning_rate = lr;
    adam_step(net_state, model.mlp.values(), res.grad_mlp.values());
    adam_step(cond_state, model.cond_table.data(), res.grad_cond_table.data());
  }
  return model;
}

namespace {

struct DdpmCoefs {
  double inv_sqrt_alpha;
  double eps_coef;
  double sigma;
};

DdpmCoefs ddpm_coefs(const DiffusionSchedule& s, int i) {
  const double beta = s.beta(i);
  return {1.0 / std::sqrt(s.alpha(i)), beta / std::sqrt(1.0 - s.alpha_bar(i)), std::sqrt(beta)};
}

}  // namespace

Tensor ddpm_sample(const Denoiser& model, const DiffusionSchedule& schedule, int cond,
                   SeededRng& rng) {
  const std::size_t d = model.data_dim;
  Tensor x({1, d});
  for (double& v : x.data()) v = rng.normal();
  for (int i = schedule.T(); i >= 1; --i) {
    const int steps[] = {i};
    const int conds[] = {cond};
    const Tensor eps = predict_noise(model, schedule, x, steps, conds);
    const auto c = ddpm_coefs(schedule, i);
    for (std::size_t k = 0; k < d; ++k) x[k] = (x[k] - c.eps_coef * eps[k]) * c.inv_sqrt_alpha;
    if (i > 1) {
      for (std::size_t k = 0; k < d; ++k) x[k] += c.sigma * rng.normal();
    }
    require_finite(x, "ddpm_sample trajectory");
  }
  Tensor out({d});
  for (std::size_t k = 0; k < d; ++k) out[k] = model.to_data(x[k]);
  return out;
}

Tensor ddpm_sample_batch(const Denoiser& model, const DiffusionSchedule& schedule,
                         std::span<const int> conds, std::uint64_t seed) {
  const std::size_t n = conds.size();
  const std::size_t d = model.data_dim;
  std::vector<SeededRng> rngs;
  rngs.reserve(n);
  for (std::size_t r = 0; r < n; ++r) rngs.emplace_back(derive_seed(seed, {r}));
  Tensor x = Tensor::matrix(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < d; ++k) x.at(r, k) = rngs[r].normal();
  }
  std::vector<int> steps(n);
  for (int i = schedule.T(); i >= 1; --i) {
    std::fill(steps.begin(), steps.end(), i);
    const Tensor eps = predict_noise(model, schedule, x, steps, conds);
    const auto c = ddpm_coefs(schedule, i);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = (x[k] - c.eps_coef * eps[k]) * c.inv_sqrt_alpha;
    if (i > 1) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < d; ++k) x.at(r, k) += c.sigma * rngs[r].normal();
      }
    }
    require_finite(x, "ddpm_sample trajectory");
  }
  for (double& v : x.data()) v = model.to_data(v);
  return x;
}

const char* spacing_name(GridSpacing s) {
  return s == GridSpacing::uniform ? "uniform" : "quadratic";
}

GridSpacing parse_spacing(std::string_view name) {
  if (name == "uniform") return GridSpacing::uniform;
  if (name == "quadratic") return GridSpacing::quadratic;
  throw InvalidInput("unknown grid spacing '" + std::string(name) + "'");
}

std::vector<int> sampler_grid(const DiffusionSchedule& schedule, const SamplerConfig& sampler) {
  if (!(sampler.eta >= 0.0 && sampler.eta <= 1.0)) throw InvalidInput("sampler eta must lie in [0, 1]");
  const int T = schedule.T();
  std::vector<int> grid = sampler.grid;
  if (grid.empty()) {
    if (sampler.steps < 1 || sampler.steps > T) {
      throw InvalidInput("sampler steps must lie in [1, T]; got " + std::to_string(sampler.steps));
    }
    const long long S = sampler.steps;
    for (long long k = 1; k <= S; ++k) {
      if (sampler.spacing == GridSpacing::uniform) {
        grid.push_back(static_cast<int>(k * T / S));
      } else {
        const int q = static_cast<int>(k * k * T / (S * S));
        grid.push_back(grid.empty() ? std::max(q, 1) : std::max(q, grid.back() + 1));
      }
    }
  }
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (grid[j] < 1 || grid[j] > T) throw InvalidInput("sampler grid point outside [1, T]");
    if (j > 0 && grid[j] <= grid[j - 1]) {
      throw InvalidInput("sampler grid must be strictly increasing");
    }
  }
  return grid;
}

namespace {

// One DDIM move of every row from level `from` to level `to` using the noise
// prediction eps (evaluated by the caller).
void ddim_move(const DiffusionSchedule& s, int from, int to, double sigma, Tensor& x,
               const Tensor& eps, SeededRng* rng) {
  const double ab_from = s.alpha_bar(from);
  const double ab_to = s.alpha_bar(to);
  const double sa_from = std::sqrt(ab_from);
  const double sb_from = std::sqrt(1.0 - ab_from);
  const double sa_to = std::sqrt(ab_to);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_to - sigma * sigma));
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double x0_hat = (x[k] - sb_from * eps[k]) / sa_from;
    x[k] = sa_to * x0_hat + dir * eps[k];
  }
  if (sigma > 0.0) {
    for (double& v : x.data()) v += sigma * rng->normal();
  }
}

}  // namespace

Tensor ddim_sample(const Denoiser& model, const DiffusionSchedule& schedule, const Tensor& z,
                   std::span<const int> conds, const SamplerConfig& sampler, SeededRng* rng) {
  const auto grid = sampler_grid(schedule, sampler);
  if (sampler.eta > 0.0 && rng == nullptr) throw InvalidInput("ddim_sample: eta > 0 needs an rng");
  const bool single = z.rank() == 1;
  Tensor x = as_rows(z);
  if (x.cols() != model.data_dim) throw InvalidInput("ddim_sample: latent width != data dim");
  const std::size_t n = x.rows();
  if (conds.size() != n) throw InvalidInput("ddim_sample: one condition per latent required");
  std::vector<int> steps(n);
  for (std::size_t j = grid.size(); j-- > 0;) {
    const int t = grid[j];
    const int prev = j == 0 ? 0 : grid[j - 1];
    std::fill(steps.begin(), steps.end(), t);
    const Tensor eps = predict_noise(model, schedule, x, steps, conds);
    double sigma = 0.0;
    if (sampler.eta > 0.0) {
      const double ab_t = schedule.alpha_bar(t);
      const double ab_p = schedule.alpha_bar(prev);
      sigma = sampler.eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
    }
    ddim_move(schedule, t, prev, sigma, x, eps, rng);
    require_finite(x, "ddim_sample trajectory");
  }
  for (double& v : x.data()) v = model.to_data(v);
  if (single) return Tensor({model.data_dim}, x.values());
  return x;
}

Tensor ddim_sample(const Denoiser& model, const DiffusionSchedule& schedule, const Tensor& z,
                   int cond, const SamplerConfig& sampler, SeededRng* rng) {
  const std::vector<int> conds(z.rank() == 1 ? 1 : z.rows(), cond);
  return ddim_sample(model, schedule, z, conds, sampler, rng);
}

// The noise prediction for the move from level `prev` up to level `t` is
// evaluated at the current point and its own level; level 0 has no trained
// timestep, so the first move uses step 1.
Tensor ddim_invert(const Denoiser& model, const DiffusionSchedule& schedule, const Tensor& x0,
                   std::span<const int> conds, const SamplerConfig& sampler) {
  if (sampler.eta != 0.0) throw InvalidInput("ddim_invert: inversion requires eta == 0");
  const auto grid = sampler_grid(schedule, sampler);
  const bool single = x0.rank() == 1;
  Tensor x = as_rows(x0);
  if (x.cols() != model.data_dim) throw InvalidInput("ddim_invert: image width != data dim");
  const std::size_t n = x.rows();
  if (conds.size() != n) throw InvalidInput("ddim_invert: one condition per image required");
  for (double& v : x.data()) v = model.to_model(v);
  std::vector<int> steps(n);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const int t = grid[j];
    const int prev = j == 0 ? 0 : grid[j - 1];
    std::fill(steps.begin(), steps.end(), std::max(prev, 1));
    const Tensor eps = predict_noise(model, schedule, x, steps, conds);
    ddim_move(schedule, prev, t, 0.0, x, eps, nullptr);
    require_finite(x, "ddim_invert trajectory");
  }
  if (single) return Tensor({model.data_dim}, x.values());
  return x;
}

Tensor ddim_invert(const Denoiser& model, const DiffusionSchedule& schedule, const Tensor& x0,
                   int cond, const SamplerConfig& sampler) {
  const std::vector<int> conds(x0.rank() == 1 ? 1 : x0.rows(), cond);
  return ddim_invert(model, schedule, x0, conds, sampler);
}

void save_denoiser(const std::filesystem::path& base, const Denoiser& model,
                   const DiffusionSchedule& schedule) {
  auto bin = base;
  bin += ".bin";
  auto side = base;
  side += ".json";
  save_mlp(bin, model.mlp);
  const nlohmann::json j{
      {"format", "edsam-denoiser"},
      {"version", 1},
      {"schedule", {{"T", schedule.T()}, {"beta_start", schedule.beta_start()}, {"beta_end", schedule.beta_end()}}},
      {"time_embed_dim", kTimeEmbedWidth},
      {"cond_embed_dim", kCondEmbedWidth},
      {"num_conditions", model.num_conditions},
      {"data_dim", model.data_dim},
      {"data_offset", model.data_offset},
      {"data_scale", model.data_scale},
      {"noise_skip", model.noise_skip},
      {"cond_table", model.cond_table.values()},
      {"loss_trace", model.loss_trace}};
  binio::write_file(side, j.dump(2) + "\n");
}

LoadedDenoiser load_denoiser(const std::filesystem::path& base) {
  auto bin = base;
  bin += ".bin";
  auto side = base;
  side += ".json";
  const std::string text = binio::read_file(side);
  LoadedDenoiser out;
  out.model.mlp = load_mlp(bin);
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "edsam-denoiser") throw ParseError("denoiser sidecar: wrong format tag");
    if (j.at("version") != 1) {
      throw UnsupportedVersion("denoiser sidecar: unsupported version " + j.at("version").dump());
    }
    const auto& s = j.at("schedule");
    out.schedule = make_schedule(s.at("T"), s.at("beta_start"), s.at("beta_end"));
    if (j.at("time_embed_dim") != kTimeEmbedWidth || j.at("cond_embed_dim") != kCondEmbedWidth) {
      throw ParseError("denoiser sidecar: embedding widths do not match this build");
    }
    out.model.num_conditions = j.at("num_conditions");
    out.model.data_dim = j.at("data_dim");
    out.model.data_offset = j.at("data_offset");
    out.model.data_scale = j.at("data_scale");
    out.model.noise_skip = j.at("noise_skip");
    out.model.cond_table = Tensor({static_cast<std::size_t>(out.model.num_conditions) + 1, kCondEmbedWidth},
                                  j.at("cond_table").get<std::vector<double>>());
    out.model.loss_trace = j.at("loss_trace").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("denoiser sidecar: ") + e.what());
  } catch (const InvalidInput& e) {
    throw ParseError(std::string("denoiser sidecar: ") + e.what());
  }
  const auto& spec = out.model.mlp.spec();
  if (spec.input_width() != out.model.data_dim + kTimeEmbedWidth + kCondEmbedWidth ||
      spec.output_width() != out.model.data_dim) {
    throw ParseError("denoiser checkpoint: network widths do not match sidecar");
  }
  return out;
}

}  // namespace edsam
