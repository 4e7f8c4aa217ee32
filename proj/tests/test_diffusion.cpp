#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "edsam/diffusion.hpp"
#include "edsam/error.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace edsam;

namespace {

// A network whose output is identically zero and a bare (no skip) noise head.
Denoiser zero_denoiser(std::size_t dim, int conds) {
  SeededRng rng(1);
  Denoiser d = make_denoiser(dim, conds, {8}, Activation::tanh, rng);
  d.mlp = MlpParams::zeros(d.mlp.spec());
  d.noise_skip = false;
  return d;
}

Tensor normal_rows(SeededRng& rng, std::size_t n, std::size_t d) {
  Tensor t = Tensor::matrix(n, d);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

// 1-D data: points near -1 (class 0) and +1 (class 1).
Dataset two_clusters(std::size_t n, std::uint64_t seed) {
  SeededRng rng(seed);
  Dataset ds;
  ds.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 2);
    ds.samples.push_back({Tensor::vector({(c == 0 ? -1.0 : 1.0) + 0.1 * rng.normal()}), c});
  }
  return ds;
}

const Denoiser& cluster_model() {
  static const Denoiser model = [] {
    DenoiserTrainConfig cfg;
    cfg.steps = 2000;
    cfg.hidden = {32, 32};
    cfg.data_offset = 0.0;
    cfg.data_scale = 1.0;
    cfg.seed = 3;
    return train_denoiser(two_clusters(400, 5), default_schedule(), cfg);
  }();
  return model;
}

}  // namespace

TEST_CASE("schedule: single step, direct-product endpoint, monotone") {
  const auto s1 = make_schedule(1, 1e-4, 0.02);
  CHECK(s1.alpha_bar(1) == doctest::Approx(1.0 - 1e-4).epsilon(1e-15));

  const auto s = default_schedule();
  const double want = oracle::linear_alpha_bar(1000, 1e-4, 0.02, 1000);
  CHECK(oracle::rel_err(s.alpha_bar(1000), want) < 1e-12);
  CHECK(want == doctest::Approx(4.0e-5).epsilon(0.02));
  CHECK(oracle::rel_err(s.alpha_bar(500), oracle::linear_alpha_bar(1000, 1e-4, 0.02, 500)) < 1e-12);
  CHECK(s.alpha_bar(0) == 1.0);
  for (int i = 1; i <= s.T(); ++i) {
    CHECK(s.alpha_bar(i) < s.alpha_bar(i - 1));
    CHECK(s.alpha_bar(i) > 0.0);
  }
  const auto flat = make_schedule(10, 0.05, 0.05);
  for (int i = 1; i <= 10; ++i) CHECK(flat.alpha_bar(i) < flat.alpha_bar(i - 1));
}

TEST_CASE("schedule rejects bad ranges") {
  CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), InvalidInput);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), InvalidInput);
  CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), InvalidInput);
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), InvalidInput);
}

TEST_CASE("q_sample limits, hand value and linearity") {
  // beta = 0.25 on a one-step schedule gives alpha_bar = 0.75.
  const auto s = make_schedule(1, 0.25, 0.25);
  const Tensor x0 = Tensor::vector({0.0, 0.0, 0.0});
  const Tensor ones = Tensor::vector({1.0, 1.0, 1.0});
  const Tensor xi = q_sample(s, x0, 1, ones);
  for (double v : xi.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));

  // near-identity and near-pure-noise limits
  const auto tiny = make_schedule(1, 1e-12, 1e-12);
  const Tensor a = Tensor::vector({0.3, -2.0});
  const Tensor e = Tensor::vector({1.5, 0.7});
  const Tensor near_x0 = q_sample(tiny, a, 1, e);
  for (std::size_t k = 0; k < 2; ++k) CHECK(near_x0[k] == doctest::Approx(a[k]).epsilon(1e-5));
  const auto heavy = make_schedule(1, 1.0 - 1e-12, 1.0 - 1e-12);
  const Tensor near_eps = q_sample(heavy, a, 1, e);
  for (std::size_t k = 0; k < 2; ++k) CHECK(near_eps[k] == doctest::Approx(e[k]).epsilon(1e-5));

  const auto d = default_schedule();
  const double c = -1.7;
  Tensor ca = a, ce = e;
  for (double& v : ca.data()) v *= c;
  for (double& v : ce.data()) v *= c;
  const Tensor lhs = q_sample(d, ca, 321, ce);
  const Tensor rhs = q_sample(d, a, 321, e);
  for (std::size_t k = 0; k < 2; ++k) CHECK(lhs[k] == doctest::Approx(c * rhs[k]).epsilon(1e-14));

  CHECK_THROWS_AS(q_sample(d, a, 0, e), InvalidInput);
  CHECK_THROWS_AS(q_sample(d, a, 1001, e), InvalidInput);
  CHECK_THROWS_AS(q_sample(d, a, 5, ones), InvalidInput);
}

TEST_CASE("denoiser input layout and widths") {
  SeededRng rng(2);
  const Denoiser m = make_denoiser(5, 3, {16}, Activation::gelu, rng);
  CHECK(m.mlp.spec().input_width() == 5 + kTimeEmbedWidth + kCondEmbedWidth);
  CHECK(m.mlp.spec().output_width() == 5);
  CHECK(m.cond_table.rows() == 4);
  const Tensor x = normal_rows(rng, 2, 5);
  const int steps[] = {7, 300};
  const int conds[] = {2, -1};
  const Tensor in = denoiser_input(m, x, steps, conds);
  for (std::size_t k = 0; k < 5; ++k) CHECK(in.at(1, k) == x.at(1, k));
  std::vector<double> te(kTimeEmbedWidth);
  time_embedding(300, te);
  for (std::size_t k = 0; k < kTimeEmbedWidth; ++k) CHECK(in.at(1, 5 + k) == te[k]);
  for (std::size_t k = 0; k < kCondEmbedWidth; ++k) {
    CHECK(in.at(0, 5 + kTimeEmbedWidth + k) == m.cond_table.at(2, k));
    CHECK(in.at(1, 5 + kTimeEmbedWidth + k) == m.cond_table.at(3, k));
  }
  const int bad[] = {3, 0};
  CHECK_THROWS_AS(denoiser_input(m, x, steps, bad), InvalidInput);
}

TEST_CASE("noise skip adds sqrt(1 - alpha_bar) * x to the bare network") {
  SeededRng rng(8);
  Denoiser m = make_denoiser(3, 2, {8}, Activation::tanh, rng);
  const auto s = default_schedule();
  const Tensor x = normal_rows(rng, 2, 3);
  const int steps[] = {10, 900};
  const int conds[] = {0, 1};
  const Tensor with = predict_noise(m, s, x, steps, conds);
  m.noise_skip = false;
  const Tensor bare = predict_noise(m, s, x, steps, conds);
  for (std::size_t r = 0; r < 2; ++r) {
    const double c = std::sqrt(1.0 - oracle::linear_alpha_bar(1000, 1e-4, 0.02, steps[r]));
    for (std::size_t k = 0; k < 3; ++k) CHECK(with.at(r, k) == doctest::Approx(bare.at(r, k) + c * x.at(r, k)).epsilon(1e-12));
  }
}

TEST_CASE("ddpm with a zero predictor is the unrolled rescaling plus the injected noise") {
  const auto s = make_schedule(50, 1e-3, 0.05);
  const Denoiser m = zero_denoiser(3, 1);
  SeededRng rng(17);
  const Tensor out = ddpm_sample(m, s, 0, rng);

  SeededRng ref(17);
  std::vector<double> x(3);
  for (double& v : x) v = ref.normal();
  std::vector<double> pure = x;
  for (int i = 50; i >= 1; --i) {
    const double beta = 1e-3 + (0.05 - 1e-3) * (i - 1) / 49.0;
    for (std::size_t k = 0; k < 3; ++k) {
      x[k] /= std::sqrt(1.0 - beta);
      pure[k] /= std::sqrt(1.0 - beta);
    }
    if (i > 1) {
      for (double& v : x) v += std::sqrt(beta) * ref.normal();
    }
  }
  for (std::size_t k = 0; k < 3; ++k) CHECK(out[k] == doctest::Approx(x[k]).epsilon(1e-12));

  // The noise-free part is x_T / sqrt(alpha_bar_T).
  SeededRng first(17);
  for (std::size_t k = 0; k < 3; ++k) {
    const double xT = first.normal();
    CHECK(pure[k] == doctest::Approx(xT / std::sqrt(s.alpha_bar(50))).epsilon(1e-12));
  }

  SeededRng again(17);
  CHECK(ddpm_sample(m, s, 0, again) == out);
}

TEST_CASE("ddim with a zero predictor divides by sqrt(alpha_bar) of the top grid point") {
  const auto s = default_schedule();
  const Denoiser m = zero_denoiser(4, 2);
  SeededRng rng(9);
  const Tensor z = normal_rows(rng, 3, 4);
  SamplerConfig cfg;
  const auto grid = sampler_grid(s, cfg);
  CHECK(grid == std::vector<int>{10, 40, 90, 160, 250, 360, 490, 640, 810, 1000});
  SamplerConfig uni;
  uni.spacing = GridSpacing::uniform;
  CHECK(sampler_grid(s, uni) == std::vector<int>{100, 200, 300, 400, 500, 600, 700, 800, 900, 1000});
  SamplerConfig full;
  full.steps = 1000;
  const auto all = sampler_grid(s, full);
  REQUIRE(all.size() == 1000);
  for (int i = 0; i < 1000; ++i) CHECK(all[static_cast<std::size_t>(i)] == i + 1);
  SamplerConfig fine;
  fine.steps = 400;
  const auto g400 = sampler_grid(s, fine);
  CHECK(g400.back() == 1000);
  for (std::size_t i = 1; i < g400.size(); ++i) CHECK(g400[i] > g400[i - 1]);
  const Tensor x = ddim_sample(m, s, z, 1, cfg);
  const double scale = 1.0 / std::sqrt(oracle::linear_alpha_bar(1000, 1e-4, 0.02, 1000));
  for (std::size_t k = 0; k < z.size(); ++k) CHECK(x[k] == doctest::Approx(z[k] * scale).epsilon(1e-12));

  const Tensor back = ddim_invert(m, s, x, 1, cfg);
  double worst = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) worst = std::max(worst, std::abs(back[k] - z[k]));
  CHECK(worst < 1e-9);
}

TEST_CASE("ddim with steps = T matches an unrolled reference") {
  const auto s = make_schedule(60, 1e-3, 0.04);
  SeededRng rng(12);
  const Denoiser m = make_denoiser(3, 2, {16}, Activation::tanh, rng);
  const Tensor z = normal_rows(rng, 2, 3);
  SamplerConfig cfg;
  cfg.steps = 60;
  const Tensor out = ddim_sample(m, s, z, 1, cfg);

  Tensor x = z;
  for (int t = 60; t >= 1; --t) {
    const std::vector<int> steps(2, t), conds(2, 1);
    const Tensor eps = predict_noise(m, s, x, steps, conds);
    const double ab = oracle::linear_alpha_bar(60, 1e-3, 0.04, t);
    const double ab_prev = oracle::linear_alpha_bar(60, 1e-3, 0.04, t - 1);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double x0_hat = (x[k] - std::sqrt(1.0 - ab) * eps[k]) / std::sqrt(ab);
      x[k] = std::sqrt(ab_prev) * x0_hat + std::sqrt(1.0 - ab_prev) * eps[k];
    }
  }
  for (std::size_t k = 0; k < x.size(); ++k) CHECK(std::abs(out[k] - x[k]) < 1e-9);
  CHECK(ddim_sample(m, s, z, 1, cfg) == out);
}

TEST_CASE("sampler and inversion argument checks") {
  const auto s = default_schedule();
  const Denoiser m = zero_denoiser(2, 1);
  const Tensor x = Tensor::vector({0.1, 0.2});
  SamplerConfig bad;
  bad.steps = 0;
  CHECK_THROWS_AS(ddim_sample(m, s, x, 0, bad), InvalidInput);
  bad.steps = 1001;
  CHECK_THROWS_AS(ddim_sample(m, s, x, 0, bad), InvalidInput);
  SamplerConfig grid;
  grid.grid = {10, 10, 20};
  CHECK_THROWS_AS(ddim_sample(m, s, x, 0, grid), InvalidInput);
  SamplerConfig eta;
  eta.eta = 0.5;
  CHECK_THROWS_AS(ddim_invert(m, s, x, 0, eta), InvalidInput);
  CHECK_THROWS_AS(ddim_sample(m, s, x, 0, eta), InvalidInput);  // no rng
  SeededRng rng(1);
  CHECK_NOTHROW(ddim_sample(m, s, x, 0, eta, &rng));
}

TEST_CASE("learning rate 0 leaves the parameters unchanged") {
  const Dataset ds = two_clusters(40, 1);
  SeededRng rng(4);
  const Denoiser init = make_denoiser(1, 2, {8}, Activation::gelu, rng);
  DenoiserTrainConfig cfg;
  cfg.steps = 20;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.0;
  const Denoiser out = train_denoiser(init, ds, default_schedule(), cfg);
  CHECK(out.mlp == init.mlp);
  CHECK(out.cond_table == init.cond_table);
  CHECK(out.loss_trace.size() == 20);
}

TEST_CASE("two-cluster toy: conditional samples land in the right cluster") {
  const Denoiser& m = cluster_model();
  const auto s = default_schedule();
  std::vector<int> conds(1000);
  for (std::size_t i = 0; i < conds.size(); ++i) conds[i] = static_cast<int>(i % 2);
  const Tensor x = ddpm_sample_batch(m, s, conds, 77);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < conds.size(); ++i) {
    if ((x[i] > 0.0) == (conds[i] == 1)) ++hit;
  }
  const double fidelity = static_cast<double>(hit) / static_cast<double>(conds.size());
  MESSAGE("cluster fidelity " << fidelity);
  CHECK(fidelity >= 0.95);
}

TEST_CASE("two-cluster toy: ddpm sample moments match the data") {
  const Denoiser& m = cluster_model();
  const auto s = default_schedule();
  const Dataset data = two_clusters(400, 5);
  double dm = 0.0, dv = 0.0;
  for (const auto& p : data.samples) dm += p.image[0];
  dm /= static_cast<double>(data.size());
  for (const auto& p : data.samples) dv += (p.image[0] - dm) * (p.image[0] - dm);
  dv /= static_cast<double>(data.size() - 1);

  std::vector<int> conds(10000);
  for (std::size_t i = 0; i < conds.size(); ++i) conds[i] = static_cast<int>(i % 2);
  const Tensor x = ddpm_sample_batch(m, s, conds, 91);
  double sm = 0.0, sv = 0.0;
  for (double v : x.values()) sm += v;
  sm /= static_cast<double>(x.size());
  for (double v : x.values()) sv += (v - sm) * (v - sm);
  sv /= static_cast<double>(x.size() - 1);
  MESSAGE("data mean " << dm << " var " << dv << "; samples mean " << sm << " var " << sv);
  CHECK(std::abs(sm - dm) <= 0.05);
  CHECK(std::abs(sv - dv) <= 0.05);
}

TEST_CASE("ddpm batch row k equals the single sampler on the derived stream") {
  const Denoiser& m = cluster_model();
  const auto s = default_schedule();
  const int conds[] = {1, 0, 1};
  const Tensor batch = ddpm_sample_batch(m, s, conds, 5);
  for (std::size_t k = 0; k < 3; ++k) {
    SeededRng rng(derive_seed(5, {k}));
    const Tensor one = ddpm_sample(m, s, conds[k], rng);
    CHECK(one[0] == doctest::Approx(batch[k]).epsilon(1e-12));
  }
}

TEST_CASE("image toy: training loss falls") {
  const auto& toy = fixture::toy_diffusion();
  const auto& trace = toy.model.loss_trace;
  REQUIRE(trace.size() == DenoiserTrainConfig{}.steps);
  const std::size_t w = 200;
  const double head = std::accumulate(trace.begin(), trace.begin() + w, 0.0) / w;
  const double tail = std::accumulate(trace.end() - w, trace.end(), 0.0) / w;
  MESSAGE("loss window means " << head << " -> " << tail);
  CHECK(tail < head);
}

TEST_CASE("image toy: 10-step invert then sample reconstructs the data") {
  const auto& toy = fixture::toy_diffusion();
  const std::size_t n = 200;
  const Tensor all = toy.data.images();
  const auto prompts = toy.data.prompts();
  const std::size_t d = all.cols();
  Tensor x = Tensor::matrix(n, d);
  std::copy(all.values().begin(), all.values().begin() + static_cast<std::ptrdiff_t>(n * d), x.data().begin());
  const std::vector<int> conds(prompts.begin(), prompts.begin() + static_cast<std::ptrdiff_t>(n));
  SamplerConfig cfg;
  const Tensor z = ddim_invert(toy.model, toy.schedule, x, conds, cfg);
  const Tensor back = ddim_sample(toy.model, toy.schedule, z, conds, cfg);

  double mse = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) mse += (back[k] - x[k]) * (back[k] - x[k]);
  mse /= static_cast<double>(x.size());
  double var = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < all.rows(); ++r) m += all.at(r, j);
    m /= static_cast<double>(all.rows());
    for (std::size_t r = 0; r < all.rows(); ++r) v += (all.at(r, j) - m) * (all.at(r, j) - m);
    var += v / static_cast<double>(all.rows() - 1);
  }
  var /= static_cast<double>(d);
  MESSAGE("round trip mse " << mse << " / variance " << var << " = " << mse / var);
  CHECK(mse < 0.05 * var);
}

TEST_CASE("image toy: conditional samples are recognised by a nearest-class-mean classifier") {
  const auto& toy = fixture::toy_diffusion();
  const fixture::NearestMean ncm(toy.data);
  SeededRng rng(123);
  const std::size_t n = 200;
  const Tensor z = normal_rows(rng, n, toy.data.dim());
  std::vector<int> conds(n);
  for (std::size_t i = 0; i < n; ++i) conds[i] = static_cast<int>(i % 4);
  const Tensor x = ddim_sample(toy.model, toy.schedule, z, conds, SamplerConfig{});
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) hit += ncm.predict(x.row(i)) == conds[i] ? 1 : 0;
  const double fidelity = static_cast<double>(hit) / static_cast<double>(n);
  MESSAGE("ncm fidelity " << fidelity);
  CHECK(fidelity >= 0.9);
}

// Inverted latents come out with a per-coordinate variance well below one; the
// model and the 10-step discretization both shrink them.
TEST_CASE("image toy: inverted latents are approximately standard normal" * doctest::may_fail()) {
  const auto& toy = fixture::toy_diffusion();
  const Tensor z = ddim_invert(toy.model, toy.schedule, toy.data.images(), toy.data.prompts(), SamplerConfig{});
  const std::size_t n = z.rows(), d = z.cols();
  double worst_mean = 0.0, worst_var = 0.0, mean_var = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < n; ++r) m += z.at(r, j);
    m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) v += (z.at(r, j) - m) * (z.at(r, j) - m);
    v /= static_cast<double>(n - 1);
    worst_mean = std::max(worst_mean, std::abs(m));
    worst_var = std::max(worst_var, std::abs(v - 1.0));
    mean_var += v / static_cast<double>(d);
  }
  MESSAGE("latent |mean| max " << worst_mean << ", mean variance " << mean_var);
  CHECK(worst_mean <= 0.1);
  CHECK(worst_var <= 0.15);
}

TEST_CASE("denoiser checkpoint round trip") {
  const auto dir = oracle::scratch_dir("denoiser");
  const Denoiser& m = cluster_model();
  const auto s = default_schedule();
  save_denoiser(dir / "den", m, s);
  const auto loaded = load_denoiser(dir / "den");
  CHECK(loaded.model.mlp == m.mlp);
  CHECK(loaded.model.cond_table == m.cond_table);
  CHECK(loaded.model.loss_trace == m.loss_trace);
  CHECK(loaded.model.noise_skip == m.noise_skip);
  CHECK(loaded.model.data_offset == m.data_offset);
  CHECK(loaded.schedule.T() == 1000);
  CHECK(loaded.schedule.alpha_bar(1000) == s.alpha_bar(1000));
  const Tensor z = Tensor::vector({0.4});
  CHECK(ddim_sample(loaded.model, loaded.schedule, z, 1, SamplerConfig{}) ==
        ddim_sample(m, s, z, 1, SamplerConfig{}));
  CHECK_THROWS_AS(load_denoiser(dir / "missing"), MissingArtifact);
}
