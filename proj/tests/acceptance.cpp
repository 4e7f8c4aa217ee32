// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Positional arguments select a subset by number.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "edsam/advgen.hpp"
#include "edsam/binio.hpp"
#include "edsam/contrastive.hpp"
#include "edsam/evalharness.hpp"
#include "edsam/transport.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace edsam;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

// 1. Distance bound, covariance and stratum means over the (rho, d) grid.
void transport_bound(Outcome& o) {
  const auto t0 = Clock::now();
  double worst_slack = -1e9, worst_cov = 0.0, worst_mean = 0.0;
  for (double rho : {0.05, 0.2, 0.5, 1.0}) {
    for (std::size_t d : {2u, 16u, 64u}) {
      SeededRng rng(derive_seed(1, {static_cast<std::uint64_t>(rho * 100), d}));
      const auto r = verify_transport_bound(rho, d, 100000, rng);
      double dist = r.normalized_distance;
      for (const auto& s : r.alpha_strata) {
        dist = std::max(dist, s.normalized_distance);
        worst_cov = std::max(worst_cov, s.cov_max_abs_dev);
        worst_mean = std::max(worst_mean, s.mean_max_abs_dev);
      }
      worst_slack = std::max(worst_slack, dist - rho);
    }
  }
  const double secs = seconds_since(t0);
  o.detail << "max distance - rho " << worst_slack << ", max cov dev " << worst_cov << ", max stratum mean dev "
           << worst_mean << ", " << secs << " s";
  o.require(worst_slack <= 0.03, "distance <= rho + 0.03");
  o.require(worst_cov <= 0.05, "covariance within 0.05");
  o.require(worst_mean <= 0.02, "stratum mean within 0.02");
  o.require(secs < 30.0, "runtime < 30 s");
}

// 2. Per-coordinate correlation between z* and z.
void transport_correlation(Outcome& o) {
  SeededRng rng(2);
  const auto r = verify_transport_bound(0.5, 16, 100000, rng);
  double worst = 0.0, mean = 0.0;
  for (const auto& s : r.alpha_strata) {
    worst = std::max(worst, s.anchor_corr_max_abs_dev);
    mean += s.anchor_correlation / static_cast<double>(r.alpha_strata.size());
  }
  o.detail << "mean corr " << mean << ", max |corr - 0.7071| " << worst;
  o.require(worst <= 0.01, "corr within 0.01 of 1/sqrt(2)");
}

// 3. Finite-difference gradient checks on randomized configurations.
void gradients(Outcome& o) {
  const auto t0 = Clock::now();
  double clip_worst = 0.0, den_worst = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    clip_worst = std::max(clip_worst, gradcheck::clip_case(1000 + s).worst);
    den_worst = std::max(den_worst, gradcheck::denoiser_case(2000 + s));
  }
  const double secs = seconds_since(t0);
  o.detail << "100 configs, worst rel err clip " << clip_worst << ", denoiser " << den_worst << ", " << secs << " s";
  o.require(clip_worst < 1e-4 && den_worst < 1e-4, "rel err < 1e-4");
  o.require(secs < 60.0, "runtime < 60 s");
}

std::vector<std::vector<double>> brute_logits(const ContrastiveModel& m, const ClipBatch& b) {
  const Tensor img = encode_images(m, b.images);
  const Tensor txt = prompt_embeddings(m);
  std::vector<std::vector<double>> l(b.prompts.size(), std::vector<double>(b.prompts.size()));
  for (std::size_t i = 0; i < l.size(); ++i) {
    for (std::size_t j = 0; j < l.size(); ++j) {
      l[i][j] = oracle::cosine(img.row(i), txt.row(static_cast<std::size_t>(b.prompts[j]))) / m.tau();
    }
  }
  return l;
}

// 4. Contrastive loss against the term-by-term evaluation; uniform logits.
void contrastive_oracle(Outcome& o) {
  SeededRng rng(4);
  double worst = 0.0, uniform_worst = 0.0;
  for (std::size_t n : {2u, 3u, 8u}) {
    for (int rep = 0; rep < 10; ++rep) {
      const int classes = rep % 2 == 0 ? 8 : 2;
      auto m = make_contrastive_model(classes, 6, 40 + static_cast<std::uint64_t>(rep));
      m.log_tau = std::log(rng.uniform(0.05, 0.5));
      ClipBatch b;
      b.images = Tensor::matrix(n, 6);
      for (double& v : b.images.data()) v = rng.uniform();
      for (std::size_t i = 0; i < n; ++i) {
        b.prompts.push_back(classes == 8 ? static_cast<int>(i) : static_cast<int>(rng.below(2)));
      }
      worst = std::max(worst, std::abs(clip_loss(m, b).loss - oracle::infonce_brute(brute_logits(m, b), b.prompts)));
    }
    const Tensor l = Tensor::matrix(n, n, rng.uniform(-2.0, 2.0));
    std::vector<int> p(n);
    std::iota(p.begin(), p.end(), 0);
    uniform_worst = std::max(uniform_worst, std::abs(symmetric_infonce(l, p).loss - std::log(static_cast<double>(n))));
  }
  o.detail << "max |loss - brute| " << worst << ", max |uniform - ln N| " << uniform_worst;
  o.require(worst < 1e-10, "brute force within 1e-10");
  o.require(uniform_worst < 1e-12, "ln N within 1e-12");
}

GaussianMoments moments(std::vector<double> mean, std::size_t d, std::vector<double> cov) {
  GaussianMoments g;
  g.mean = std::move(mean);
  g.cov = Tensor({d, d}, std::move(cov));
  return g;
}

// 5. Closed-form 2-Wasserstein cases derived by hand.
void w2_oracle(Outcome& o) {
  const auto I2 = GaussianMoments::standard(2);
  struct Case {
    GaussianMoments a, b;
    double want;
  };
  const std::vector<Case> cases{
      {I2, GaussianMoments::isotropic({0.5, 0.5}), std::sqrt(0.5)},
      {moments({0.0}, 1, {4.0}), moments({0.0}, 1, {1.0}), 1.0},
      {moments({1.0, -1.0, 0.0}, 3, {4, 0, 0, 0, 9, 0, 0, 0, 0.25}),
       moments({0.0, 1.0, 0.5}, 3, {1, 0, 0, 0, 16, 0, 0, 0, 1}), std::sqrt(5.25 + 2.25)},
      {I2, moments({0.0, 0.0}, 2, {2, 1, 1, 2}), std::sqrt(3.0) - 1.0},
      {moments({1.0, 0.0}, 2, {4, 0, 0, 1}), moments({0.0, 2.0}, 2, {2, 1, 1, 2}),
       std::sqrt(14.0 - 2.0 * std::sqrt(10.0 + 4.0 * std::sqrt(3.0)))},
  };
  double worst = 0.0;
  for (const auto& c : cases) {
    worst = std::max(worst, std::abs(gaussian_w2(c.a, c.b) - c.want));
    worst = std::max(worst, std::abs(gaussian_w2(c.b, c.a) - c.want));
  }
  o.detail << cases.size() << " cases, max abs err " << worst;
  o.require(worst < 1e-8, "within 1e-8");
}

struct Toy {
  const fixture::ToyDiffusion* toy = nullptr;
  double train_seconds = 0.0;
};

const Toy& toy() {
  static const Toy t = [] {
    const auto t0 = Clock::now();
    Toy r;
    r.toy = &fixture::toy_diffusion();
    r.train_seconds = seconds_since(t0);
    return r;
  }();
  return t;
}

// 6. 10-step invert then sample on 200 training images.
void round_trip(Outcome& o) {
  const auto t0 = Clock::now();
  const auto& t = *toy().toy;
  const Tensor all = t.data.images();
  const auto prompts = t.data.prompts();
  const std::size_t n = 200, d = all.cols();
  Tensor x = Tensor::matrix(n, d);
  std::copy(all.values().begin(), all.values().begin() + static_cast<std::ptrdiff_t>(n * d), x.data().begin());
  const std::vector<int> conds(prompts.begin(), prompts.begin() + static_cast<std::ptrdiff_t>(n));
  const SamplerConfig cfg;
  const Tensor back = ddim_sample(t.model, t.schedule, ddim_invert(t.model, t.schedule, x, conds, cfg), conds, cfg);
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
  const double secs = toy().train_seconds + seconds_since(t0);
  o.detail << "mse / variance " << mse / var << " (" << spacing_name(cfg.spacing) << " grid), " << secs
           << " s with training";
  o.require(mse < 0.05 * var, "mse < 5% of variance");
  o.require(secs < 120.0, "runtime < 2 min");
}

// 7. Conditional samples recognised by a nearest-class-mean classifier.
void fidelity(Outcome& o) {
  const auto& t = *toy().toy;
  const fixture::NearestMean ncm(t.data);
  SeededRng rng(7);
  const std::size_t n = 400, d = t.data.dim();
  Tensor z = Tensor::matrix(n, d);
  for (double& v : z.data()) v = rng.normal();
  std::vector<int> conds(n);
  for (std::size_t i = 0; i < n; ++i) conds[i] = static_cast<int>(i % static_cast<std::size_t>(t.data.num_classes));
  const Tensor x = ddim_sample(t.model, t.schedule, z, conds, SamplerConfig{});
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) hit += ncm.predict(x.row(i)) == conds[i] ? 1 : 0;
  const double f = static_cast<double>(hit) / static_cast<double>(n);
  o.detail << "fidelity " << f << " over " << n << " samples";
  o.require(f >= 0.9, "fidelity >= 0.9");
}

struct Sweep {
  Report report;
  double seconds = 0.0;
};

// Default-settings experiment over seeds 0..4 shared by criteria 8 to 10.
const Sweep& sweep() {
  static const Sweep s = [] {
    ExperimentConfig c;
    c.methods = {CellMethod::none, CellMethod::transport, CellMethod::random};
    c.rhos = {0.05, 0.5, 1.0};
    c.Ms = {10};
    c.seeds = {0, 1, 2, 3, 4};
    std::fprintf(stderr, "running %zu cells x %zu seeds\n", expand_cells(c).size(), c.seeds.size());
    const auto t0 = Clock::now();
    Sweep r{run_experiment(c), 0.0};
    r.seconds = seconds_since(t0);
    return r;
  }();
  return s;
}

std::vector<double> shifted(const CellSpec& spec) {
  const CellReport* c = sweep().report.find(spec);
  std::vector<double> v;
  if (c == nullptr) return v;
  for (const auto& s : c->seeds) v.push_back(s.ok() ? s.metrics.at(kShiftedMean) : std::nan(""));
  return v;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string join(const std::vector<double>& v) {
  std::ostringstream s;
  s.precision(4);
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? " " : "") << v[i];
  return s.str();
}

// 8. Transport-augmented training beats the baseline on the shifted domains.
void dg_gain(Outcome& o) {
  const auto base = shifted({CellMethod::none, 0.0, 0});
  const auto ours = shifted({CellMethod::transport, 0.5, 10});
  std::size_t wins = 0;
  for (std::size_t i = 0; i < std::min(base.size(), ours.size()); ++i) wins += ours[i] > base[i] ? 1 : 0;
  o.detail << "baseline " << mean(base) << " [" << join(base) << "], transport 0.5 " << mean(ours) << " [" << join(ours)
           << "], wins " << wins << "/5, " << sweep().seconds << " s";
  o.require(base.size() == 5 && ours.size() == 5, "all seeds present");
  o.require(mean(ours) > mean(base), "mean gain > 0");
  o.require(wins >= 4, "wins >= 4 of 5");
  o.require(sweep().seconds < 1200.0, "runtime < 20 min");
}

// 9. Transport beats the random transform at the same budget.
void ablation(Outcome& o) {
  const auto t = shifted({CellMethod::transport, 0.5, 10});
  const auto r = shifted({CellMethod::random, 0.5, 10});
  o.detail << "transport " << mean(t) << " [" << join(t) << "], random " << mean(r) << " [" << join(r) << "]";
  o.require(mean(t) > mean(r), "transport > random");
}

// 10. rho = 0.5 is at least as good as both ends of the sweep.
void rho_sweep(Outcome& o) {
  const auto vlo = shifted({CellMethod::transport, 0.05, 10});
  const auto vmid = shifted({CellMethod::transport, 0.5, 10});
  const auto vhi = shifted({CellMethod::transport, 1.0, 10});
  const double lo = mean(vlo), mid = mean(vmid), hi = mean(vhi);
  o.detail << "rho 0.05 " << lo << " [" << join(vlo) << "], 0.5 " << mid << ", 1.0 " << hi << " [" << join(vhi) << "]";
  o.require(mid >= lo && mid >= hi, "0.5 >= both ends");
}

// 11. Ascent with lambda 0 raises the loss; lambda 10 moves less.
void ada(Outcome& o) {
  const auto& t = *toy().toy;
  TrainConfig tc;
  tc.epochs = 10;
  tc.seed = 11;
  const ContrastiveModel model = train_baseline(t.data, tc).model;
  SeededRng rng(11);
  const auto batches = epoch_batches(t.data, 16, rng);
  AdaConfig free;
  free.lambda = 0.0;
  free.steps = 5;
  AdaConfig tight = free;
  tight.lambda = 10.0;
  std::size_t up = 0;
  double disp_free = 0.0, disp_tight = 0.0;
  for (const auto& idx : batches) {
    const auto b = make_batch(t.data, idx);
    const double before = clip_loss(model, b).loss;
    ClipBatch after = b;
    after.images = ada_perturb(model, b, free);
    up += clip_loss(model, after).loss > before ? 1 : 0;
    const Tensor tt = ada_perturb(model, b, tight);
    for (std::size_t k = 0; k < b.images.size(); ++k) {
      disp_free += (after.images[k] - b.images[k]) * (after.images[k] - b.images[k]);
      disp_tight += (tt[k] - b.images[k]) * (tt[k] - b.images[k]);
    }
  }
  const double frac = static_cast<double>(up) / static_cast<double>(batches.size());
  const double nb = static_cast<double>(batches.size());
  o.detail << "loss rose on " << frac << " of " << batches.size() << " batches; mean displacement " << disp_free / nb
           << " vs " << disp_tight / nb;
  o.require(frac >= 0.95, ">= 95% of batches");
  o.require(disp_tight < disp_free, "lambda 10 displacement smaller");
}

// 12. Two experiment invocations with one config give identical reports.
void determinism(Outcome& o) {
  const auto dir = oracle::scratch_dir("acceptance_det");
  binio::write_file(dir / "exp.json", R"({"n_train": 80, "n_test": 100, "diffusion_steps": 200,
    "diffusion_hidden": [32, 32], "transforms": ["none", "transport", "random"], "Ms": [2],
    "clip_epochs": 3, "seeds": [0, 1]})");
  int codes = 0;
  for (const char* sub : {"a", "b"}) {
    codes |= cli::cmd_experiment({"--config", (dir / "exp.json").string(), "--out", (dir / sub).string()});
  }
  const std::string a = binio::read_file(dir / "a" / "report.json");
  const std::string b = binio::read_file(dir / "b" / "report.json");
  o.detail << "report " << a.size() << " bytes, identical " << (a == b ? "yes" : "no");
  o.require(codes == 0, "both runs exit 0");
  o.require(a == b, "byte-identical report.json");
  o.require(binio::read_file(dir / "a" / "report.csv") == binio::read_file(dir / "b" / "report.csv"),
            "byte-identical report.csv");
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<void(Outcome&)> run;
  };
  const std::vector<Criterion> all{
      {1, "transport distance bound", transport_bound},
      {2, "transport anchor correlation", transport_correlation},
      {3, "gradient exactness", gradients},
      {4, "contrastive loss oracle", contrastive_oracle},
      {5, "gaussian W2 oracle", w2_oracle},
      {6, "ddim inversion round trip", round_trip},
      {7, "conditional fidelity", fidelity},
      {8, "domain generalization gain", dg_gain},
      {9, "transport vs random transform", ablation},
      {10, "rho sweep shape", rho_sweep},
      {11, "ada ascent and penalty", ada},
      {12, "experiment determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.contains(c.id)) continue;
    Outcome o;
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d failed\n", failed);
  return failed == 0 ? 0 : 1;
}
