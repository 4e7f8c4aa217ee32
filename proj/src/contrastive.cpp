#include "edsam/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "edsam/adam.hpp"
#include "edsam/binio.hpp"
#include "edsam/error.hpp"

namespace edsam {

double ContrastiveModel::tau() const { return std::exp(log_tau); }

ContrastiveModel make_contrastive_model(int num_classes, std::size_t input_dim, std::uint64_t seed) {
  if (num_classes < 2) throw InvalidInput("contrastive model needs >= 2 classes");
  SeededRng rng(derive_seed(seed, {0xC11BULL}));
  ContrastiveModel m;
  m.encoder = MlpParams::init(MlpSpec::uniform({input_dim, 64, 32, kEmbedWidth}, Activation::gelu), rng);
  m.prompt_table = Tensor::matrix(static_cast<std::size_t>(num_classes), kEmbedWidth);
  for (double& v : m.prompt_table.data()) v = rng.normal();
  m.log_tau = std::log(kInitialTemperature);
  m.num_classes = num_classes;
  return m;
}

namespace {

// Row-wise unit normalization; returns the pre-normalization norms.
std::vector<double> normalize_rows(Tensor& t) {
  std::vector<double> norms(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    const double n = std::sqrt(sq);
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericalError("cannot normalize a zero or non-finite embedding");
    for (double& v : row) v /= n;
    norms[r] = n;
  }
  return norms;
}

// Back through y = h / |h|: dh = (dy - y (y . dy)) / |h|.
void normalize_backward(std::span<const double> y, double norm, std::span<const double> dy,
                        std::span<double> dh) {
  double dot = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) dot += y[k] * dy[k];
  for (std::size_t k = 0; k < y.size(); ++k) dh[k] = (dy[k] - y[k] * dot) / norm;
}

Tensor batch_rows(const Tensor& images) {
  if (images.rank() == 1) return Tensor({1, images.size()}, images.values());
  return images;
}

}  // namespace

Tensor encode_images(const ContrastiveModel& model, const Tensor& images) {
  const Tensor x = batch_rows(images);
  if (x.cols() != model.encoder.spec().input_width()) {
    throw InvalidInput("encode_images: image width " + std::to_string(x.cols()) + " != encoder input width " +
                       std::to_string(model.encoder.spec().input_width()));
  }
  auto acts = mlp_forward(model.encoder, x);
  Tensor emb = std::move(acts.pre.back());
  normalize_rows(emb);
  return emb;
}

Tensor encode_image(const ContrastiveModel& model, const Tensor& image) {
  Tensor e = encode_images(model, image);
  return Tensor({e.cols()}, e.values());
}

Tensor prompt_embeddings(const ContrastiveModel& model) {
  Tensor p = model.prompt_table;
  normalize_rows(p);
  return p;
}

ClipBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  ClipBatch b;
  const std::size_t d = ds.dim();
  b.images = Tensor::matrix(indices.size(), d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& s = ds.samples.at(indices[r]);
    std::copy(s.image.data().begin(), s.image.data().end(), b.images.row(r).begin());
    b.prompts.push_back(s.prompt);
  }
  return b;
}

LogitLoss symmetric_infonce(const Tensor& logits, std::span<const int> prompts) {
  const std::size_t n = prompts.size();
  if (n < 2) throw InvalidInput("contrastive loss needs a batch of at least 2");
  if (logits.rank() != 2 || logits.rows() != n || logits.cols() != n) {
    throw InvalidInput("symmetric_infonce: logits must be n x n");
  }
  const auto valid = [&](std::size_t i, std::size_t j) { return i == j || prompts[i] != prompts[j]; };
  LogitLoss out{0.0, Tensor::matrix(n, n)};
  const double w = 0.5 / static_cast<double>(n);
  std::vector<double> p(n);
  // image -> prompt (rows)
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (valid(i, j)) mx = std::max(mx, logits.at(i, j));
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = valid(i, j) ? std::exp(logits.at(i, j) - mx) : 0.0;
      z += p[j];
    }
    out.loss += w * (mx + std::log(z) - logits.at(i, i));
    for (std::size_t j = 0; j < n; ++j) {
      out.grad_logits.at(i, j) += w * (p[j] / z - (i == j ? 1.0 : 0.0));
    }
  }
  // prompt -> image (columns)
  for (std::size_t j = 0; j < n; ++j) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) {
      if (valid(i, j)) mx = std::max(mx, logits.at(i, j));
    }
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = valid(i, j) ? std::exp(logits.at(i, j) - mx) : 0.0;
      z += p[i];
    }
    out.loss += w * (mx + std::log(z) - logits.at(j, j));
    for (std::size_t i = 0; i < n; ++i) {
      out.grad_logits.at(i, j) += w * (p[i] / z - (i == j ? 1.0 : 0.0));
    }
  }
  return out;
}

ClipLossResult clip_loss(const ContrastiveModel& model, const ClipBatch& batch) {
  const Tensor x = batch_rows(batch.images);
  const std::size_t n = x.rows();
  if (n < 2) throw InvalidInput("clip_loss: batch of 1 has no negatives");
  if (batch.prompts.size() != n) throw InvalidInput("clip_loss: one prompt per image required");
  for (int p : batch.prompts) {
    if (p < 0 || p >= model.num_classes) throw InvalidInput("clip_loss: prompt id out of range");
  }
  if (x.cols() != model.encoder.spec().input_width()) throw InvalidInput("clip_loss: image width mismatch");

  const auto acts = mlp_forward(model.encoder, x);
  Tensor f = acts.output();
  const auto f_norms = normalize_rows(f);
  Tensor g = model.prompt_table;
  const auto g_norms = normalize_rows(g);

  const double tau = model.tau();
  Tensor logits = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto gj = g.row(static_cast<std::size_t>(batch.prompts[j]));
      double dot = 0.0;
      for (std::size_t k = 0; k < kEmbedWidth; ++k) dot += f.at(i, k) * gj[k];
      logits.at(i, j) = dot / tau;
    }
  }
  auto ll = symmetric_infonce(logits, batch.prompts);

  ClipLossResult res;
  res.loss = ll.loss;
  double dlog_tau = 0.0;
  Tensor df = Tensor::matrix(n, kEmbedWidth);
  Tensor dg = Tensor::matrix(g.rows(), kEmbedWidth);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double gs = ll.grad_logits.at(i, j);
      if (gs == 0.0) continue;
      dlog_tau -= gs * logits.at(i, j);
      const double gd = gs / tau;
      const std::size_t c = static_cast<std::size_t>(batch.prompts[j]);
      for (std::size_t k = 0; k < kEmbedWidth; ++k) {
        df.at(i, k) += gd * g.at(c, k);
        dg.at(c, k) += gd * f.at(i, k);
      }
    }
  }
  Tensor dh = Tensor::matrix(n, kEmbedWidth);
  for (std::size_t i = 0; i < n; ++i) normalize_backward(f.row(i), f_norms[i], df.row(i), dh.row(i));
  res.grads.prompt_table = Tensor(model.prompt_table.shape());
  for (std::size_t c = 0; c < g.rows(); ++c) {
    normalize_backward(g.row(c), g_norms[c], dg.row(c), res.grads.prompt_table.row(c));
  }
  auto eg = mlp_backward(model.encoder, acts, dh);
  res.grads.encoder = std::move(eg.params);
  res.grads.images = std::move(eg.input);
  res.grads.log_tau = dlog_tau;
  return res;
}

ClipLossResult joint_clip_loss(const ContrastiveModel& model, const ClipBatch& real,
                               const ClipBatch& adv) {
  auto a = clip_loss(model, real);
  const auto b = clip_loss(model, adv);
  a.loss += b.loss;
  auto av = a.grads.encoder.values();
  auto bv = b.grads.encoder.values();
  for (std::size_t k = 0; k < av.size(); ++k) av[k] += bv[k];
  for (std::size_t k = 0; k < a.grads.prompt_table.size(); ++k) {
    a.grads.prompt_table[k] += b.grads.prompt_table[k];
  }
  a.grads.log_tau += b.grads.log_tau;
  a.grads.images = Tensor();
  return a;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw InvalidInput("TrainConfig: batch_size must be >= 2");
  if (!(learning_rate >= 0.0)) throw InvalidInput("TrainConfig: learning_rate must be >= 0");
}

std::vector<std::vector<std::size_t>> epoch_batches(const Dataset& ds, std::size_t batch_size,
                                                    SeededRng& rng) {
  const std::size_t n = ds.samples.size();
  std::vector<std::vector<std::size_t>> batches;
  const auto K = static_cast<std::size_t>(ds.num_classes);
  if (batch_size <= K) {
    std::vector<std::vector<std::size_t>> by_class(K);
    for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(ds.samples[i].prompt)].push_back(i);
    for (auto& q : by_class) {
      for (std::size_t i = q.size(); i-- > 1;) std::swap(q[i], q[rng.below(i + 1)]);
    }
    std::vector<std::size_t> cursor(K, 0);
    std::vector<std::size_t> order(K);
    while (true) {
      std::vector<std::size_t> open;
      for (std::size_t c = 0; c < K; ++c) {
        if (cursor[c] < by_class[c].size()) open.push_back(c);
      }
      if (open.size() < std::max<std::size_t>(2, std::min(batch_size, K))) break;
      for (std::size_t i = open.size(); i-- > 1;) std::swap(open[i], open[rng.below(i + 1)]);
      std::vector<std::size_t> b;
      for (std::size_t k = 0; k < batch_size && k < open.size(); ++k) b.push_back(by_class[open[k]][cursor[open[k]]++]);
      batches.push_back(std::move(b));
    }
    return batches;
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start < 2) break;
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

namespace {

struct Optimizers {
  AdamState encoder, prompts, tau;

  Optimizers(const ContrastiveModel& m, double lr)
      : encoder(m.encoder.values().size(), AdamConfig{lr}),
        prompts(m.prompt_table.size(), AdamConfig{lr}),
        tau(1, AdamConfig{lr}) {}

  void step(ContrastiveModel& m, const ClipGradients& g) {
    adam_step(encoder, m.encoder.values(), g.encoder.values());
    adam_step(prompts, m.prompt_table.data(), g.prompt_table.data());
    double lt[] = {m.log_tau};
    const double glt[] = {g.log_tau};
    adam_step(tau, lt, glt);
    m.log_tau = std::clamp(lt[0], std::log(kMinTemperature), std::log(kMaxTemperature));
  }
};

void check_loss(double loss, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw NumericalError("contrastive training diverged at step " + std::to_string(step));
  }
}

// Contiguous [begin, end) entry ranges per source index.
std::vector<std::pair<std::size_t, std::size_t>> source_ranges(const AdvDataset& adv,
                                                               std::size_t num_sources) {
  std::vector<std::pair<std::size_t, std::size_t>> ranges(num_sources, {0, 0});
  std::size_t i = 0;
  while (i < adv.entries.size()) {
    const std::size_t s = adv.entries[i].source;
    if (s >= num_sources) throw InvalidInput("train_edsam: adversarial entry refers to an unknown source");
    std::size_t j = i;
    while (j < adv.entries.size() && adv.entries[j].source == s) ++j;
    ranges[s] = {i, j};
    i = j;
  }
  return ranges;
}

}  // namespace

TrainResult train_baseline(const Dataset& dataset, const TrainConfig& config) {
  return train_baseline(make_contrastive_model(dataset.num_classes, dataset.dim(), config.seed), dataset,
                        config);
}

TrainResult train_baseline(ContrastiveModel init, const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  TrainResult out{std::move(init), {}};
  Optimizers opt(out.model, config.learning_rate);
  SeededRng batch_rng(derive_seed(config.seed, {0xBA7CULL}));
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(dataset, config.batch_size, batch_rng)) {
      const auto res = clip_loss(out.model, make_batch(dataset, idx));
      check_loss(res.loss, step++);
      out.loss_trace.push_back(res.loss);
      opt.step(out.model, res.grads);
    }
  }
  return out;
}

TrainResult train_edsam(const Dataset& real, const AdvDataset& adv, const TrainConfig& config) {
  config.validate();
  if (adv.empty()) {
    throw InvalidInput("train_edsam: adversarial set is empty; use train_baseline instead");
  }
  if (adv.dim != real.dim()) throw InvalidInput("train_edsam: adversarial image dim differs from real");
  const auto ranges = source_ranges(adv, real.samples.size());
  for (const auto& e : adv.entries) {
    if (e.prompt != real.samples[e.source].prompt) {
      throw InvalidInput("train_edsam: adversarial entry prompt differs from its source prompt");
    }
  }
  TrainResult out{make_contrastive_model(real.num_classes, real.dim(), config.seed), {}};
  Optimizers opt(out.model, config.learning_rate);
  SeededRng batch_rng(derive_seed(config.seed, {0xBA7CULL}));
  SeededRng variant_rng(derive_seed(config.seed, {0xAD5ULL}));
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(real, config.batch_size, batch_rng)) {
      ClipBatch adv_batch;
      adv_batch.images = Tensor::matrix(idx.size(), adv.dim);
      std::size_t rows = 0;
      for (std::size_t s : idx) {
        const auto [begin, end] = ranges[s];
        if (begin == end) continue;
        const auto& e = adv.entries[begin + variant_rng.below(end - begin)];
        std::copy(e.image.data().begin(), e.image.data().end(), adv_batch.images.row(rows).begin());
        adv_batch.prompts.push_back(e.prompt);
        ++rows;
      }
      adv_batch.images = Tensor({rows, adv.dim},
                                std::vector<double>(adv_batch.images.values().begin(),
                                                    adv_batch.images.values().begin() +
                                                        static_cast<std::ptrdiff_t>(rows * adv.dim)));
      const ClipBatch real_batch = make_batch(real, idx);
      ClipLossResult res = rows >= 2 ? joint_clip_loss(out.model, real_batch, adv_batch)
                                     : clip_loss(out.model, real_batch);
      check_loss(res.loss, step++);
      out.loss_trace.push_back(res.loss);
      opt.step(out.model, res.grads);
    }
  }
  return out;
}

std::vector<int> zero_shot_predict(const ContrastiveModel& model, const Tensor& images) {
  const Tensor f = encode_images(model, images);
  const Tensor g = prompt_embeddings(model);
  std::vector<int> pred(f.rows());
  for (std::size_t i = 0; i < f.rows(); ++i) {
    int best = 0;
    double best_sim = -INFINITY;
    for (std::size_t c = 0; c < g.rows(); ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < kEmbedWidth; ++k) s += f.at(i, k) * g.at(c, k);
      if (s > best_sim) {
        best_sim = s;
        best = static_cast<int>(c);
      }
    }
    pred[i] = best;
  }
  return pred;
}

double zero_shot(const ContrastiveModel& model, const Dataset& dataset) {
  if (dataset.num_classes != model.num_classes) throw InvalidInput("zero_shot: class count mismatch");
  const auto pred = zero_shot_predict(model, dataset.images());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == dataset.samples[i].prompt ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

namespace {

double probe_accuracy(const std::vector<double>& w, std::size_t f, std::size_t K, const Tensor& x,
                      std::span<const int> y) {
  std::size_t hit = 0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    int best = 0;
    double best_s = -INFINITY;
    for (std::size_t c = 0; c < K; ++c) {
      double s = w[f * K + c];
      for (std::size_t k = 0; k < f; ++k) s += x.at(r, k) * w[k * K + c];
      if (s > best_s) {
        best_s = s;
        best = static_cast<int>(c);
      }
    }
    hit += best == y[r] ? 1 : 0;
  }
  return x.rows() == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(x.rows());
}

}  // namespace

ProbeResult fit_linear_probe(const Tensor& train_x, std::span<const int> train_y, const Tensor& test_x,
                             std::span<const int> test_y, int num_classes, const ProbeConfig& config) {
  const std::size_t n = train_x.rows();
  const std::size_t f = train_x.cols();
  const auto K = static_cast<std::size_t>(num_classes);
  if (train_y.size() != n || test_y.size() != test_x.rows()) throw InvalidInput("linear probe: label count mismatch");
  // w is [(f + 1) x K]; the last row is the bias.
  std::vector<double> w((f + 1) * K, 0.0);
  std::vector<double> grad(w.size());
  std::vector<double> p(K);
  ProbeResult res;
  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      double mx = -INFINITY;
      for (std::size_t c = 0; c < K; ++c) {
        double s = w[f * K + c];
        for (std::size_t k = 0; k < f; ++k) s += train_x.at(r, k) * w[k * K + c];
        p[c] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (double& v : p) z += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < K; ++c) {
        const double d = (p[c] / z - (static_cast<int>(c) == train_y[r] ? 1.0 : 0.0)) / static_cast<double>(n);
        for (std::size_t k = 0; k < f; ++k) grad[k * K + c] += d * train_x.at(r, k);
        grad[f * K + c] += d;
      }
    }
    double gn = 0.0;
    for (double g : grad) gn += g * g;
    res.iterations = it + 1;
    if (std::sqrt(gn) < config.grad_tolerance) break;
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= config.learning_rate * grad[k];
  }
  res.train_accuracy = probe_accuracy(w, f, K, train_x, train_y);
  res.test_accuracy = probe_accuracy(w, f, K, test_x, test_y);
  return res;
}

ProbeResult linear_probe_detail(const ContrastiveModel& model, const Dataset& train, const Dataset& test,
                                const ProbeConfig& config) {
  const auto ytr = train.prompts();
  const auto yte = test.prompts();
  return fit_linear_probe(encode_images(model, train.images()), ytr, encode_images(model, test.images()), yte,
                          model.num_classes, config);
}

double linear_probe(const ContrastiveModel& model, const Dataset& train, const Dataset& test) {
  return linear_probe_detail(model, train, test).test_accuracy;
}

void save_contrastive(const std::filesystem::path& base, const ContrastiveModel& model) {
  auto bin = base;
  bin += ".bin";
  auto side = base;
  side += ".json";
  save_mlp(bin, model.encoder);
  const nlohmann::json j{{"format", "edsam-contrastive"},
                         {"version", 1},
                         {"K", model.num_classes},
                         {"dims", model.encoder.spec().widths},
                         {"embed_dim", kEmbedWidth},
                         {"tau", model.tau()},
                         {"log_tau", model.log_tau},
                         {"prompt_table", model.prompt_table.values()}};
  binio::write_file(side, j.dump(2) + "\n");
}

ContrastiveModel load_contrastive(const std::filesystem::path& base) {
  auto bin = base;
  bin += ".bin";
  auto side = base;
  side += ".json";
  const std::string text = binio::read_file(side);
  ContrastiveModel m;
  m.encoder = load_mlp(bin);
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "edsam-contrastive") throw ParseError("contrastive sidecar: wrong format tag");
    if (j.at("version") != 1) {
      throw UnsupportedVersion("contrastive sidecar: unsupported version " + j.at("version").dump());
    }
    m.num_classes = j.at("K");
    m.log_tau = j.at("log_tau");
    m.prompt_table = Tensor({static_cast<std::size_t>(m.num_classes), kEmbedWidth},
                            j.at("prompt_table").get<std::vector<double>>());
    if (j.at("dims").get<std::vector<std::size_t>>() != m.encoder.spec().widths) {
      throw ParseError("contrastive checkpoint: encoder widths disagree with sidecar");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("contrastive sidecar: ") + e.what());
  } catch (const InvalidInput& e) {
    throw ParseError(std::string("contrastive sidecar: ") + e.what());
  }
  return m;
}

}  // namespace edsam
