#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "edsam/advdataset.hpp"
#include "edsam/datagen.hpp"
#include "edsam/mlp.hpp"
#include "edsam/tensor.hpp"

namespace edsam {

inline constexpr std::size_t kEmbedWidth = 16;
inline constexpr double kInitialTemperature = 0.07;
inline constexpr double kMinTemperature = 0.01;
inline constexpr double kMaxTemperature = 1.0;

// Two-tower model: an MLP image encoder 64 -> 64 -> 32 -> 16 and a K x 16
// prompt table, both unit-normalized on read, with a log-parameterized
// temperature.
struct ContrastiveModel {
  MlpParams encoder;
  Tensor prompt_table;  // [K x kEmbedWidth], raw (unnormalized) rows
  double log_tau = 0.0;
  int num_classes = 0;

  double tau() const;
};

ContrastiveModel make_contrastive_model(int num_classes, std::size_t input_dim, std::uint64_t seed);

// L2-normalized embeddings, [n x 16].
Tensor encode_images(const ContrastiveModel& model, const Tensor& images);
Tensor encode_image(const ContrastiveModel& model, const Tensor& image);
Tensor prompt_embeddings(const ContrastiveModel& model);

struct ClipBatch {
  Tensor images;             // [n x d]
  std::vector<int> prompts;  // length n
};

ClipBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices);

struct LogitLoss {
  double loss = 0.0;
  Tensor grad_logits;
};

// Symmetric InfoNCE over an n x n logit matrix whose diagonal holds the
// positives. A pair (i, j), i != j, whose prompt ids coincide is a false
// negative and is left out of both softmax denominators.
LogitLoss symmetric_infonce(const Tensor& logits, std::span<const int> prompts);

struct ClipGradients {
  MlpParams encoder;
  Tensor prompt_table;
  double log_tau = 0.0;
  Tensor images;  // d loss / d input images
};

struct ClipLossResult {
  double loss = 0.0;
  ClipGradients grads;
};

// 0.5 (image->prompt + prompt->image) InfoNCE with cosine / tau logits.
ClipLossResult clip_loss(const ContrastiveModel& model, const ClipBatch& batch);

// clip_loss(real) + clip_loss(adv) with summed parameter gradients.
ClipLossResult joint_clip_loss(const ContrastiveModel& model, const ClipBatch& real,
                               const ClipBatch& adv);

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;
  bool adversarial_mix = false;

  void validate() const;
};

struct TrainResult {
  ContrastiveModel model;
  std::vector<double> loss_trace;
};

// Index batches for one epoch. batch <= K: every batch holds distinct
// classes. Otherwise a shuffled partition (duplicates are masked in the loss).
std::vector<std::vector<std::size_t>> epoch_batches(const Dataset& ds, std::size_t batch_size,
                                                    SeededRng& rng);

TrainResult train_baseline(const Dataset& dataset, const TrainConfig& config);
TrainResult train_baseline(ContrastiveModel init, const Dataset& dataset, const TrainConfig& config);

// Every step pairs a real batch with one uniformly drawn variant of each of
// its sources and minimizes the sum of both contrastive losses.
TrainResult train_edsam(const Dataset& real, const AdvDataset& adv, const TrainConfig& config);

// Argmax cosine similarity over prompts; ties go to the lowest id.
std::vector<int> zero_shot_predict(const ContrastiveModel& model, const Tensor& images);
double zero_shot(const ContrastiveModel& model, const Dataset& dataset);

struct ProbeConfig {
  double learning_rate = 2.0;
  std::size_t max_iterations = 10000;
  double grad_tolerance = 1e-6;
};

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t iterations = 0;
};

// Multinomial logistic regression on fixed features by full-batch gradient
// descent.
ProbeResult fit_linear_probe(const Tensor& train_features, std::span<const int> train_labels,
                             const Tensor& test_features, std::span<const int> test_labels,
                             int num_classes, const ProbeConfig& config = {});
ProbeResult linear_probe_detail(const ContrastiveModel& model, const Dataset& train,
                                const Dataset& test, const ProbeConfig& config = {});
double linear_probe(const ContrastiveModel& model, const Dataset& train, const Dataset& test);

// <base>.bin holds the encoder; <base>.json holds K, dims, tau and the
// prompt table.
void save_contrastive(const std::filesystem::path& base, const ContrastiveModel& model);
ContrastiveModel load_contrastive(const std::filesystem::path& base);

}  // namespace edsam
