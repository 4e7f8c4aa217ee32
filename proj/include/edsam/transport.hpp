#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "edsam/rng.hpp"
#include "edsam/tensor.hpp"

namespace edsam {

struct TransportRecord {
  double alpha = 0.0;
  double rho = 0.0;
  std::size_t source_id = 0;

  friend bool operator==(const TransportRecord&, const TransportRecord&) = default;
};

struct TransportResult {
  Tensor z_star;
  TransportRecord record;
};

// z* = (z + n) / sqrt(2) with n = alpha*sqrt(2)*1 + residual. Pure map; the
// residual is the zero-mean part of the transport noise.
Tensor transport_map(const Tensor& z, double alpha, std::span<const double> residual);

// Transport with a fixed alpha: residual ~ N(0, I) from rng.
Tensor transport_with_alpha(const Tensor& z, double alpha, SeededRng& rng);

// alpha ~ U(-rho, rho), n ~ N(alpha*sqrt(2)*1, I), z* = (z + n) / sqrt(2).
// rho == 0 forces alpha = 0.
TransportResult apply_transport(const Tensor& z, double rho, SeededRng& rng,
                                std::size_t source_id = 0);

// Ablation counterpart: z* ~ N(rho*1, I), independent of any source latent.
Tensor random_transform(double rho, std::size_t dim, SeededRng& rng);

struct GaussianMoments {
  std::vector<double> mean;
  Tensor cov;  // [d x d]

  std::size_t dim() const { return mean.size(); }
  static GaussianMoments standard(std::size_t dim);
  static GaussianMoments isotropic(std::vector<double> mean);
  void validate() const;
};

// Closed-form 2-Wasserstein distance between Gaussians:
// sqrt(|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)).
double gaussian_w2(const GaussianMoments& a, const GaussianMoments& b);

// gaussian_w2 / sqrt(d): the per-coordinate distance the rho budget bounds.
double normalized_latent_distance(const GaussianMoments& a, const GaussianMoments& b);

// Sample mean and unbiased covariance.
GaussianMoments estimate_moments(std::span<const Tensor> samples);
GaussianMoments estimate_moments(const Tensor& rows);  // [n x d]

// Streaming sums for moment and cross-correlation estimates; chunk results
// combine in a fixed order.
class MomentAccumulator {
 public:
  explicit MomentAccumulator(std::size_t dim);
  void add_rows(const Tensor& rows);
  void merge(const MomentAccumulator& other);
  std::size_t count() const { return count_; }
  GaussianMoments moments() const;

 private:
  std::size_t dim_;
  std::size_t count_ = 0;
  std::vector<double> sum_;
  std::vector<double> outer_;
};

struct AlphaStratum {
  double alpha = 0.0;
  double normalized_distance = 0.0;  // between N(0, I) and the stratum's moments
  double mean_max_abs_dev = 0.0;     // max_j |mean_j - alpha|
  double cov_max_abs_dev = 0.0;      // max_ij |cov_ij - I_ij|
  double anchor_correlation = 0.0;   // mean_j corr(z*_j, z_j)
  double anchor_corr_max_abs_dev = 0.0;  // max_j |corr_j - 1/sqrt(2)|
};

struct TransportCheckReport {
  double rho = 0.0;
  std::size_t dim = 0;
  std::size_t n = 0;
  std::vector<AlphaStratum> alpha_strata;
  // Pooled population with alpha redrawn per sample.
  double normalized_distance = 0.0;
  double pooled_max_alpha = 0.0;
  // Worst covariance deviation over the fixed-alpha strata.
  double cov_max_abs_dev = 0.0;
  double tolerance = 0.03;
  double cov_tolerance = 0.05;
  bool pass = false;

  nlohmann::json to_json() const;
};

// Draws z ~ N(0, I) and transports it in fixed-alpha strata (alpha in
// {-rho, 0, rho}) and with alpha redrawn per sample. Passes iff every
// distance is <= rho + tolerance and every stratum covariance is within
// cov_tolerance of I entrywise. Chunks of samples use independent streams
// derived from one draw of rng, so the result does not depend on threading.
TransportCheckReport verify_transport_bound(double rho, std::size_t dim, std::size_t n, SeededRng& rng,
                                       double tolerance = 0.03);

}  // namespace edsam
