#include "edsam/transport.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "edsam/error.hpp"
#include "edsam/kernels.hpp"

namespace edsam {

Tensor transport_map(const Tensor& z, double alpha, std::span<const double> residual) {
  if (residual.size() != z.size()) throw InvalidInput("transport_map: residual size != latent size");
  const double shift = alpha * std::numbers::sqrt2;
  Tensor out(z.shape());
  for (std::size_t k = 0; k < z.size(); ++k) {
    out[k] = (z[k] + shift + residual[k]) / std::numbers::sqrt2;
  }
  return out;
}

Tensor transport_with_alpha(const Tensor& z, double alpha, SeededRng& rng) {
  std::vector<double> residual(z.size());
  for (double& r : residual) r = rng.normal();
  return transport_map(z, alpha, residual);
}

TransportResult apply_transport(const Tensor& z, double rho, SeededRng& rng, std::size_t source_id) {
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw InvalidInput("apply_transport: rho must be >= 0");
  const double alpha = rho * rng.uniform(-1.0, 1.0);
  return {transport_with_alpha(z, alpha, rng), TransportRecord{alpha, rho, source_id}};
}

Tensor random_transform(double rho, std::size_t dim, SeededRng& rng) {
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw InvalidInput("random_transform: rho must be >= 0");
  Tensor out({dim});
  for (double& v : out.data()) v = rho + rng.normal();
  return out;
}

GaussianMoments GaussianMoments::standard(std::size_t dim) {
  GaussianMoments m{std::vector<double>(dim, 0.0), Tensor::matrix(dim, dim)};
  for (std::size_t i = 0; i < dim; ++i) m.cov.at(i, i) = 1.0;
  return m;
}

GaussianMoments GaussianMoments::isotropic(std::vector<double> mean) {
  auto m = standard(mean.size());
  m.mean = std::move(mean);
  return m;
}

namespace {

using Mat = Eigen::MatrixXd;

Mat to_eigen(const Tensor& t, std::size_t d) {
  Mat m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.at(i, j);
  }
  return m;
}

Mat psd_sqrt(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

void GaussianMoments::validate() const {
  const std::size_t d = mean.size();
  if (d == 0) throw InvalidInput("GaussianMoments: empty mean");
  if (cov.rank() != 2 || cov.dim(0) != d || cov.dim(1) != d) {
    throw InvalidInput("GaussianMoments: covariance must be d x d");
  }
  if (!cov.all_finite()) throw InvalidInput("GaussianMoments: non-finite covariance");
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      if (std::abs(cov.at(i, j) - cov.at(j, i)) > 1e-10) {
        throw InvalidInput("GaussianMoments: covariance is not symmetric");
      }
    }
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(to_eigen(cov, d), Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10) {
    throw InvalidInput("GaussianMoments: covariance is not positive semi-definite");
  }
}

double gaussian_w2(const GaussianMoments& a, const GaussianMoments& b) {
  a.validate();
  b.validate();
  const std::size_t d = a.dim();
  if (b.dim() != d) throw InvalidInput("gaussian_w2: dimension mismatch");
  double mean_sq = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = a.mean[k] - b.mean[k];
    mean_sq += diff * diff;
  }
  const Mat sa = to_eigen(a.cov, d);
  const Mat sb = to_eigen(b.cov, d);
  const Mat ra = psd_sqrt(sa);
  Mat cross = ra * sb * ra;
  cross = 0.5 * (cross + cross.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(cross, Eigen::EigenvaluesOnly);
  const double cross_trace = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double trace_term = sa.trace() + sb.trace() - 2.0 * cross_trace;
  return std::sqrt(std::max(0.0, mean_sq + trace_term));
}

double normalized_latent_distance(const GaussianMoments& a, const GaussianMoments& b) {
  if (a.dim() != b.dim()) throw InvalidInput("normalized_latent_distance: dimension mismatch");
  return gaussian_w2(a, b) / std::sqrt(static_cast<double>(a.dim()));
}

MomentAccumulator::MomentAccumulator(std::size_t dim)
    : dim_(dim), sum_(dim, 0.0), outer_(dim * dim, 0.0) {}

void MomentAccumulator::add_rows(const Tensor& rows) {
  if (rows.cols() != dim_) throw InvalidInput("MomentAccumulator: width mismatch");
  const std::size_t n = rows.rows();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < dim_; ++k) sum_[k] += rows.at(r, k);
  }
  kernels::accumulate_outer(n, dim_, rows.data(), outer_);
  count_ += n;
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  if (other.dim_ != dim_) throw InvalidInput("MomentAccumulator: merge width mismatch");
  for (std::size_t k = 0; k < dim_; ++k) sum_[k] += other.sum_[k];
  for (std::size_t k = 0; k < outer_.size(); ++k) outer_[k] += other.outer_[k];
  count_ += other.count_;
}

GaussianMoments MomentAccumulator::moments() const {
  if (count_ < 2) throw InvalidInput("estimate_moments: need at least 2 samples");
  const double n = static_cast<double>(count_);
  GaussianMoments m{std::vector<double>(dim_), Tensor::matrix(dim_, dim_)};
  for (std::size_t k = 0; k < dim_; ++k) m.mean[k] = sum_[k] / n;
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = 0; j < dim_; ++j) {
      m.cov.at(i, j) = (outer_[i * dim_ + j] - n * m.mean[i] * m.mean[j]) / (n - 1.0);
    }
  }
  return m;
}

GaussianMoments estimate_moments(const Tensor& rows) {
  if (rows.rows() < 2) throw InvalidInput("estimate_moments: need at least 2 samples");
  // Two-pass estimate; the accumulator's one-pass sums are reserved for the
  // large Monte-Carlo populations.
  const std::size_t n = rows.rows();
  const std::size_t d = rows.cols();
  GaussianMoments m{std::vector<double>(d, 0.0), Tensor::matrix(d, d)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < d; ++k) m.mean[k] += rows.at(r, k);
  }
  for (double& v : m.mean) v /= static_cast<double>(n);
  Tensor centered = Tensor::matrix(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < d; ++k) centered.at(r, k) = rows.at(r, k) - m.mean[k];
  }
  kernels::accumulate_outer(n, d, centered.data(), m.cov.data());
  for (double& v : m.cov.data()) v /= static_cast<double>(n - 1);
  return m;
}

GaussianMoments estimate_moments(std::span<const Tensor> samples) {
  if (samples.size() < 2) throw InvalidInput("estimate_moments: need at least 2 samples");
  return estimate_moments(stack_rows(samples));
}

nlohmann::json TransportCheckReport::to_json() const {
  nlohmann::json strata = nlohmann::json::array();
  for (const auto& s : alpha_strata) {
    strata.push_back({{"alpha", s.alpha},
                      {"normalized_distance", s.normalized_distance},
                      {"mean_max_abs_dev", s.mean_max_abs_dev},
                      {"cov_max_abs_dev", s.cov_max_abs_dev},
                      {"anchor_correlation", s.anchor_correlation},
                      {"anchor_corr_max_abs_dev", s.anchor_corr_max_abs_dev}});
  }
  return {{"rho", rho},
          {"dim", dim},
          {"n", n},
          {"alpha_strata", strata},
          {"normalized_distance", normalized_distance},
          {"pooled_max_alpha", pooled_max_alpha},
          {"cov_max_abs_dev", cov_max_abs_dev},
          {"tolerance", tolerance},
          {"cov_tolerance", cov_tolerance},
          {"pass", pass}};
}

namespace {

constexpr std::size_t kChunk = 4096;

struct ChunkStats {
  MomentAccumulator moments;
  std::vector<double> src_sum, src_sq, cross;
  double max_alpha = 0.0;

  explicit ChunkStats(std::size_t d) : moments(d), src_sum(d, 0.0), src_sq(d, 0.0), cross(d, 0.0) {}
};

// fixed_alpha == nullptr means alpha is redrawn per sample from U(-rho, rho).
ChunkStats run_chunk(std::uint64_t stream, std::size_t rows, std::size_t d, double rho,
                     const double* fixed_alpha) {
  SeededRng rng(stream);
  ChunkStats st(d);
  Tensor out = Tensor::matrix(rows, d);
  Tensor z({d});
  for (std::size_t r = 0; r < rows; ++r) {
    for (double& v : z.data()) v = rng.normal();
    Tensor zs;
    if (fixed_alpha != nullptr) {
      zs = transport_with_alpha(z, *fixed_alpha, rng);
    } else {
      auto res = apply_transport(z, rho, rng);
      st.max_alpha = std::max(st.max_alpha, std::abs(res.record.alpha));
      zs = std::move(res.z_star);
    }
    for (std::size_t k = 0; k < d; ++k) {
      out.at(r, k) = zs[k];
      st.src_sum[k] += z[k];
      st.src_sq[k] += z[k] * z[k];
      st.cross[k] += z[k] * zs[k];
    }
  }
  st.moments.add_rows(out);
  return st;
}

struct Population {
  GaussianMoments moments;
  std::vector<double> corr;
  double max_alpha = 0.0;
};

Population run_population(std::uint64_t base, std::uint64_t tag, std::size_t n, std::size_t d,
                          double rho, const double* fixed_alpha) {
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<ChunkStats> parts(chunks, ChunkStats(d));
  const auto nc = static_cast<long long>(chunks);
#pragma omp parallel for schedule(dynamic, 1)
  for (long long c = 0; c < nc; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const std::size_t rows = std::min(kChunk, n - ci * kChunk);
    parts[ci] = run_chunk(derive_seed(base, {tag, ci}), rows, d, rho, fixed_alpha);
  }
  ChunkStats total(d);
  for (const auto& p : parts) {
    total.moments.merge(p.moments);
    for (std::size_t k = 0; k < d; ++k) {
      total.src_sum[k] += p.src_sum[k];
      total.src_sq[k] += p.src_sq[k];
      total.cross[k] += p.cross[k];
    }
    total.max_alpha = std::max(total.max_alpha, p.max_alpha);
  }
  Population pop{total.moments.moments(), std::vector<double>(d), total.max_alpha};
  const double nn = static_cast<double>(n);
  for (std::size_t k = 0; k < d; ++k) {
    const double mz = total.src_sum[k] / nn;
    const double vz = (total.src_sq[k] - nn * mz * mz) / (nn - 1.0);
    const double cov = (total.cross[k] - nn * mz * pop.moments.mean[k]) / (nn - 1.0);
    pop.corr[k] = cov / std::sqrt(vz * pop.moments.cov.at(k, k));
  }
  return pop;
}

}  // namespace

TransportCheckReport verify_transport_bound(double rho, std::size_t dim, std::size_t n, SeededRng& rng,
                                       double tolerance) {
  if (!(rho >= 0.0)) throw InvalidInput("verify_transport_bound: rho must be >= 0");
  if (dim == 0) throw InvalidInput("verify_transport_bound: dim must be >= 1");
  if (n < 10000) throw InvalidInput("verify_transport_bound: n must be >= 10^4");
  TransportCheckReport rep;
  rep.rho = rho;
  rep.dim = dim;
  rep.n = n;
  rep.tolerance = tolerance;
  const std::uint64_t base = rng.next_u64();
  const auto reference = GaussianMoments::standard(dim);

  const double alphas[] = {-rho, 0.0, rho};
  bool ok = true;
  for (std::size_t s = 0; s < 3; ++s) {
    const double alpha = alphas[s];
    const auto pop = run_population(base, s + 1, n, dim, rho, &alpha);
    AlphaStratum st;
    st.alpha = alpha;
    st.normalized_distance = normalized_latent_distance(reference, pop.moments);
    for (std::size_t i = 0; i < dim; ++i) {
      st.mean_max_abs_dev = std::max(st.mean_max_abs_dev, std::abs(pop.moments.mean[i] - alpha));
      for (std::size_t j = 0; j < dim; ++j) {
        const double target = i == j ? 1.0 : 0.0;
        st.cov_max_abs_dev = std::max(st.cov_max_abs_dev, std::abs(pop.moments.cov.at(i, j) - target));
      }
      st.anchor_correlation += pop.corr[i] / static_cast<double>(dim);
      st.anchor_corr_max_abs_dev =
          std::max(st.anchor_corr_max_abs_dev, std::abs(pop.corr[i] - 1.0 / std::numbers::sqrt2));
    }
    rep.cov_max_abs_dev = std::max(rep.cov_max_abs_dev, st.cov_max_abs_dev);
    ok = ok && st.normalized_distance <= rho + tolerance && st.cov_max_abs_dev <= rep.cov_tolerance;
    rep.alpha_strata.push_back(st);
  }
  const auto pooled = run_population(base, 0, n, dim, rho, nullptr);
  rep.normalized_distance = normalized_latent_distance(reference, pooled.moments);
  rep.pooled_max_alpha = pooled.max_alpha;
  ok = ok && rep.normalized_distance <= rho + tolerance && rep.pooled_max_alpha <= rho;
  rep.pass = ok;
  return rep;
}

}  // namespace edsam
