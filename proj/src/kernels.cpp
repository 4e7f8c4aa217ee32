#include "edsam/kernels.hpp"

#include <algorithm>
#include <vector>

#if defined(EDSAM_HAVE_OPENMP)
#include <omp.h>
#endif

namespace edsam::kernels {

namespace {

// Shared loop bodies. Inner loops run over contiguous output columns and only
// ever accumulate one product per element per iteration.

void forward_rows(LinearDims d, std::size_t r0, std::size_t r1, const double* x, const double* w,
                  const double* b, double* y) {
  for (std::size_t r = r0; r < r1; ++r) {
    const double* xr = x + r * d.in;
    double* yr = y + r * d.out;
    for (std::size_t o = 0; o < d.out; ++o) yr[o] = b[o];
    for (std::size_t k = 0; k < d.in; ++k) {
      const double a = xr[k];
      const double* wk = w + k * d.out;
      for (std::size_t o = 0; o < d.out; ++o) yr[o] += a * wk[o];
    }
  }
}

void params_cols(LinearDims d, std::size_t k0, std::size_t k1, bool with_bias, const double* dy,
                 const double* x, double* dw, double* db) {
  for (std::size_t r = 0; r < d.rows; ++r) {
    const double* xr = x + r * d.in;
    const double* dyr = dy + r * d.out;
    if (with_bias) {
      for (std::size_t o = 0; o < d.out; ++o) db[o] += dyr[o];
    }
    for (std::size_t k = k0; k < k1; ++k) {
      const double a = xr[k];
      double* dwk = dw + k * d.out;
      for (std::size_t o = 0; o < d.out; ++o) dwk[o] += a * dyr[o];
    }
  }
}

std::vector<double> transpose(LinearDims d, const double* w) {
  std::vector<double> wt(d.in * d.out);
  for (std::size_t k = 0; k < d.in; ++k) {
    for (std::size_t o = 0; o < d.out; ++o) wt[o * d.in + k] = w[k * d.out + o];
  }
  return wt;
}

void input_rows(LinearDims d, std::size_t r0, std::size_t r1, const double* dy, const double* wt,
                double* dx) {
  for (std::size_t r = r0; r < r1; ++r) {
    const double* dyr = dy + r * d.out;
    double* dxr = dx + r * d.in;
    for (std::size_t k = 0; k < d.in; ++k) dxr[k] = 0.0;
    for (std::size_t o = 0; o < d.out; ++o) {
      const double g = dyr[o];
      const double* wo = wt + o * d.in;
      for (std::size_t k = 0; k < d.in; ++k) dxr[k] += g * wo[k];
    }
  }
}

void outer_rows(std::size_t rows, std::size_t dim, std::size_t i0, std::size_t i1, const double* x,
                double* s) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * dim;
    for (std::size_t i = i0; i < i1; ++i) {
      const double xi = xr[i];
      double* si = s + i * dim;
      for (std::size_t j = i; j < dim; ++j) si[j] += xi * xr[j];
    }
  }
}

void mirror_upper(std::size_t dim, double* s) {
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < i; ++j) s[i * dim + j] = s[j * dim + i];
  }
}

}  // namespace

namespace serial {

void linear_forward(LinearDims d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  forward_rows(d, 0, d.rows, x.data(), w.data(), b.data(), y.data());
}

void linear_backward_params(LinearDims d, std::span<const double> dy, std::span<const double> x,
                            std::span<double> dw, std::span<double> db) {
  params_cols(d, 0, d.in, true, dy.data(), x.data(), dw.data(), db.data());
}

void linear_backward_input(LinearDims d, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
  const auto wt = transpose(d, w.data());
  input_rows(d, 0, d.rows, dy.data(), wt.data(), dx.data());
}

void accumulate_outer(std::size_t rows, std::size_t dim, std::span<const double> x,
                      std::span<double> s) {
  outer_rows(rows, dim, 0, dim, x.data(), s.data());
  mirror_upper(dim, s.data());
}

}  // namespace serial

namespace parallel {

namespace {
constexpr std::size_t kBlock = 8;

long long blocks(std::size_t n) { return static_cast<long long>((n + kBlock - 1) / kBlock); }
}  // namespace

void linear_forward(LinearDims d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  const long long nb = blocks(d.rows);
#pragma omp parallel for schedule(static)
  for (long long blk = 0; blk < nb; ++blk) {
    const std::size_t r0 = static_cast<std::size_t>(blk) * kBlock;
    forward_rows(d, r0, std::min(d.rows, r0 + kBlock), x.data(), w.data(), b.data(), y.data());
  }
}

void linear_backward_params(LinearDims d, std::span<const double> dy, std::span<const double> x,
                            std::span<double> dw, std::span<double> db) {
  const long long nb = blocks(d.in);
#pragma omp parallel for schedule(static)
  for (long long blk = 0; blk < nb; ++blk) {
    const std::size_t k0 = static_cast<std::size_t>(blk) * kBlock;
    params_cols(d, k0, std::min(d.in, k0 + kBlock), blk == 0, dy.data(), x.data(), dw.data(),
                db.data());
  }
}

void linear_backward_input(LinearDims d, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
  const auto wt = transpose(d, w.data());
  const long long nb = blocks(d.rows);
#pragma omp parallel for schedule(static)
  for (long long blk = 0; blk < nb; ++blk) {
    const std::size_t r0 = static_cast<std::size_t>(blk) * kBlock;
    input_rows(d, r0, std::min(d.rows, r0 + kBlock), dy.data(), wt.data(), dx.data());
  }
}

void accumulate_outer(std::size_t rows, std::size_t dim, std::span<const double> x,
                      std::span<double> s) {
  const auto dims = static_cast<long long>(dim);
#pragma omp parallel for schedule(dynamic, 1)
  for (long long i = 0; i < dims; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    outer_rows(rows, dim, ii, ii + 1, x.data(), s.data());
  }
  mirror_upper(dim, s.data());
}

}  // namespace parallel

int max_threads() {
#if defined(EDSAM_HAVE_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

bool parallel_enabled() { return max_threads() > 1; }

namespace {
constexpr std::size_t kParallelWork = std::size_t{1} << 16;

bool go_parallel(std::size_t work) { return work >= kParallelWork && parallel_enabled(); }
}  // namespace

void linear_forward(LinearDims d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  if (go_parallel(d.rows * d.in * d.out)) {
    parallel::linear_forward(d, x, w, b, y);
  } else {
    serial::linear_forward(d, x, w, b, y);
  }
}

void linear_backward_params(LinearDims d, std::span<const double> dy, std::span<const double> x,
                            std::span<double> dw, std::span<double> db) {
  if (go_parallel(d.rows * d.in * d.out)) {
    parallel::linear_backward_params(d, dy, x, dw, db);
  } else {
    serial::linear_backward_params(d, dy, x, dw, db);
  }
}

void linear_backward_input(LinearDims d, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
  if (go_parallel(d.rows * d.in * d.out)) {
    parallel::linear_backward_input(d, dy, w, dx);
  } else {
    serial::linear_backward_input(d, dy, w, dx);
  }
}

void accumulate_outer(std::size_t rows, std::size_t dim, std::span<const double> x,
                      std::span<double> s) {
  if (go_parallel(rows * dim * dim / 2)) {
    parallel::accumulate_outer(rows, dim, x, s);
  } else {
    serial::accumulate_outer(rows, dim, x, s);
  }
}

}  // namespace edsam::kernels
