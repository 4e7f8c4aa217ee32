#pragma once

// Dense linear-layer kernels. Every kernel exists twice: a plain serial loop
// (the reference) and an OpenMP version that hands disjoint row or column
// blocks of the same loop body to threads. No element's accumulation order
// changes, so both produce bit-identical results, and a row's result never
// depends on how many rows share the call. The unqualified entry points dispatch to the
// parallel version when the build has OpenMP and the work is large enough.

#include <cstddef>
#include <span>

namespace edsam::kernels {

// Weights are stored [in x out]: y[n x out] = x[n x in] * w[in x out] + b[out].
struct LinearDims {
  std::size_t rows;
  std::size_t in;
  std::size_t out;
};

namespace serial {
void linear_forward(LinearDims d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
// dw[in x out] += x^T dy ; db[out] += column sums of dy
void linear_backward_params(LinearDims d, std::span<const double> dy, std::span<const double> x,
                            std::span<double> dw, std::span<double> db);
// dx[n x in] = dy[n x out] * w^T
void linear_backward_input(LinearDims d, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx);
// Upper-triangle-mirrored sums of outer products: s[i][j] += sum_r x[r][i] x[r][j].
void accumulate_outer(std::size_t rows, std::size_t dim, std::span<const double> x,
                      std::span<double> s);
}  // namespace serial

namespace parallel {
void linear_forward(LinearDims d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void linear_backward_params(LinearDims d, std::span<const double> dy, std::span<const double> x,
                            std::span<double> dw, std::span<double> db);
void linear_backward_input(LinearDims d, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx);
void accumulate_outer(std::size_t rows, std::size_t dim, std::span<const double> x,
                      std::span<double> s);
}  // namespace parallel

void linear_forward(LinearDims d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void linear_backward_params(LinearDims d, std::span<const double> dy, std::span<const double> x,
                            std::span<double> dw, std::span<double> db);
void linear_backward_input(LinearDims d, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx);
void accumulate_outer(std::size_t rows, std::size_t dim, std::span<const double> x,
                      std::span<double> s);

int max_threads();
bool parallel_enabled();

}  // namespace edsam::kernels
