#include <doctest.h>

#include <vector>

#include "edsam/kernels.hpp"
#include "edsam/rng.hpp"

#ifdef EDSAM_HAVE_OPENMP
#include <omp.h>
#endif

using namespace edsam;
namespace k = edsam::kernels;

namespace {

std::vector<double> randv(SeededRng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Textbook triple loop, the oracle for every kernel below.
std::vector<double> naive_forward(k::LinearDims d, const std::vector<double>& x, const std::vector<double>& w,
                                  const std::vector<double>& b) {
  std::vector<double> y(d.rows * d.out);
  for (std::size_t r = 0; r < d.rows; ++r) {
    for (std::size_t o = 0; o < d.out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < d.in; ++i) s += x[r * d.in + i] * w[i * d.out + o];
      y[r * d.out + o] = s;
    }
  }
  return y;
}

}  // namespace

TEST_CASE("serial and parallel kernels are bit-identical") {
#ifdef EDSAM_HAVE_OPENMP
  const int saved = omp_get_max_threads();
  omp_set_num_threads(4);
#endif
  SeededRng rng(21);
  const k::LinearDims shapes[] = {{1, 3, 2}, {7, 5, 9}, {64, 88, 128}, {300, 128, 64}, {513, 64, 33}};
  for (const auto d : shapes) {
    const auto x = randv(rng, d.rows * d.in);
    const auto w = randv(rng, d.in * d.out);
    const auto b = randv(rng, d.out);
    const auto dy = randv(rng, d.rows * d.out);

    std::vector<double> ys(d.rows * d.out), yp(ys.size()), yd(ys.size());
    k::serial::linear_forward(d, x, w, b, ys);
    k::parallel::linear_forward(d, x, w, b, yp);
    k::linear_forward(d, x, w, b, yd);
    CHECK(ys == yp);
    CHECK(ys == yd);
    const auto ref = naive_forward(d, x, w, b);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(ys[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    std::vector<double> dws(d.in * d.out, 0.5), dbs(d.out, 0.25);
    auto dwp = dws, dbp = dbs;
    k::serial::linear_backward_params(d, dy, x, dws, dbs);
    k::parallel::linear_backward_params(d, dy, x, dwp, dbp);
    CHECK(dws == dwp);
    CHECK(dbs == dbp);
    for (std::size_t i = 0; i < d.in; ++i) {
      for (std::size_t o = 0; o < d.out; ++o) {
        double s = 0.5;
        for (std::size_t r = 0; r < d.rows; ++r) s += x[r * d.in + i] * dy[r * d.out + o];
        CHECK(dws[i * d.out + o] == doctest::Approx(s).epsilon(1e-12));
      }
    }

    std::vector<double> dxs(d.rows * d.in), dxp(dxs.size());
    k::serial::linear_backward_input(d, dy, w, dxs);
    k::parallel::linear_backward_input(d, dy, w, dxp);
    CHECK(dxs == dxp);
    for (std::size_t r = 0; r < d.rows; r += 5) {
      for (std::size_t i = 0; i < d.in; ++i) {
        double s = 0.0;
        for (std::size_t o = 0; o < d.out; ++o) s += dy[r * d.out + o] * w[i * d.out + o];
        CHECK(dxs[r * d.in + i] == doctest::Approx(s).epsilon(1e-12));
      }
    }

    std::vector<double> ss(d.in * d.in, 0.0), sp(ss.size(), 0.0);
    k::serial::accumulate_outer(d.rows, d.in, x, ss);
    k::parallel::accumulate_outer(d.rows, d.in, x, sp);
    CHECK(ss == sp);
    for (std::size_t i = 0; i < d.in; ++i) {
      for (std::size_t j = 0; j < d.in; ++j) CHECK(ss[i * d.in + j] == ss[j * d.in + i]);
    }
  }
#ifdef EDSAM_HAVE_OPENMP
  omp_set_num_threads(saved);
#endif
}

TEST_CASE("a row's forward result does not depend on the batch around it") {
  SeededRng rng(4);
  const k::LinearDims big{257, 40, 30};
  const auto x = randv(rng, big.rows * big.in);
  const auto w = randv(rng, big.in * big.out);
  const auto b = randv(rng, big.out);
  std::vector<double> y(big.rows * big.out);
  k::linear_forward(big, x, w, b, y);
  const std::size_t r = 131;
  std::vector<double> one(big.out);
  k::linear_forward({1, big.in, big.out}, std::span<const double>(x).subspan(r * big.in, big.in), w, b, one);
  for (std::size_t o = 0; o < big.out; ++o) CHECK(one[o] == y[r * big.out + o]);
}
