// Serial vs OpenMP timings for the dense kernels, the transport check and
// adversarial generation. Usage: edsam_bench [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "edsam/advgen.hpp"
#include "edsam/kernels.hpp"
#include "edsam/rng.hpp"
#include "edsam/transport.hpp"

#ifdef EDSAM_HAVE_OPENMP
#include <omp.h>
#endif

using namespace edsam;
namespace k = edsam::kernels;

namespace {

double best_of(int repeats, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void row(const char* name, double serial, double parallel) {
  std::printf("%-34s serial %9.4f ms  parallel %9.4f ms  speedup %5.2fx\n", name, serial * 1e3, parallel * 1e3,
              serial / parallel);
}

std::vector<double> randv(SeededRng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void set_threads(int n) {
#ifdef EDSAM_HAVE_OPENMP
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
  const int threads = k::max_threads();
  std::printf("threads %d, openmp %s, best of %d\n", threads, k::parallel_enabled() ? "on" : "off", repeats);

  SeededRng rng(1);
  for (const k::LinearDims d : {k::LinearDims{128, 292, 128}, k::LinearDims{1024, 128, 128},
                                k::LinearDims{4096, 256, 64}}) {
    const auto x = randv(rng, d.rows * d.in);
    const auto w = randv(rng, d.in * d.out);
    const auto b = randv(rng, d.out);
    const auto dy = randv(rng, d.rows * d.out);
    std::vector<double> y(d.rows * d.out), dx(d.rows * d.in), dw(d.in * d.out), db(d.out);
    const std::string shape = std::to_string(d.rows) + "x" + std::to_string(d.in) + "x" + std::to_string(d.out);
    row(("forward " + shape).c_str(), best_of(repeats, [&] { k::serial::linear_forward(d, x, w, b, y); }),
        best_of(repeats, [&] { k::parallel::linear_forward(d, x, w, b, y); }));
    row(("backward params " + shape).c_str(),
        best_of(repeats, [&] { k::serial::linear_backward_params(d, dy, x, dw, db); }),
        best_of(repeats, [&] { k::parallel::linear_backward_params(d, dy, x, dw, db); }));
    row(("backward input " + shape).c_str(), best_of(repeats, [&] { k::serial::linear_backward_input(d, dy, w, dx); }),
        best_of(repeats, [&] { k::parallel::linear_backward_input(d, dy, w, dx); }));
    std::vector<double> s(d.in * d.in);
    row(("outer products " + shape).c_str(), best_of(repeats, [&] { k::serial::accumulate_outer(d.rows, d.in, x, s); }),
        best_of(repeats, [&] { k::parallel::accumulate_outer(d.rows, d.in, x, s); }));
  }

  const auto transport_run = [] {
    SeededRng r(3);
    verify_transport_bound(0.5, 64, 100000, r);
  };
  set_threads(1);
  const double ts = best_of(1, transport_run);
  set_threads(threads);
  row("transport check d=64 n=1e5", ts, best_of(1, transport_run));

  const Dataset data = gen_dataset(DomainSpec{}, 200, 5);
  const auto schedule = default_schedule();
  SeededRng init(9);
  const Denoiser den = make_denoiser(data.dim(), data.num_classes, {128, 128}, Activation::gelu, init);
  GenConfig gc;
  gc.M = 5;
  const double gs = best_of(1, [&] { generate_adversarial_serial(data, den, schedule, gc); });
  row("generate 200 x M=5", gs, best_of(1, [&] { generate_adversarial(data, den, schedule, gc); }));
  return 0;
}
