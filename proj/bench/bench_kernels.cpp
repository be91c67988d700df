// Micro-benchmark comparing the serial reference kernels with the OpenMP
// variants. Prints one line per kernel/size with both timings and the
// speedup. Thread count follows SEPSIS_RL_THREADS.

#include <chrono>
#include <cstdio>
#include <vector>

#include "sepsisrl/kernels.hpp"
#include "sepsisrl/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(int reps, const auto& fn) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<double> random_vec(std::size_t n, sepsisrl::Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace

int main() {
  using namespace sepsisrl;
  Rng rng(7);

  std::printf("threads: %d\n", kernels::effective_threads());
  std::printf("%-28s %10s %10s %8s\n", "kernel", "serial ms", "openmp ms", "speedup");

  struct Size {
    std::size_t batch, m, n;
  };
  const Size sizes[] = {{1, 64, 64}, {1, 512, 512}, {128, 128, 38}, {512, 128, 128}};

  for (const Size& s : sizes) {
    const auto X = random_vec(s.batch * s.n, rng);
    const auto W = random_vec(s.m * s.n, rng);
    const auto b = random_vec(s.m, rng);
    std::vector<double> Y(s.batch * s.m);
    const int reps = s.batch * s.m * s.n > (1u << 20) ? 20 : 200;

    const double t_serial = time_ms(reps, [&] {
      kernels::batch_linear_serial(X.data(), W.data(), b.data(), Y.data(), s.batch, s.m, s.n);
    });
    const double t_parallel = time_ms(reps, [&] {
      kernels::batch_linear_parallel(X.data(), W.data(), b.data(), Y.data(), s.batch, s.m, s.n);
    });
    std::printf("batch_linear %4zux%4zux%4zu   %10.4f %10.4f %7.2fx\n", s.batch, s.m, s.n,
                t_serial, t_parallel, t_serial / t_parallel);

    const auto G = random_vec(s.batch * s.m, rng);
    std::vector<double> dX(s.batch * s.n), dW(s.m * s.n), db(s.m);
    const double bs = time_ms(reps, [&] {
      kernels::batch_linear_backward_serial(X.data(), W.data(), G.data(), dX.data(), dW.data(),
                                            db.data(), s.batch, s.m, s.n);
    });
    const double bp = time_ms(reps, [&] {
      kernels::batch_linear_backward_parallel(X.data(), W.data(), G.data(), dX.data(),
                                              dW.data(), db.data(), s.batch, s.m, s.n);
    });
    std::printf("batch_linear_bwd %4zux%4zux%4zu %9.4f %10.4f %7.2fx\n", s.batch, s.m, s.n,
                bs, bp, bs / bp);
  }
  return 0;
}
