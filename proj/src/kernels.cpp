#include "sepsisrl/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>

namespace sepsisrl::kernels {

namespace {

int read_thread_cap() {
  const char* env = std::getenv("SEPSIS_RL_THREADS");
  int hw = omp_get_max_threads();
  if (hw < 1) hw = 1;
  if (env == nullptr || *env == '\0') return hw;
  const long v = std::strtol(env, nullptr, 10);
  if (v <= 0) return hw;
  return static_cast<int>(std::min<long>(v, hw));
}

// Work (in output elements times inner length) below which the serial path is
// always taken; guards against OpenMP overhead dominating tiny layers.
constexpr std::size_t kParallelThreshold = 1 << 15;

}  // namespace

int effective_threads() {
  static const int cap = read_thread_cap();
  return cap;
}

void matvec_bias_serial(const double* W, const double* x, const double* b,
                        double* y, std::size_t m, std::size_t n) {
  for (std::size_t r = 0; r < m; ++r) {
    const double* __restrict__ row = W + r * n;
    double acc = b != nullptr ? b[r] : 0.0;
    for (std::size_t c = 0; c < n; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

void matvec_bias_parallel(const double* W, const double* x, const double* b,
                          double* y, std::size_t m, std::size_t n) {
#pragma omp parallel for schedule(static) num_threads(effective_threads())
  for (std::size_t r = 0; r < m; ++r) {
    const double* __restrict__ row = W + r * n;
    double acc = b != nullptr ? b[r] : 0.0;
    for (std::size_t c = 0; c < n; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

void matvec_bias(const double* W, const double* x, const double* b,
                 double* y, std::size_t m, std::size_t n) {
  if (m * n < kParallelThreshold || effective_threads() == 1) {
    matvec_bias_serial(W, x, b, y, m, n);
  } else {
    matvec_bias_parallel(W, x, b, y, m, n);
  }
}

void matvec_bias_backward_serial(const double* W, const double* x, const double* g,
                                 double* dW, double* dx, double* db,
                                 std::size_t m, std::size_t n) {
  if (dW != nullptr) {
    for (std::size_t r = 0; r < m; ++r) {
      double* __restrict__ out = dW + r * n;
      const double gr = g[r];
      for (std::size_t c = 0; c < n; ++c) out[c] += gr * x[c];
    }
  }
  if (dx != nullptr) {
    // dx[c] += sum_r W[r][c] * g[r]; accumulate row-by-row so the inner loop
    // walks W contiguously.
    for (std::size_t r = 0; r < m; ++r) {
      const double* __restrict__ row = W + r * n;
      const double gr = g[r];
      for (std::size_t c = 0; c < n; ++c) dx[c] += gr * row[c];
    }
  }
  if (db != nullptr) {
    for (std::size_t r = 0; r < m; ++r) db[r] += g[r];
  }
}

void matvec_bias_backward_parallel(const double* W, const double* x, const double* g,
                                   double* dW, double* dx, double* db,
                                   std::size_t m, std::size_t n) {
  if (dW != nullptr) {
#pragma omp parallel for schedule(static) num_threads(effective_threads())
    for (std::size_t r = 0; r < m; ++r) {
      double* __restrict__ out = dW + r * n;
      const double gr = g[r];
      for (std::size_t c = 0; c < n; ++c) out[c] += gr * x[c];
    }
  }
  if (dx != nullptr) {
    // Parallel over columns: each dx[c] sums over rows in ascending order,
    // matching the element-wise accumulation order of the serial loop.
#pragma omp parallel for schedule(static) num_threads(effective_threads())
    for (std::size_t c = 0; c < n; ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < m; ++r) acc += g[r] * W[r * n + c];
      dx[c] += acc;
    }
  }
  if (db != nullptr) {
#pragma omp parallel for schedule(static) num_threads(effective_threads())
    for (std::size_t r = 0; r < m; ++r) db[r] += g[r];
  }
}

void matvec_bias_backward(const double* W, const double* x, const double* g,
                          double* dW, double* dx, double* db,
                          std::size_t m, std::size_t n) {
  if (m * n < kParallelThreshold || effective_threads() == 1) {
    matvec_bias_backward_serial(W, x, g, dW, dx, db, m, n);
  } else {
    matvec_bias_backward_parallel(W, x, g, dW, dx, db, m, n);
  }
}

void batch_linear_serial(const double* X, const double* W, const double* b,
                         double* Y, std::size_t batch, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < batch; ++i) {
    matvec_bias_serial(W, X + i * n, b, Y + i * m, m, n);
  }
}

void batch_linear_parallel(const double* X, const double* W, const double* b,
                           double* Y, std::size_t batch, std::size_t m, std::size_t n) {
#pragma omp parallel for schedule(static) num_threads(effective_threads())
  for (std::size_t i = 0; i < batch; ++i) {
    matvec_bias_serial(W, X + i * n, b, Y + i * m, m, n);
  }
}

void batch_linear(const double* X, const double* W, const double* b,
                  double* Y, std::size_t batch, std::size_t m, std::size_t n) {
  if (batch * m * n < kParallelThreshold || effective_threads() == 1) {
    batch_linear_serial(X, W, b, Y, batch, m, n);
  } else {
    batch_linear_parallel(X, W, b, Y, batch, m, n);
  }
}

void batch_linear_backward_serial(const double* X, const double* W, const double* G,
                                  double* dX, double* dW, double* db,
                                  std::size_t batch, std::size_t m, std::size_t n) {
  if (dX != nullptr) {
    // dX[i] += Gᵀ row combination: dX[i][c] += sum_j G[i][j] * W[j][c]
    for (std::size_t i = 0; i < batch; ++i) {
      double* __restrict__ out = dX + i * n;
      const double* __restrict__ gi = G + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double gij = gi[j];
        const double* __restrict__ wj = W + j * n;
        for (std::size_t c = 0; c < n; ++c) out[c] += gij * wj[c];
      }
    }
  }
  if (dW != nullptr) {
    // dW[j][c] += sum_i G[i][j] * X[i][c], batch index ascending.
    for (std::size_t j = 0; j < m; ++j) {
      double* __restrict__ out = dW + j * n;
      for (std::size_t i = 0; i < batch; ++i) {
        const double gij = G[i * m + j];
        const double* __restrict__ xi = X + i * n;
        for (std::size_t c = 0; c < n; ++c) out[c] += gij * xi[c];
      }
    }
  }
  if (db != nullptr) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < batch; ++i) acc += G[i * m + j];
      db[j] += acc;
    }
  }
}

void batch_linear_backward_parallel(const double* X, const double* W, const double* G,
                                    double* dX, double* dW, double* db,
                                    std::size_t batch, std::size_t m, std::size_t n) {
  if (dX != nullptr) {
#pragma omp parallel for schedule(static) num_threads(effective_threads())
    for (std::size_t i = 0; i < batch; ++i) {
      double* __restrict__ out = dX + i * n;
      const double* __restrict__ gi = G + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double gij = gi[j];
        const double* __restrict__ wj = W + j * n;
        for (std::size_t c = 0; c < n; ++c) out[c] += gij * wj[c];
      }
    }
  }
  if (dW != nullptr) {
#pragma omp parallel for schedule(static) num_threads(effective_threads())
    for (std::size_t j = 0; j < m; ++j) {
      double* __restrict__ out = dW + j * n;
      for (std::size_t i = 0; i < batch; ++i) {
        const double gij = G[i * m + j];
        const double* __restrict__ xi = X + i * n;
        for (std::size_t c = 0; c < n; ++c) out[c] += gij * xi[c];
      }
    }
  }
  if (db != nullptr) {
#pragma omp parallel for schedule(static) num_threads(effective_threads())
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < batch; ++i) acc += G[i * m + j];
      db[j] += acc;
    }
  }
}

void batch_linear_backward(const double* X, const double* W, const double* G,
                           double* dX, double* dW, double* db,
                           std::size_t batch, std::size_t m, std::size_t n) {
  if (batch * m * n < kParallelThreshold || effective_threads() == 1) {
    batch_linear_backward_serial(X, W, G, dX, dW, db, batch, m, n);
  } else {
    batch_linear_backward_parallel(X, W, G, dX, dW, db, batch, m, n);
  }
}

void relu_serial(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_parallel(const double* x, double* y, std::size_t n) {
#pragma omp parallel for schedule(static) num_threads(effective_threads())
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu(const double* x, double* y, std::size_t n) {
  if (n < kParallelThreshold || effective_threads() == 1) {
    relu_serial(x, y, n);
  } else {
    relu_parallel(x, y, n);
  }
}

double dot_serial(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_serial(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace sepsisrl::kernels
