#pragma once

#include <cstddef>

namespace sepsisrl::kernels {

/// Number of worker threads the parallel kernels will use. Controlled by the
/// SEPSIS_RL_THREADS environment variable (unset or 0 means "all available").
int effective_threads();

// Every kernel below exists in two variants: a plain serial reference
// implementation and an OpenMP version parallelized so that each output
// element is accumulated by exactly one thread in the same order as the
// serial code. The two variants are therefore bitwise identical for any
// thread count; the *_serial forms are kept for tests and benchmarks, and the
// undecorated names dispatch between them.

/// y = W·x + b, with W row-major (m × n), x length n, b and y length m.
void matvec_bias_serial(const double* W, const double* x, const double* b,
                        double* y, std::size_t m, std::size_t n);
void matvec_bias_parallel(const double* W, const double* x, const double* b,
                          double* y, std::size_t m, std::size_t n);
void matvec_bias(const double* W, const double* x, const double* b,
                 double* y, std::size_t m, std::size_t n);

/// Backward of matvec_bias given upstream gradient g (length m):
///   dW += g·xᵀ, dx += Wᵀ·g, db += g.
/// Any of dW/dx/db may be null to skip that accumulation.
void matvec_bias_backward_serial(const double* W, const double* x, const double* g,
                                 double* dW, double* dx, double* db,
                                 std::size_t m, std::size_t n);
void matvec_bias_backward_parallel(const double* W, const double* x, const double* g,
                                   double* dW, double* dx, double* db,
                                   std::size_t m, std::size_t n);
void matvec_bias_backward(const double* W, const double* x, const double* g,
                          double* dW, double* dx, double* db,
                          std::size_t m, std::size_t n);

/// Y = X·Wᵀ + b broadcast over rows. X is (batch × n), W is (m × n),
/// b length m, Y is (batch × m).
void batch_linear_serial(const double* X, const double* W, const double* b,
                         double* Y, std::size_t batch, std::size_t m, std::size_t n);
void batch_linear_parallel(const double* X, const double* W, const double* b,
                           double* Y, std::size_t batch, std::size_t m, std::size_t n);
void batch_linear(const double* X, const double* W, const double* b,
                  double* Y, std::size_t batch, std::size_t m, std::size_t n);

/// Backward of batch_linear given upstream gradient G (batch × m):
///   dX += G·W, dW += Gᵀ·X, db += column sums of G.
/// Any of dX/dW/db may be null to skip that accumulation.
void batch_linear_backward_serial(const double* X, const double* W, const double* G,
                                  double* dX, double* dW, double* db,
                                  std::size_t batch, std::size_t m, std::size_t n);
void batch_linear_backward_parallel(const double* X, const double* W, const double* G,
                                    double* dX, double* dW, double* db,
                                    std::size_t batch, std::size_t m, std::size_t n);
void batch_linear_backward(const double* X, const double* W, const double* G,
                           double* dX, double* dW, double* db,
                           std::size_t batch, std::size_t m, std::size_t n);

/// Elementwise y[i] = max(x[i], 0) and its backward dx += g·(x > 0).
void relu_serial(const double* x, double* y, std::size_t n);
void relu_parallel(const double* x, double* y, std::size_t n);
void relu(const double* x, double* y, std::size_t n);

double dot_serial(const double* a, const double* b, std::size_t n);

/// y += alpha * x
void axpy_serial(double alpha, const double* x, double* y, std::size_t n);

}  // namespace sepsisrl::kernels
