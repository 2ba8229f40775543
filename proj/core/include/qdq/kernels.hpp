#pragma once

#include <cstddef>
#include <cstdint>

namespace qdq::kern {

// Dense kernels used by every network path. Single-threaded with a fixed
// accumulation order per output element, so results are reproducible down to
// the bit on any rerun of the same binary.

// Y(M x N) = X(M x K) * W(K x N), all row-major.
void gemm_nn(const double* X, const double* W, double* Y, int M, int K, int N);

// Y(M x N) = X(M x K) * W(K x N) + broadcast bias(N)
void affine(const double* X, const double* W, const double* b, double* Y,
            int M, int K, int N);

// dX(M x K) += G(M x N) * W(K x N)^T   (i.e. dX[i,p] += dot(G.row(i), W.row(p)))
void gemm_nt_acc(const double* G, const double* W, double* dX, int M, int N, int K);

// dW(K x N) += X(M x K)^T * G(M x N)
void gemm_tn_acc(const double* X, const double* G, double* dW, int M, int K, int N);

// db(N) += column sums of G(M x N)
void colsum_acc(const double* G, double* db, int M, int N);

// exp approximation: branch-free Cody-Waite reduction + degree-8 polynomial,
// input clamped to [-40, 40], relative error < 3e-10. Deterministic, and far
// cheaper than libm when the compiler vectorizes the loop.
void vexp(const double* x, double* y, std::size_t n);
double fast_exp(double x);

enum class Act : std::uint8_t {
  identity = 0,
  relu = 1,
  tanh_ = 2,
  swish = 3,
  mish = 4,
};

// y = act(x), elementwise over n values
void act_forward(Act a, const double* x, double* y, std::size_t n);

// dx = dy * act'(x); x is the saved pre-activation (accumulates into dx)
void act_backward_acc(Act a, const double* x, const double* dy, double* dx,
                      std::size_t n);

const char* act_name(Act a);

}  // namespace qdq::kern
