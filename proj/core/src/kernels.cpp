#include "qdq/kernels.hpp"

#include <bit>
#include <cmath>
#include <cstring>

namespace qdq::kern {

namespace {

// Register-tiled microkernel: T rows of X at a time, a 64-wide block of the
// output row held in local accumulators for the whole K sweep.
template <int T>
void gemm_rows(const double* __restrict X, const double* __restrict W,
               double* __restrict Y, int i0, int K, int N) {
  const double* xr[T];
  double* yr[T];
  for (int t = 0; t < T; ++t) {
    xr[t] = X + static_cast<std::size_t>(i0 + t) * K;
    yr[t] = Y + static_cast<std::size_t>(i0 + t) * N;
  }
  for (int j0 = 0; j0 < N; j0 += 64) {
    const int jn = (N - j0 < 64) ? (N - j0) : 64;
    double acc[T][64];
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < jn; ++j) acc[t][j] = 0.0;
    for (int k = 0; k < K; ++k) {
      const double* __restrict w = W + static_cast<std::size_t>(k) * N + j0;
      for (int t = 0; t < T; ++t) {
        const double xv = xr[t][k];
        for (int j = 0; j < jn; ++j) acc[t][j] += xv * w[j];
      }
    }
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < jn; ++j) yr[t][j0 + j] = acc[t][j];
  }
}

// same loop body with the output width fixed at compile time; the k-sweep
// order is unchanged, so results are bit-identical to the generic path
template <int T, int NB>
void gemm_rows_fixn(const double* __restrict X, const double* __restrict W,
                    double* __restrict Y, int i0, int K) {
  const double* xr[T];
  double* yr[T];
  for (int t = 0; t < T; ++t) {
    xr[t] = X + static_cast<std::size_t>(i0 + t) * K;
    yr[t] = Y + static_cast<std::size_t>(i0 + t) * NB;
  }
  double acc[T][NB];
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < NB; ++j) acc[t][j] = 0.0;
  for (int k = 0; k < K; ++k) {
    const double* __restrict w = W + static_cast<std::size_t>(k) * NB;
    for (int t = 0; t < T; ++t) {
      const double xv = xr[t][k];
      for (int j = 0; j < NB; ++j) acc[t][j] += xv * w[j];
    }
  }
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < NB; ++j) yr[t][j] = acc[t][j];
}

template <int NB>
void gemm_fixn(const double* X, const double* W, double* Y, int M, int K) {
  constexpr int T = NB >= 16 ? 8 : 4;
  int i = 0;
  for (; i + T <= M; i += T) gemm_rows_fixn<T, NB>(X, W, Y, i, K);
  for (; i < M; ++i) gemm_rows_fixn<1, NB>(X, W, Y, i, K);
}

}  // namespace

void gemm_nn(const double* X, const double* W, double* Y, int M, int K, int N) {
  // the network widths in play are small powers of two; a compile-time
  // column count lets the inner loops vectorize without peel/mask overhead
  switch (N) {
    case 1: gemm_fixn<1>(X, W, Y, M, K); return;
    case 2: gemm_fixn<2>(X, W, Y, M, K); return;
    case 4: gemm_fixn<4>(X, W, Y, M, K); return;
    case 8: gemm_fixn<8>(X, W, Y, M, K); return;
    case 16: gemm_fixn<16>(X, W, Y, M, K); return;
    case 32: gemm_fixn<32>(X, W, Y, M, K); return;
    case 64: gemm_fixn<64>(X, W, Y, M, K); return;
    default: break;
  }
  int i = 0;
  for (; i + 4 <= M; i += 4) gemm_rows<4>(X, W, Y, i, K, N);
  for (; i < M; ++i) gemm_rows<1>(X, W, Y, i, K, N);
}

void affine(const double* X, const double* W, const double* b, double* Y,
            int M, int K, int N) {
  gemm_nn(X, W, Y, M, K, N);
  for (int i = 0; i < M; ++i) {
    double* __restrict y = Y + static_cast<std::size_t>(i) * N;
    for (int j = 0; j < N; ++j) y[j] += b[j];
  }
}

void gemm_nt_acc(const double* G, const double* W, double* dX, int M, int N, int K) {
  // dX[i,p] += dot(G.row(i), W.row(p)); four dots at a time per row
  for (int i = 0; i < M; ++i) {
    const double* __restrict g = G + static_cast<std::size_t>(i) * N;
    double* __restrict dx = dX + static_cast<std::size_t>(i) * K;
    int p = 0;
    for (; p + 4 <= K; p += 4) {
      const double* __restrict w0 = W + static_cast<std::size_t>(p) * N;
      const double* __restrict w1 = w0 + N;
      const double* __restrict w2 = w1 + N;
      const double* __restrict w3 = w2 + N;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (int j = 0; j < N; ++j) {
        const double gv = g[j];
        s0 += gv * w0[j];
        s1 += gv * w1[j];
        s2 += gv * w2[j];
        s3 += gv * w3[j];
      }
      dx[p] += s0;
      dx[p + 1] += s1;
      dx[p + 2] += s2;
      dx[p + 3] += s3;
    }
    for (; p < K; ++p) {
      const double* __restrict w = W + static_cast<std::size_t>(p) * N;
      double s = 0;
      for (int j = 0; j < N; ++j) s += g[j] * w[j];
      dx[p] += s;
    }
  }
}

void gemm_tn_acc(const double* X, const double* G, double* dW, int M, int K, int N) {
  // dW[p,:] += sum_i X[i,p] * G[i,:]; i ascends so the order is fixed
  for (int p = 0; p < K; ++p) {
    double* __restrict dw = dW + static_cast<std::size_t>(p) * N;
    for (int i = 0; i < M; ++i) {
      const double xv = X[static_cast<std::size_t>(i) * K + p];
      const double* __restrict g = G + static_cast<std::size_t>(i) * N;
      for (int j = 0; j < N; ++j) dw[j] += xv * g[j];
    }
  }
}

void colsum_acc(const double* G, double* db, int M, int N) {
  for (int i = 0; i < M; ++i) {
    const double* __restrict g = G + static_cast<std::size_t>(i) * N;
    for (int j = 0; j < N; ++j) db[j] += g[j];
  }
}

namespace {

constexpr double kLog2e = 1.4426950408889634074;
constexpr double kLn2Hi = 6.93145751953125e-1;
constexpr double kLn2Lo = 1.42860682030941723212e-6;
constexpr double kMagic = 6755399441055744.0;  // 2^52 + 2^51: round-to-nearest trick

[[gnu::always_inline]] inline double exp_core(double v) {
  v = v > 40.0 ? 40.0 : v;
  v = v < -40.0 ? -40.0 : v;
  const double fm = v * kLog2e + kMagic;
  const double fn = fm - kMagic;
  const double r = (v - fn * kLn2Hi) - fn * kLn2Lo;
  double p = 2.7557319223985890653e-6;
  p = p * r + 2.4801587301587301587e-5;
  p = p * r + 1.9841269841269841270e-4;
  p = p * r + 1.3888888888888888889e-3;
  p = p * r + 8.3333333333333333333e-3;
  p = p * r + 4.1666666666666666667e-2;
  p = p * r + 1.6666666666666666667e-1;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  // 2^n via exponent-field arithmetic; |n| <= 58 here so no overflow handling
  const std::uint64_t eb = std::bit_cast<std::uint64_t>(fm) << 52;
  return p * std::bit_cast<double>(eb + std::bit_cast<std::uint64_t>(1.0));
}

}  // namespace

double fast_exp(double x) { return exp_core(x); }

void vexp(const double* __restrict x, double* __restrict y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] = exp_core(x[i]);
}

namespace {

inline double sigmoid_f(double x) { return 1.0 / (1.0 + exp_core(-x)); }

// mish(x) = x * tanh(softplus(x)); with u = 1 + e^x the tanh collapses to
// (u^2 - 1) / (u^2 + 1), so one exp suffices.
inline double mish_t(double x) {
  const double u = 1.0 + exp_core(x);
  const double u2 = u * u;
  return (u2 - 1.0) / (u2 + 1.0);
}

inline double tanh_f(double x) {
  const double t = exp_core(2.0 * x);
  return (t - 1.0) / (t + 1.0);
}

}  // namespace

void act_forward(Act a, const double* __restrict x, double* __restrict y,
                 std::size_t n) {
  switch (a) {
    case Act::identity:
      if (y != x) std::memcpy(y, x, n * sizeof(double));
      break;
    case Act::relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case Act::tanh_:
#pragma omp simd
      for (std::size_t i = 0; i < n; ++i) y[i] = tanh_f(x[i]);
      break;
    case Act::swish:
#pragma omp simd
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * sigmoid_f(x[i]);
      break;
    case Act::mish:
#pragma omp simd
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * mish_t(x[i]);
      break;
  }
}

void act_backward_acc(Act a, const double* __restrict x, const double* __restrict dy,
                      double* __restrict dx, std::size_t n) {
  switch (a) {
    case Act::identity:
      for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i];
      break;
    case Act::relu:
      // derivative at exactly 0 is taken as 0
      for (std::size_t i = 0; i < n; ++i) dx[i] += x[i] > 0.0 ? dy[i] : 0.0;
      break;
    case Act::tanh_:
      for (std::size_t i = 0; i < n; ++i) {
        const double t = tanh_f(x[i]);
        dx[i] += dy[i] * (1.0 - t * t);
      }
      break;
    case Act::swish:
      for (std::size_t i = 0; i < n; ++i) {
        const double s = sigmoid_f(x[i]);
        dx[i] += dy[i] * (s + x[i] * s * (1.0 - s));
      }
      break;
    case Act::mish:
      for (std::size_t i = 0; i < n; ++i) {
        const double t = mish_t(x[i]);
        const double s = sigmoid_f(x[i]);
        dx[i] += dy[i] * (t + x[i] * (1.0 - t * t) * s);
      }
      break;
  }
}

const char* act_name(Act a) {
  switch (a) {
    case Act::identity: return "identity";
    case Act::relu: return "relu";
    case Act::tanh_: return "tanh";
    case Act::swish: return "swish";
    case Act::mish: return "mish";
  }
  return "?";
}

}  // namespace qdq::kern
