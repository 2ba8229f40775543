#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "qdq/kernels.hpp"
#include "qdq/rng.hpp"

using namespace qdq;
namespace k = qdq::kern;

namespace {

// plain triple-loop reference
void gemm_ref(const std::vector<double>& X, const std::vector<double>& W,
              std::vector<double>& Y, int M, int K, int N) {
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      double s = 0;
      for (int p = 0; p < K; ++p) s += X[i * K + p] * W[p * N + j];
      Y[i * N + j] = s;
    }
}

}  // namespace

TEST_CASE("gemm matches reference on odd shapes") {
  Rng rng(11);
  const std::array<std::array<int, 3>, 6> shapes{
      {{1, 1, 1}, {3, 5, 7}, {4, 20, 32}, {13, 33, 65}, {9, 2, 130}, {257, 17, 31}}};
  for (auto [M, K, N] : shapes) {
    std::vector<double> X(M * K), W(K * N), Y(M * N, -1), Yr(M * N);
    for (auto& v : X) v = rng.normal();
    for (auto& v : W) v = rng.normal();
    k::gemm_nn(X.data(), W.data(), Y.data(), M, K, N);
    gemm_ref(X, W, Yr, M, K, N);
    double err = 0;
    for (int i = 0; i < M * N; ++i) err = std::max(err, std::abs(Y[i] - Yr[i]));
    CHECK(err < 1e-12);
  }
}

TEST_CASE("backward gemms match reference") {
  Rng rng(13);
  const int M = 7, K = 19, N = 23;
  std::vector<double> X(M * K), W(K * N), G(M * N);
  for (auto& v : X) v = rng.normal();
  for (auto& v : W) v = rng.normal();
  for (auto& v : G) v = rng.normal();

  std::vector<double> dX(M * K, 0.5), dXr(M * K, 0.5);
  k::gemm_nt_acc(G.data(), W.data(), dX.data(), M, N, K);
  for (int i = 0; i < M; ++i)
    for (int p = 0; p < K; ++p) {
      double s = 0;
      for (int j = 0; j < N; ++j) s += G[i * N + j] * W[p * N + j];
      dXr[i * K + p] += s;
    }
  for (int i = 0; i < M * K; ++i) CHECK(dX[i] == doctest::Approx(dXr[i]).epsilon(1e-12));

  std::vector<double> dW(K * N, -0.25), dWr(K * N, -0.25);
  k::gemm_tn_acc(X.data(), G.data(), dW.data(), M, K, N);
  for (int p = 0; p < K; ++p)
    for (int j = 0; j < N; ++j) {
      double s = 0;
      for (int i = 0; i < M; ++i) s += X[i * K + p] * G[i * N + j];
      dWr[p * N + j] += s;
    }
  for (int i = 0; i < K * N; ++i) CHECK(dW[i] == doctest::Approx(dWr[i]).epsilon(1e-12));

  std::vector<double> db(N, 1.0), dbr(N, 1.0);
  k::colsum_acc(G.data(), db.data(), M, N);
  for (int j = 0; j < N; ++j)
    for (int i = 0; i < M; ++i) dbr[j] += G[i * N + j];
  for (int j = 0; j < N; ++j) CHECK(db[j] == doctest::Approx(dbr[j]).epsilon(1e-12));
}

TEST_CASE("vexp accuracy over the clamp range") {
  std::vector<double> xs, ys;
  for (double x = -39.9; x <= 39.9; x += 0.0137) xs.push_back(x);
  ys.resize(xs.size());
  k::vexp(xs.data(), ys.data(), xs.size());
  double maxrel = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double ref = std::exp(xs[i]);
    maxrel = std::max(maxrel, std::abs(ys[i] - ref) / ref);
  }
  CHECK(maxrel < 1e-9);
  // clamping: huge inputs behave like the boundary
  CHECK(k::fast_exp(1000.0) == k::fast_exp(40.0));
  CHECK(k::fast_exp(-1000.0) == k::fast_exp(-40.0));
}

TEST_CASE("activations: values and derivatives vs finite differences") {
  Rng rng(17);
  for (auto a : {k::Act::relu, k::Act::tanh_, k::Act::swish, k::Act::mish}) {
    CAPTURE(k::act_name(a));
    std::vector<double> x(64);
    for (auto& v : x) v = rng.normal() * 3.0;
    std::vector<double> y(64), dy(64, 1.0), dx(64, 0.0);
    k::act_forward(a, x.data(), y.data(), x.size());
    k::act_backward_acc(a, x.data(), dy.data(), dx.data(), x.size());
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::abs(x[i]) < 1e-4) continue;  // avoid the relu kink
      double xp = x[i] + h, xm = x[i] - h, yp, ym;
      k::act_forward(a, &xp, &yp, 1);
      k::act_forward(a, &xm, &ym, 1);
      const double fd = (yp - ym) / (2 * h);
      CHECK(std::abs(dx[i] - fd) < 1e-5);
    }
  }
}

TEST_CASE("activation identities") {
  // swish(0)=0, mish(0)=0, tanh(0)=0, relu(-x)=0
  for (auto a : {k::Act::swish, k::Act::mish, k::Act::tanh_}) {
    double x = 0.0, y = -1;
    k::act_forward(a, &x, &y, 1);
    CHECK(y == doctest::Approx(0.0));
  }
  double x = -3.0, y = 1;
  k::act_forward(k::Act::relu, &x, &y, 1);
  CHECK(y == 0.0);
  // large-x asymptote: swish(x) ~ x, mish(x) ~ x
  for (auto a : {k::Act::swish, k::Act::mish}) {
    double big = 30.0, out = 0;
    k::act_forward(a, &big, &out, 1);
    CHECK(out == doctest::Approx(30.0).epsilon(1e-9));
  }
}
