#include "qdq/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include "qdq/io.hpp"

namespace qdq {

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (int l = 0; l < layers(); ++l) n += W[l].size() + b[l].size();
  return n;
}

Mlp make_mlp(const std::vector<int>& dims, const std::vector<Act>& act, Rng& rng,
             const std::vector<std::uint8_t>& norm) {
  if (dims.size() < 2) throw std::logic_error("mlp needs at least one layer");
  if (act.size() != dims.size() - 1) throw std::logic_error("one activation per layer");
  Mlp net;
  net.dims = dims;
  net.act = act;
  net.norm = norm.empty() ? std::vector<std::uint8_t>(dims.size() - 1, 0) : norm;
  if (net.norm.size() != dims.size() - 1) throw std::logic_error("one norm flag per layer");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    Tensor W(dims[l], dims[l + 1]);
    for (auto& w : W.v) w = rng.uniform(-bound, bound);
    Tensor b(1, dims[l + 1]);
    for (auto& x : b.v) x = rng.uniform(-bound, bound);
    net.W.push_back(std::move(W));
    net.b.push_back(std::move(b));
  }
  return net;
}

Mlp make_mlp(int in, int width, int hidden_layers, int out, Act a, Rng& rng) {
  std::vector<int> dims{in};
  for (int i = 0; i < hidden_layers; ++i) dims.push_back(width);
  dims.push_back(out);
  std::vector<Act> act(hidden_layers, a);
  act.push_back(Act::identity);
  return make_mlp(dims, act, rng);
}

void layernorm_rows(double* X, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    double* x = X + static_cast<std::size_t>(i) * cols;
    double mean = 0;
    for (int j = 0; j < cols; ++j) mean += x[j];
    mean /= cols;
    double var = 0;
    for (int j = 0; j < cols; ++j) {
      const double d = x[j] - mean;
      var += d * d;
    }
    var /= cols;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int j = 0; j < cols; ++j) x[j] = (x[j] - mean) * inv;
  }
}

void mlp_forward(const Mlp& net, const double* X, int rows, double* Y,
                 MlpScratch& scratch) {
  int maxd = 0;
  for (int d : net.dims) maxd = d > maxd ? d : maxd;
  scratch.ensure(static_cast<std::size_t>(rows) * maxd);
  const double* cur = X;
  double* ping = scratch.a.data();
  double* pong = scratch.b.data();
  const int L = net.layers();
  for (int l = 0; l < L; ++l) {
    const int K = net.dims[l];
    const int N = net.dims[l + 1];
    double* dst = (l == L - 1) ? Y : ping;
    kern::affine(cur, net.W[l].data(), net.b[l].data(), dst, rows, K, N);
    if (net.norm[l]) layernorm_rows(dst, rows, N);
    kern::act_forward(net.act[l], dst, dst, static_cast<std::size_t>(rows) * N);
    cur = dst;
    std::swap(ping, pong);
  }
}

Tensor mlp_forward(const Mlp& net, const Tensor& X) {
  if (X.cols != net.in_dim()) throw std::logic_error("mlp_forward: input width mismatch");
  Tensor Y(X.rows, net.out_dim());
  MlpScratch s;
  mlp_forward(net, X.data(), X.rows, Y.data(), s);
  return Y;
}

void write_mlp(BinWriter& w, const Mlp& net) {
  w.magic("QDQNN1");
  w.u32(static_cast<std::uint32_t>(net.dims.size()));
  for (int d : net.dims) w.u64(static_cast<std::uint64_t>(d));
  for (Act a : net.act) w.u8(static_cast<std::uint8_t>(a));
  for (std::uint8_t f : net.norm) w.u8(f);
  for (int l = 0; l < net.layers(); ++l) {
    w.f64s(net.W[l].data(), net.W[l].size());
    w.f64s(net.b[l].data(), net.b[l].size());
  }
}

Mlp read_mlp(BinReader& r) {
  r.expect_magic("QDQNN1", "network checkpoint");
  const std::uint32_t nd = r.u32();
  if (nd < 2 || nd > 64) throw ArtifactError("corrupt network checkpoint: " + r.path());
  Mlp net;
  net.dims.resize(nd);
  for (auto& d : net.dims) d = static_cast<int>(r.u64());
  net.act.resize(nd - 1);
  for (auto& a : net.act) a = static_cast<Act>(r.u8());
  net.norm.resize(nd - 1);
  for (auto& f : net.norm) f = r.u8();
  for (std::uint32_t l = 0; l + 1 < nd; ++l) {
    Tensor W(net.dims[l], net.dims[l + 1]);
    r.f64s(W.data(), W.size());
    Tensor b(1, net.dims[l + 1]);
    r.f64s(b.data(), b.size());
    net.W.push_back(std::move(W));
    net.b.push_back(std::move(b));
  }
  return net;
}

void save_mlp(const std::string& path, const Mlp& net) {
  BinWriter w(path);
  write_mlp(w, net);
  w.close();
}

Mlp load_mlp(const std::string& path) {
  BinReader r(path);
  return read_mlp(r);
}

}  // namespace qdq
