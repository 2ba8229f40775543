#pragma once

#include <string>
#include <vector>

#include "qdq/kernels.hpp"
#include "qdq/rng.hpp"
#include "qdq/tensor.hpp"

namespace qdq {

using kern::Act;

// Fully-connected network. W[l] is (dims[l] x dims[l+1]) row-major, b[l] is
// dims[l+1]. norm[l] applies a non-learnable layer normalization to the
// pre-activation (optional switch; off in every shipped configuration).
struct Mlp {
  std::vector<int> dims;
  std::vector<Tensor> W;
  std::vector<Tensor> b;
  std::vector<Act> act;
  std::vector<std::uint8_t> norm;

  int layers() const { return static_cast<int>(W.size()); }
  int in_dim() const { return dims.front(); }
  int out_dim() const { return dims.back(); }
  std::size_t param_count() const;
};

// Uniform fan-in init: W, b ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)). Draw order
// is fixed (per layer: W row-major, then b) so a seed pins every weight.
Mlp make_mlp(const std::vector<int>& dims, const std::vector<Act>& act, Rng& rng,
             const std::vector<std::uint8_t>& norm = {});

// convenience: `hidden` layers of width `width`, hidden activation `a`,
// identity output
Mlp make_mlp(int in, int width, int hidden_layers, int out, Act a, Rng& rng);

constexpr double kLayerNormEps = 1e-5;

// in place layer normalization over each row of X
void layernorm_rows(double* X, int rows, int cols);

// Scratch for the allocation-free forward pass (hot path: bootstrap sampling).
struct MlpScratch {
  std::vector<double> a, b;
  void ensure(std::size_t n) {
    if (a.size() < n) a.resize(n);
    if (b.size() < n) b.resize(n);
  }
};

// Y (rows x out_dim) = net(X (rows x in_dim)); no allocations beyond scratch
void mlp_forward(const Mlp& net, const double* X, int rows, double* Y,
                 MlpScratch& scratch);

// allocating convenience wrapper
Tensor mlp_forward(const Mlp& net, const Tensor& X);

// Network checkpoint container, magic "QDQNN1": layer dims, activation and
// normalization tags, then the raw little-endian weight/bias arrays in layer
// order. Round trips are bit-exact.
void save_mlp(const std::string& path, const Mlp& net);
Mlp load_mlp(const std::string& path);

// embedded form used by the model/checkpoint containers
class BinWriter;
class BinReader;
void write_mlp(BinWriter& w, const Mlp& net);
Mlp read_mlp(BinReader& r);

}  // namespace qdq
