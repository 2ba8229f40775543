#pragma once

#include <vector>

#include "qdq/kernels.hpp"
#include "qdq/mlp.hpp"
#include "qdq/tensor.hpp"

namespace qdq {

// Reverse-mode tape over a closed primitive set: affine layers, the listed
// activations, elementwise arithmetic, square/log/exp/clamp/min, mean
// reduction, column concat/slice, layer normalization and a fused diagonal
// Gaussian log-density. Nodes evaluate eagerly as they are built; backward()
// runs one reverse sweep and accumulates into the Tensors bound via param().
class Graph {
 public:
  enum class Op : std::uint8_t {
    kInput, kParam, kAffine, kLayerNorm, kAct, kAdd, kSub, kMul, kMin,
    kScaleShift, kSquare, kLog, kExp, kClamp, kMeanAll, kConcatCols,
    kSliceCols, kGaussLogPdf,
  };

  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    double p0 = 0.0, p1 = 0.0;
    kern::Act act = kern::Act::identity;
    Tensor val;
    Tensor grad;          // allocated during backward
    Tensor* bound_val = nullptr;
    Tensor* bound_grad = nullptr;
    const Tensor* aux = nullptr;  // constant data (Gaussian observations)
    bool needs_grad = false;
  };

  int input(Tensor t);
  // parameter leaf; backward accumulates d(loss)/d(value) into *grad
  int param(Tensor* value, Tensor* grad);

  int affine(int x, int W, int b);
  int layernorm(int x);
  int act(int x, kern::Act a);
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int minimum(int a, int b);
  int scale_shift(int a, double mul, double add);  // mul * a + add
  int square(int a);
  int log_(int a);
  int exp_(int a);
  int clamp(int a, double lo, double hi);  // gradient passes strictly inside (lo, hi)
  int mean_all(int a);
  int concat_cols(int a, int b);
  int slice_cols(int a, int col0, int ncols);
  // per-row sum_j [ -0.5 z^2 - logstd - 0.5 ln(2 pi) ], z = (obs - mu) e^-logstd
  // obs is aliased, not copied: it must stay alive until backward() is done
  int gauss_logpdf(int mu, int logstd, const Tensor* obs);

  // builds affine(+norm)+activation chain; pass grads=nullptr to treat the
  // network as frozen (no parameter gradients, input gradient still flows)
  int apply_mlp(const Mlp& net, Mlp* grads, int x);

  double scalar(int node) const;
  const Tensor& value(int node) const { return nodes_[node].val; }
  // seeds d(node)=1 (node must be 1x1) and sweeps the tape in reverse
  void backward(int node);
  std::size_t size() const { return nodes_.size(); }

 private:
  int push(Node n);
  Tensor& grad_of(int i);
  std::vector<Node> nodes_;
};

// convenience: mean((a-b)^2) where b is a constant target
int mse_against(Graph& g, int pred, const Tensor& target);

}  // namespace qdq
