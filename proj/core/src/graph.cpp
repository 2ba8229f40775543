#include "qdq/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace qdq {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 ln(2 pi)

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) throw std::logic_error(std::string(op) + ": shape mismatch");
}
}  // namespace

int Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::grad_of(int i) {
  Node& n = nodes_[i];
  if (n.grad.rows != n.val.rows || n.grad.cols != n.val.cols)
    n.grad = Tensor(n.val.rows, n.val.cols);
  return n.grad;
}

int Graph::input(Tensor t) {
  Node n;
  n.op = Op::kInput;
  n.val = std::move(t);
  return push(std::move(n));
}

int Graph::param(Tensor* value, Tensor* grad) {
  Node n;
  n.op = Op::kParam;
  n.val = *value;  // copy keeps the tape immutable if the caller steps params
  n.bound_val = value;
  n.bound_grad = grad;
  n.needs_grad = grad != nullptr;
  return push(std::move(n));
}

int Graph::affine(int x, int W, int b) {
  const Tensor& X = nodes_[x].val;
  const Tensor& Wt = nodes_[W].val;
  const Tensor& Bt = nodes_[b].val;
  if (X.cols != Wt.rows || Bt.cols != Wt.cols || Bt.rows != 1)
    throw std::logic_error("affine: shape mismatch");
  Node n;
  n.op = Op::kAffine;
  n.a = x;
  n.b = W;
  n.c = b;
  n.needs_grad = nodes_[x].needs_grad || nodes_[W].needs_grad || nodes_[b].needs_grad;
  n.val = Tensor(X.rows, Wt.cols);
  kern::affine(X.data(), Wt.data(), Bt.data(), n.val.data(), X.rows, X.cols, Wt.cols);
  return push(std::move(n));
}

int Graph::layernorm(int x) {
  Node n;
  n.op = Op::kLayerNorm;
  n.a = x;
  n.needs_grad = nodes_[x].needs_grad;
  n.val = nodes_[x].val;
  layernorm_rows(n.val.data(), n.val.rows, n.val.cols);
  return push(std::move(n));
}

int Graph::act(int x, kern::Act a) {
  Node n;
  n.op = Op::kAct;
  n.a = x;
  n.act = a;
  n.needs_grad = nodes_[x].needs_grad;
  const Tensor& X = nodes_[x].val;
  n.val = Tensor(X.rows, X.cols);
  kern::act_forward(a, X.data(), n.val.data(), X.size());
  return push(std::move(n));
}

int Graph::add(int a, int b) {
  check_same_shape(nodes_[a].val, nodes_[b].val, "add");
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.val = nodes_[a].val;
  const double* q = nodes_[b].val.data();
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val.v[i] += q[i];
  return push(std::move(n));
}

int Graph::sub(int a, int b) {
  check_same_shape(nodes_[a].val, nodes_[b].val, "sub");
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.val = nodes_[a].val;
  const double* q = nodes_[b].val.data();
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val.v[i] -= q[i];
  return push(std::move(n));
}

int Graph::mul(int a, int b) {
  check_same_shape(nodes_[a].val, nodes_[b].val, "mul");
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.val = nodes_[a].val;
  const double* q = nodes_[b].val.data();
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val.v[i] *= q[i];
  return push(std::move(n));
}

int Graph::minimum(int a, int b) {
  check_same_shape(nodes_[a].val, nodes_[b].val, "min");
  Node n;
  n.op = Op::kMin;
  n.a = a;
  n.b = b;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.val = nodes_[a].val;
  const double* q = nodes_[b].val.data();
  for (std::size_t i = 0; i < n.val.size(); ++i)
    n.val.v[i] = n.val.v[i] <= q[i] ? n.val.v[i] : q[i];
  return push(std::move(n));
}

int Graph::scale_shift(int a, double mul, double addc) {
  Node n;
  n.op = Op::kScaleShift;
  n.a = a;
  n.p0 = mul;
  n.p1 = addc;
  n.needs_grad = nodes_[a].needs_grad;
  n.val = nodes_[a].val;
  for (auto& x : n.val.v) x = mul * x + addc;
  return push(std::move(n));
}

int Graph::square(int a) {
  Node n;
  n.op = Op::kSquare;
  n.a = a;
  n.needs_grad = nodes_[a].needs_grad;
  n.val = nodes_[a].val;
  for (auto& x : n.val.v) x *= x;
  return push(std::move(n));
}

int Graph::log_(int a) {
  Node n;
  n.op = Op::kLog;
  n.a = a;
  n.needs_grad = nodes_[a].needs_grad;
  n.val = nodes_[a].val;
  for (auto& x : n.val.v) x = std::log(x);
  return push(std::move(n));
}

int Graph::exp_(int a) {
  Node n;
  n.op = Op::kExp;
  n.a = a;
  n.needs_grad = nodes_[a].needs_grad;
  n.val = nodes_[a].val;
  for (auto& x : n.val.v) x = std::exp(x);
  return push(std::move(n));
}

int Graph::clamp(int a, double lo, double hi) {
  Node n;
  n.op = Op::kClamp;
  n.a = a;
  n.p0 = lo;
  n.p1 = hi;
  n.needs_grad = nodes_[a].needs_grad;
  n.val = nodes_[a].val;
  for (auto& x : n.val.v) x = x < lo ? lo : (x > hi ? hi : x);
  return push(std::move(n));
}

int Graph::mean_all(int a) {
  Node n;
  n.op = Op::kMeanAll;
  n.a = a;
  n.needs_grad = nodes_[a].needs_grad;
  n.val = Tensor(1, 1);
  double s = 0;
  for (double x : nodes_[a].val.v) s += x;
  n.val.v[0] = s / static_cast<double>(nodes_[a].val.size());
  return push(std::move(n));
}

int Graph::concat_cols(int a, int b) {
  const Tensor& A = nodes_[a].val;
  const Tensor& B = nodes_[b].val;
  if (A.rows != B.rows) throw std::logic_error("concat_cols: row mismatch");
  Node n;
  n.op = Op::kConcatCols;
  n.a = a;
  n.b = b;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.val = Tensor(A.rows, A.cols + B.cols);
  for (int i = 0; i < A.rows; ++i) {
    double* dst = n.val.data() + static_cast<std::size_t>(i) * n.val.cols;
    const double* pa = A.data() + static_cast<std::size_t>(i) * A.cols;
    const double* pb = B.data() + static_cast<std::size_t>(i) * B.cols;
    for (int j = 0; j < A.cols; ++j) dst[j] = pa[j];
    for (int j = 0; j < B.cols; ++j) dst[A.cols + j] = pb[j];
  }
  return push(std::move(n));
}

int Graph::slice_cols(int a, int col0, int ncols) {
  const Tensor& A = nodes_[a].val;
  if (col0 < 0 || col0 + ncols > A.cols) throw std::logic_error("slice_cols: out of range");
  Node n;
  n.op = Op::kSliceCols;
  n.a = a;
  n.p0 = col0;
  n.p1 = ncols;
  n.needs_grad = nodes_[a].needs_grad;
  n.val = Tensor(A.rows, ncols);
  for (int i = 0; i < A.rows; ++i) {
    const double* src = A.data() + static_cast<std::size_t>(i) * A.cols + col0;
    double* dst = n.val.data() + static_cast<std::size_t>(i) * ncols;
    for (int j = 0; j < ncols; ++j) dst[j] = src[j];
  }
  return push(std::move(n));
}

int Graph::gauss_logpdf(int mu, int logstd, const Tensor* obs) {
  const Tensor& M = nodes_[mu].val;
  const Tensor& S = nodes_[logstd].val;
  check_same_shape(M, S, "gauss_logpdf");
  check_same_shape(M, *obs, "gauss_logpdf(obs)");
  Node n;
  n.op = Op::kGaussLogPdf;
  n.a = mu;
  n.b = logstd;
  n.aux = obs;
  n.needs_grad = nodes_[mu].needs_grad || nodes_[logstd].needs_grad;
  n.val = Tensor(M.rows, 1);
  for (int i = 0; i < M.rows; ++i) {
    double acc = 0;
    for (int j = 0; j < M.cols; ++j) {
      const double ls = S.at(i, j);
      const double z = (obs->at(i, j) - M.at(i, j)) * std::exp(-ls);
      acc += -0.5 * z * z - ls - kHalfLog2Pi;
    }
    n.val.at(i, 0) = acc;
  }
  return push(std::move(n));
}

int Graph::apply_mlp(const Mlp& net, Mlp* grads, int x) {
  int cur = x;
  for (int l = 0; l < net.layers(); ++l) {
    int Wn, bn;
    if (grads) {
      Wn = param(const_cast<Tensor*>(&net.W[l]), &grads->W[l]);
      bn = param(const_cast<Tensor*>(&net.b[l]), &grads->b[l]);
    } else {
      Wn = param(const_cast<Tensor*>(&net.W[l]), nullptr);
      bn = param(const_cast<Tensor*>(&net.b[l]), nullptr);
    }
    cur = affine(cur, Wn, bn);
    if (net.norm[l]) cur = layernorm(cur);
    if (net.act[l] != kern::Act::identity) cur = act(cur, net.act[l]);
  }
  return cur;
}

double Graph::scalar(int node) const {
  const Tensor& t = nodes_[node].val;
  if (t.size() != 1) throw std::logic_error("scalar: node is not 1x1");
  return t.v[0];
}

void Graph::backward(int node) {
  if (nodes_[node].val.size() != 1) throw std::logic_error("backward: seed must be 1x1");
  grad_of(node).v[0] = 1.0;
  for (int i = node; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.grad.size() == 0) continue;  // not on any path to the loss
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kParam:
        if (n.bound_grad) {
          if (n.bound_grad->size() != g.size())
            throw std::logic_error("param grad shape mismatch");
          for (std::size_t k = 0; k < g.size(); ++k) n.bound_grad->v[k] += g.v[k];
        }
        break;
      case Op::kAffine: {
        Node& xn = nodes_[n.a];
        Node& Wn = nodes_[n.b];
        Node& bn = nodes_[n.c];
        const int M = xn.val.rows, K = xn.val.cols, N = Wn.val.cols;
        if (xn.needs_grad)
          kern::gemm_nt_acc(g.data(), Wn.val.data(), grad_of(n.a).data(), M, N, K);
        if (Wn.needs_grad)
          kern::gemm_tn_acc(xn.val.data(), g.data(), grad_of(n.b).data(), M, K, N);
        if (bn.needs_grad) kern::colsum_acc(g.data(), grad_of(n.c).data(), M, N);
        break;
      }
      case Op::kLayerNorm: {
        if (!nodes_[n.a].needs_grad) break;
        // x-hat is n.val; dx = inv * (g - mean(g) - xhat * mean(g*xhat))
        const Tensor& X = nodes_[n.a].val;
        Tensor& dx = grad_of(n.a);
        const int C = X.cols;
        for (int r = 0; r < X.rows; ++r) {
          const double* x = X.data() + static_cast<std::size_t>(r) * C;
          const double* xh = n.val.data() + static_cast<std::size_t>(r) * C;
          const double* gr = g.data() + static_cast<std::size_t>(r) * C;
          double* dxr = dx.data() + static_cast<std::size_t>(r) * C;
          double mean = 0, var = 0;
          for (int j = 0; j < C; ++j) mean += x[j];
          mean /= C;
          for (int j = 0; j < C; ++j) {
            const double d = x[j] - mean;
            var += d * d;
          }
          var /= C;
          const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
          double gm = 0, gxm = 0;
          for (int j = 0; j < C; ++j) {
            gm += gr[j];
            gxm += gr[j] * xh[j];
          }
          gm /= C;
          gxm /= C;
          for (int j = 0; j < C; ++j) dxr[j] += inv * (gr[j] - gm - xh[j] * gxm);
        }
        break;
      }
      case Op::kAct:
        if (nodes_[n.a].needs_grad)
          kern::act_backward_acc(n.act, nodes_[n.a].val.data(), g.data(),
                                 grad_of(n.a).data(), g.size());
        break;
      case Op::kAdd:
        if (nodes_[n.a].needs_grad) {
          Tensor& da = grad_of(n.a);
          for (std::size_t k = 0; k < g.size(); ++k) da.v[k] += g.v[k];
        }
        if (nodes_[n.b].needs_grad) {
          Tensor& db = grad_of(n.b);
          for (std::size_t k = 0; k < g.size(); ++k) db.v[k] += g.v[k];
        }
        break;
      case Op::kSub:
        if (nodes_[n.a].needs_grad) {
          Tensor& da = grad_of(n.a);
          for (std::size_t k = 0; k < g.size(); ++k) da.v[k] += g.v[k];
        }
        if (nodes_[n.b].needs_grad) {
          Tensor& db = grad_of(n.b);
          for (std::size_t k = 0; k < g.size(); ++k) db.v[k] -= g.v[k];
        }
        break;
      case Op::kMul:
        if (nodes_[n.a].needs_grad) {
          Tensor& da = grad_of(n.a);
          const Tensor& B = nodes_[n.b].val;
          for (std::size_t k = 0; k < g.size(); ++k) da.v[k] += g.v[k] * B.v[k];
        }
        if (nodes_[n.b].needs_grad) {
          Tensor& db = grad_of(n.b);
          const Tensor& A = nodes_[n.a].val;
          for (std::size_t k = 0; k < g.size(); ++k) db.v[k] += g.v[k] * A.v[k];
        }
        break;
      case Op::kMin: {
        // ties route the gradient to the first argument
        const Tensor& A = nodes_[n.a].val;
        const Tensor& B = nodes_[n.b].val;
        if (nodes_[n.a].needs_grad) {
          Tensor& da = grad_of(n.a);
          for (std::size_t k = 0; k < g.size(); ++k)
            if (A.v[k] <= B.v[k]) da.v[k] += g.v[k];
        }
        if (nodes_[n.b].needs_grad) {
          Tensor& db = grad_of(n.b);
          for (std::size_t k = 0; k < g.size(); ++k)
            if (A.v[k] > B.v[k]) db.v[k] += g.v[k];
        }
        break;
      }
      case Op::kScaleShift:
        if (nodes_[n.a].needs_grad) {
          Tensor& da = grad_of(n.a);
          for (std::size_t k = 0; k < g.size(); ++k) da.v[k] += g.v[k] * n.p0;
        }
        break;
      case Op::kSquare:
        if (nodes_[n.a].needs_grad) {
          Tensor& da = grad_of(n.a);
          const Tensor& A = nodes_[n.a].val;
          for (std::size_t k = 0; k < g.size(); ++k) da.v[k] += g.v[k] * 2.0 * A.v[k];
        }
        break;
      case Op::kLog:
        if (nodes_[n.a].needs_grad) {
          Tensor& da = grad_of(n.a);
          const Tensor& A = nodes_[n.a].val;
          for (std::size_t k = 0; k < g.size(); ++k) da.v[k] += g.v[k] / A.v[k];
        }
        break;
      case Op::kExp:
        if (nodes_[n.a].needs_grad) {
          Tensor& da = grad_of(n.a);
          for (std::size_t k = 0; k < g.size(); ++k) da.v[k] += g.v[k] * n.val.v[k];
        }
        break;
      case Op::kClamp:
        if (nodes_[n.a].needs_grad) {
          Tensor& da = grad_of(n.a);
          const Tensor& A = nodes_[n.a].val;
          for (std::size_t k = 0; k < g.size(); ++k)
            if (A.v[k] > n.p0 && A.v[k] < n.p1) da.v[k] += g.v[k];
        }
        break;
      case Op::kMeanAll:
        if (nodes_[n.a].needs_grad) {
          Tensor& da = grad_of(n.a);
          const double s = g.v[0] / static_cast<double>(da.size());
          for (auto& x : da.v) x += s;
        }
        break;
      case Op::kConcatCols: {
        const Tensor& A = nodes_[n.a].val;
        const Tensor& B = nodes_[n.b].val;
        if (nodes_[n.a].needs_grad) {
          Tensor& da = grad_of(n.a);
          for (int r = 0; r < A.rows; ++r)
            for (int j = 0; j < A.cols; ++j) da.at(r, j) += g.at(r, j);
        }
        if (nodes_[n.b].needs_grad) {
          Tensor& db = grad_of(n.b);
          for (int r = 0; r < B.rows; ++r)
            for (int j = 0; j < B.cols; ++j) db.at(r, j) += g.at(r, A.cols + j);
        }
        break;
      }
      case Op::kSliceCols:
        if (nodes_[n.a].needs_grad) {
          Tensor& da = grad_of(n.a);
          const int col0 = static_cast<int>(n.p0);
          const int nc = static_cast<int>(n.p1);
          for (int r = 0; r < g.rows; ++r)
            for (int j = 0; j < nc; ++j) da.at(r, col0 + j) += g.at(r, j);
        }
        break;
      case Op::kGaussLogPdf: {
        const Tensor& M = nodes_[n.a].val;
        const Tensor& S = nodes_[n.b].val;
        for (int r = 0; r < M.rows; ++r) {
          const double gr = g.at(r, 0);
          if (gr == 0.0) continue;
          for (int j = 0; j < M.cols; ++j) {
            const double ls = S.at(r, j);
            const double inv = std::exp(-ls);
            const double z = (n.aux->at(r, j) - M.at(r, j)) * inv;
            if (nodes_[n.a].needs_grad) grad_of(n.a).at(r, j) += gr * z * inv;
            if (nodes_[n.b].needs_grad) grad_of(n.b).at(r, j) += gr * (z * z - 1.0);
          }
        }
        break;
      }
    }
  }
}

int mse_against(Graph& g, int pred, const Tensor& target) {
  int t = g.input(target);
  return g.mean_all(g.square(g.sub(pred, t)));
}

}  // namespace qdq
