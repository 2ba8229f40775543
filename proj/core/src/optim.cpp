#include "qdq/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "qdq/errors.hpp"
#include "qdq/io.hpp"

namespace qdq {

void adam_step(Tensor& p, const Tensor& g, AdamState& st, const AdamConfig& cfg,
               const std::string& label) {
  if (!p.same_shape(g)) throw std::logic_error("adam_step: grad shape mismatch");
  if (st.m.size() != p.size()) {
    st.m = Tensor(p.rows, p.cols);
    st.v = Tensor(p.rows, p.cols);
    st.t = 0;
  }
  for (double gv : g.v) {
    if (!std::isfinite(gv))
      throw NumericError("non-finite gradient in " + label);
  }
  st.t += 1;
  const double t = static_cast<double>(st.t);
  const double b1t = std::pow(cfg.beta1, t);
  const double b2t = std::pow(cfg.beta2, t);
  const double bias1 = 1.0 - b1t;
  const double bias2 = 1.0 - b2t;

  if (!cfg.rectified) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gv = g.v[i];
      st.m.v[i] = cfg.beta1 * st.m.v[i] + (1.0 - cfg.beta1) * gv;
      st.v.v[i] = cfg.beta2 * st.v.v[i] + (1.0 - cfg.beta2) * gv * gv;
      const double mhat = st.m.v[i] / bias1;
      const double vhat = st.v.v[i] / bias2;
      p.v[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    return;
  }

  // RAdam: variance rectification (Liu et al.); unrectified steps fall back
  // to the bias-corrected first moment alone.
  const double rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0;
  const double rho_t = rho_inf - 2.0 * t * b2t / bias2;
  double rect = 0.0;
  const bool rectified = rho_t > 5.0;
  if (rectified) {
    rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                     ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gv = g.v[i];
    st.m.v[i] = cfg.beta1 * st.m.v[i] + (1.0 - cfg.beta1) * gv;
    st.v.v[i] = cfg.beta2 * st.v.v[i] + (1.0 - cfg.beta2) * gv * gv;
    const double mhat = st.m.v[i] / bias1;
    if (rectified) {
      const double vhat = std::sqrt(st.v.v[i] / bias2);
      p.v[i] -= cfg.lr * rect * mhat / (vhat + cfg.eps);
    } else {
      p.v[i] -= cfg.lr * mhat;
    }
  }
}

void MlpOptimizer::init(const Mlp& net) {
  states.assign(static_cast<std::size_t>(net.layers()) * 2, AdamState{});
  for (int l = 0; l < net.layers(); ++l) {
    states[2 * l].m = Tensor(net.W[l].rows, net.W[l].cols);
    states[2 * l].v = Tensor(net.W[l].rows, net.W[l].cols);
    states[2 * l + 1].m = Tensor(net.b[l].rows, net.b[l].cols);
    states[2 * l + 1].v = Tensor(net.b[l].rows, net.b[l].cols);
  }
}

void MlpOptimizer::step(Mlp& net, const Mlp& grads, const std::string& label) {
  for (int l = 0; l < net.layers(); ++l) {
    adam_step(net.W[l], grads.W[l], states[2 * l], cfg,
              label + ".W" + std::to_string(l));
    adam_step(net.b[l], grads.b[l], states[2 * l + 1], cfg,
              label + ".b" + std::to_string(l));
  }
}

Mlp make_grads(const Mlp& net) {
  Mlp g;
  g.dims = net.dims;
  g.act = net.act;
  g.norm = net.norm;
  for (int l = 0; l < net.layers(); ++l) {
    g.W.emplace_back(net.W[l].rows, net.W[l].cols);
    g.b.emplace_back(net.b[l].rows, net.b[l].cols);
  }
  return g;
}

void zero_grads(Mlp& grads) {
  for (auto& t : grads.W) t.zero();
  for (auto& t : grads.b) t.zero();
}

void polyak_update(Mlp& target, const Mlp& online, double kappa) {
  for (int l = 0; l < target.layers(); ++l) {
    for (std::size_t i = 0; i < target.W[l].size(); ++i)
      target.W[l].v[i] = kappa * online.W[l].v[i] + (1.0 - kappa) * target.W[l].v[i];
    for (std::size_t i = 0; i < target.b[l].size(); ++i)
      target.b[l].v[i] = kappa * online.b[l].v[i] + (1.0 - kappa) * target.b[l].v[i];
  }
}

void write_adam(BinWriter& w, const AdamState& st) {
  w.i64(st.t);
  w.u32(static_cast<std::uint32_t>(st.m.rows));
  w.u32(static_cast<std::uint32_t>(st.m.cols));
  w.f64s(st.m.data(), st.m.size());
  w.f64s(st.v.data(), st.v.size());
}

AdamState read_adam(BinReader& r) {
  AdamState st;
  st.t = r.i64();
  const int rows = static_cast<int>(r.u32());
  const int cols = static_cast<int>(r.u32());
  st.m = Tensor(rows, cols);
  r.f64s(st.m.data(), st.m.size());
  st.v = Tensor(rows, cols);
  r.f64s(st.v.data(), st.v.size());
  return st;
}

void write_optimizer(BinWriter& w, const MlpOptimizer& opt) {
  w.u32(static_cast<std::uint32_t>(opt.states.size()));
  for (const auto& st : opt.states) write_adam(w, st);
}

void read_optimizer(BinReader& r, MlpOptimizer& opt) {
  const std::uint32_t n = r.u32();
  opt.states.clear();
  for (std::uint32_t i = 0; i < n; ++i) opt.states.push_back(read_adam(r));
}

}  // namespace qdq
