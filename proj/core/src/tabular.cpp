#include "qdq/tabular.hpp"

#include <algorithm>
#include <cmath>

#include "qdq/errors.hpp"
#include "qdq/io.hpp"

namespace qdq {

void TabularMdp::validate() const {
  if (nS < 1 || nA < 1) throw ConfigError("mdp: need at least one state and action");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("mdp: gamma must be in (0,1)");
  if (static_cast<int>(P.size()) != nS * nA * nS ||
      static_cast<int>(R.size()) != nS * nA ||
      static_cast<int>(terminal.size()) != nS)
    throw ConfigError("mdp: shape mismatch");
  for (int s = 0; s < nS; ++s)
    for (int a = 0; a < nA; ++a) {
      double sum = 0.0;
      for (int s2 = 0; s2 < nS; ++s2) {
        const double v = p(s, a, s2);
        if (v < 0.0) throw ConfigError("mdp: negative transition probability");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-12)
        throw ConfigError("mdp: transition row does not sum to 1");
      if (terminal[s] && (r(s, a) != 0.0 || p(s, a, s) != 1.0))
        throw ConfigError("mdp: terminal states must self-loop with zero reward");
    }
}

TabularMdp random_mdp(int nS, int nA, double gamma, Rng& rng, int n_terminal) {
  TabularMdp m;
  m.nS = nS;
  m.nA = nA;
  m.gamma = gamma;
  m.P.assign(static_cast<std::size_t>(nS) * nA * nS, 0.0);
  m.R.resize(static_cast<std::size_t>(nS) * nA);
  m.terminal.assign(nS, 0);
  for (int s = nS - n_terminal; s < nS; ++s) m.terminal[s] = 1;
  for (int s = 0; s < nS; ++s)
    for (int a = 0; a < nA; ++a) {
      if (m.terminal[s]) {
        m.P[(s * nA + a) * nS + s] = 1.0;
        m.R[s * nA + a] = 0.0;
        continue;
      }
      // Dirichlet(1) row: normalized unit exponentials
      double sum = 0.0;
      for (int s2 = 0; s2 < nS; ++s2) {
        const double e = -std::log(1.0 - rng.uniform());
        m.P[(s * nA + a) * nS + s2] = e;
        sum += e;
      }
      for (int s2 = 0; s2 < nS; ++s2) m.P[(s * nA + a) * nS + s2] /= sum;
      m.R[s * nA + a] = 2.0 * rng.uniform() - 1.0;
    }
  // exact row sums for validate()'s 1e-12 gate
  for (int s = 0; s < nS; ++s)
    for (int a = 0; a < nA; ++a) {
      double sum = 0.0;
      for (int s2 = 0; s2 < nS; ++s2) sum += m.p(s, a, s2);
      for (int s2 = 0; s2 < nS; ++s2) m.P[(s * nA + a) * nS + s2] /= sum;
    }
  m.validate();
  return m;
}

void save_mdp(const std::string& path, const TabularMdp& mdp) {
  mdp.validate();
  BinWriter w(path);
  w.magic("QDQMD1");
  w.u32(static_cast<std::uint32_t>(mdp.nS));
  w.u32(static_cast<std::uint32_t>(mdp.nA));
  w.f64(mdp.gamma);
  w.f64s(mdp.P.data(), mdp.P.size());
  w.f64s(mdp.R.data(), mdp.R.size());
  w.bytes(mdp.terminal.data(), mdp.terminal.size());
  w.close();
}

TabularMdp load_mdp(const std::string& path) {
  BinReader r(path);
  r.expect_magic("QDQMD1", "tabular mdp");
  TabularMdp m;
  m.nS = static_cast<int>(r.u32());
  m.nA = static_cast<int>(r.u32());
  m.gamma = r.f64();
  if (m.nS < 1 || m.nA < 1 || m.nS > 100000 || m.nA > 100000)
    throw ArtifactError("mdp file has implausible dimensions: " + path);
  m.P.resize(static_cast<std::size_t>(m.nS) * m.nA * m.nS);
  m.R.resize(static_cast<std::size_t>(m.nS) * m.nA);
  m.terminal.resize(m.nS);
  r.f64s(m.P.data(), m.P.size());
  r.f64s(m.R.data(), m.R.size());
  r.bytes(m.terminal.data(), m.terminal.size());
  m.validate();
  return m;
}

double PenaltyTable::factor(int idx) const {
  if (!member.empty() && member[idx])
    return std::min(1.0 / h[idx], beta);
  return beta;
}

PenaltyTable PenaltyTable::none(int nS, int nA, double alpha, double beta) {
  PenaltyTable p;
  p.alpha = alpha;
  p.beta = beta;
  p.h.assign(static_cast<std::size_t>(nS) * nA, 0.0);
  p.member.assign(static_cast<std::size_t>(nS) * nA, 0);
  return p;
}

PenaltyTable PenaltyTable::all(int nS, int nA, double h, double alpha, double beta) {
  PenaltyTable p;
  p.alpha = alpha;
  p.beta = beta;
  p.h.assign(static_cast<std::size_t>(nS) * nA, h);
  p.member.assign(static_cast<std::size_t>(nS) * nA, 1);
  return p;
}

namespace {

// shared backup loop; next_value(s2) supplies the bracketed max term
template <class NextValue>
TabularQ backup(const TabularMdp& mdp, NextValue&& next_value) {
  TabularQ out(static_cast<std::size_t>(mdp.nS) * mdp.nA);
  std::vector<double> nv(mdp.nS);
  for (int s2 = 0; s2 < mdp.nS; ++s2) nv[s2] = next_value(s2);
  for (int s = 0; s < mdp.nS; ++s)
    for (int a = 0; a < mdp.nA; ++a) {
      const int idx = s * mdp.nA + a;
      if (mdp.terminal[s]) {
        out[idx] = mdp.r(s, a);
        continue;
      }
      double e = 0.0;
      for (int s2 = 0; s2 < mdp.nS; ++s2) e += mdp.p(s, a, s2) * nv[s2];
      out[idx] = mdp.r(s, a) + mdp.gamma * e;
    }
  return out;
}

}  // namespace

TabularQ classic_bellman(const TabularMdp& mdp, const TabularQ& Q) {
  return backup(mdp, [&](int s2) {
    double best = Q[s2 * mdp.nA];
    for (int a2 = 1; a2 < mdp.nA; ++a2) best = std::max(best, Q[s2 * mdp.nA + a2]);
    return best;
  });
}

TabularQ qdq_bellman(const TabularMdp& mdp, const TabularQ& Q,
                     const PenaltyTable& pen) {
  return backup(mdp, [&](int s2) {
    double best = -HUGE_VAL;
    for (int a2 = 0; a2 < mdp.nA; ++a2) {
      const int idx = s2 * mdp.nA + a2;
      const double ql = pen.factor(idx) * Q[idx];
      // alpha Q + (1-alpha) ql, arranged so factor = 1 or alpha = 1
      // reproduce the classic operator exactly
      best = std::max(best, Q[idx] + (1.0 - pen.alpha) * (ql - Q[idx]));
    }
    return best;
  });
}

ViResult value_iteration(const TabularMdp& mdp, bool use_qdq,
                         const PenaltyTable& pen, double tol, int max_iters) {
  if (!(tol > 0.0)) throw ConfigError("value_iteration: tol must be positive");
  ViResult res;
  res.Q.assign(static_cast<std::size_t>(mdp.nS) * mdp.nA, 0.0);
  for (int it = 1; it <= max_iters; ++it) {
    TabularQ next = use_qdq ? qdq_bellman(mdp, res.Q, pen)
                            : classic_bellman(mdp, res.Q);
    res.residual = sup_diff(next, res.Q);
    res.Q = std::move(next);
    res.iterations = it;
    if (res.residual < tol) return res;
  }
  throw NumericError("value iteration did not converge; last residual " +
                     std::to_string(res.residual));
}

double sup_norm(const TabularQ& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

double sup_diff(const TabularQ& a, const TabularQ& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double contraction_modulus(double alpha, double beta) {
  return alpha + (1.0 - alpha) * beta;
}

double verify_contraction(const TabularMdp& mdp, const PenaltyTable& pen,
                          int trials, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("verify_contraction: trials must be >= 1");
  const std::size_t sz = static_cast<std::size_t>(mdp.nS) * mdp.nA;
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Rng rng = derive_rng(seed, tag_hash("contraction"), static_cast<std::uint64_t>(t));
    TabularQ Q(sz), Q2(sz);
    for (std::size_t i = 0; i < sz; ++i) Q[i] = 20.0 * rng.uniform() - 10.0;
    for (std::size_t i = 0; i < sz; ++i) Q2[i] = 20.0 * rng.uniform() - 10.0;
    const double dq = sup_diff(Q, Q2);
    if (dq == 0.0) continue;
    const double df = sup_diff(qdq_bellman(mdp, Q, pen), qdq_bellman(mdp, Q2, pen));
    worst = std::max(worst, df / dq);
  }
  return worst;
}

SuboptReport verify_suboptimality(const TabularMdp& mdp, const PenaltyTable& pen) {
  const double c = contraction_modulus(pen.alpha, pen.beta);
  double f_min = pen.beta;
  for (std::size_t i = 0; i < pen.h.size(); ++i)
    f_min = std::min(f_min, pen.factor(static_cast<int>(i)));
  SuboptReport rep;
  const TabularQ q_star = value_iteration(mdp, false, pen).Q;
  const TabularQ q_pen = value_iteration(mdp, true, pen).Q;
  rep.gap = sup_diff(q_pen, q_star);
  rep.bound = mdp.gamma * (1.0 - pen.alpha) * (1.0 - f_min) /
              (1.0 - c * mdp.gamma) * sup_norm(q_star);
  // fixed points are only tol-accurate themselves
  rep.bound += 1e-6;
  return rep;
}

double gap_expanding_margin(double Q, double h, double alpha, double beta) {
  const double c1 = alpha + (1.0 - alpha) * beta;
  const double c2 = alpha + (1.0 - alpha) / h;
  return (c1 - c2) * Q;
}

bool verify_gap_expanding(double Q, double h, double alpha, double beta) {
  return gap_expanding_margin(Q, h, alpha, beta) > 0.0;
}

std::vector<StepError> stepwise_error(const TabularMdp& mdp,
                                      const PenaltyTable& pen, int iterations) {
  double f_min = pen.beta;
  for (std::size_t i = 0; i < pen.h.size(); ++i)
    f_min = std::min(f_min, pen.factor(static_cast<int>(i)));
  const TabularQ q_star = value_iteration(mdp, false, pen).Q;
  const std::size_t sz = q_star.size();

  std::vector<StepError> out;
  TabularQ q(sz, 0.0), q_classic(sz, 0.0);
  double zeta_prev = sup_diff(q, q_star);
  for (int k = 1; k <= iterations; ++k) {
    const double xi = mdp.gamma * (1.0 - pen.alpha) * (1.0 - f_min) * sup_norm(q);
    q = qdq_bellman(mdp, q, pen);
    q_classic = classic_bellman(mdp, q_classic);
    StepError e;
    e.zeta = sup_diff(q, q_star);
    const double delta_star = sup_diff(q_classic, q_star);
    e.bound_rhs = delta_star + xi + mdp.gamma * zeta_prev;
    out.push_back(e);
    zeta_prev = e.zeta;
  }
  return out;
}

}  // namespace qdq
