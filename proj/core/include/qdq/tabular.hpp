#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qdq/rng.hpp"

namespace qdq {

// Exact finite MDP. P is [nS x nA x nS] row-stochastic, R is [nS x nA].
// Terminal states self-loop with zero reward and both operators treat them
// as absorbing: the backed-up value at a terminal state is just r(s,a).
struct TabularMdp {
  int nS = 0;
  int nA = 0;
  std::vector<double> P;
  std::vector<double> R;
  double gamma = 0.99;
  std::vector<std::uint8_t> terminal;

  double p(int s, int a, int s2) const { return P[(s * nA + a) * nS + s2]; }
  double r(int s, int a) const { return R[s * nA + a]; }
  void validate() const;
};

// Dirichlet(1) transition rows, rewards uniform in [-1, 1]; optionally the
// last n_terminal states are absorbing
TabularMdp random_mdp(int nS, int nA, double gamma, Rng& rng, int n_terminal = 0);

// replayable MDP container (magic "QDQMD1"), used for counterexamples
void save_mdp(const std::string& path, const TabularMdp& mdp);
TabularMdp load_mdp(const std::string& path);

using TabularQ = std::vector<double>;  // [nS x nA]

// fixed penalty data for the operator theory: h and membership per (s, a)
struct PenaltyTable {
  std::vector<double> h;
  std::vector<std::uint8_t> member;
  double alpha = 0.95;
  double beta = 0.9;

  double factor(int idx) const;  // beta outside, min(1/h, beta) inside
  static PenaltyTable none(int nS, int nA, double alpha, double beta);
  static PenaltyTable all(int nS, int nA, double h, double alpha, double beta);
};

// r + gamma * E max_a' Q
TabularQ classic_bellman(const TabularMdp& mdp, const TabularQ& Q);

// r + gamma * E max_a' [alpha Q + (1 - alpha) factor Q]
TabularQ qdq_bellman(const TabularMdp& mdp, const TabularQ& Q,
                     const PenaltyTable& pen);

struct ViResult {
  TabularQ Q;
  int iterations = 0;
  double residual = 0.0;
};

ViResult value_iteration(const TabularMdp& mdp, bool use_qdq,
                         const PenaltyTable& pen, double tol = 1e-10,
                         int max_iters = 200000);

double sup_norm(const TabularQ& a);
double sup_diff(const TabularQ& a, const TabularQ& b);

// contraction modulus c = alpha + (1 - alpha) beta
double contraction_modulus(double alpha, double beta);

// max update ratio ||TQ - TQ'|| / ||Q - Q'|| over random Q-pairs; the
// operator contracts iff this stays at or below c * gamma
double verify_contraction(const TabularMdp& mdp, const PenaltyTable& pen,
                          int trials, std::uint64_t seed);

struct SuboptReport {
  double gap = 0.0;    // measured ||Q_pen - Q*||_inf
  double bound = 0.0;  // gamma (1-alpha)(1-f_min)(1-c gamma)^-1 ||Q*||_inf
};

// fixed-point gap against the closed-form bound. With an all-outside table
// the factor floor f_min is beta and the bound is the canonical coefficient;
// mixed/inside tables fall back to the weaker floor min over entries.
SuboptReport verify_suboptimality(const TabularMdp& mdp, const PenaltyTable& pen);

// (c1 - c2) Q with c1 = alpha + (1-alpha) beta, c2 = alpha + (1-alpha)/h;
// positive whenever Q > 0 and h > 1/beta
double gap_expanding_margin(double Q, double h, double alpha, double beta);
bool verify_gap_expanding(double Q, double h, double alpha, double beta);

struct StepError {
  double zeta = 0.0;      // ||Q^k - Q*||_inf
  double bound_rhs = 0.0; // delta*_k + xi_k + gamma * zeta_{k-1}
};

// tracks the per-step error chain of penalized value iteration against the
// classic-iteration error plus the operator-shift term
std::vector<StepError> stepwise_error(const TabularMdp& mdp,
                                      const PenaltyTable& pen, int iterations);

}  // namespace qdq
