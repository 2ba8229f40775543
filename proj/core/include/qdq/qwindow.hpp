#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qdq/dataset.hpp"

namespace qdq {

struct QWindowConfig {
  int k = 10;          // slide step
  int window = 200;    // width
  double gamma_disc = 0.99;
};

// One partial discounted return: q approximates Q(s, a) under the behavior
// policy. terminal_truncated means the window hit a terminal flag, in which
// case q is the exact remaining return; otherwise the tail was cut by the
// window edge (or the episode's timeout, same thing).
struct QSample {
  std::vector<double> s;
  std::vector<double> a;
  double q = 0.0;
  bool terminal_truncated = false;
  std::uint32_t traj = 0;
  std::uint32_t offset = 0;
};

struct QDataset {
  std::string config;
  std::string env_name;
  int state_dim = 0;
  int action_dim = 0;
  QWindowConfig cfg;
  std::vector<QSample> samples;

  // moments used for standardization downstream
  double q_mean() const;
  double q_std() const;
};

// Windows start at offsets 0, k, 2k, ... while offset < max(L - window + 1, 1)
// for a trajectory of length L, so a short trajectory still yields its one
// window. Within a window, q = sum_j gamma^j r at offset+j, stopping at the
// window edge, the trajectory end, or a terminal flag (whose own reward
// counts; nothing after it does).
QDataset build_q_dataset(const Dataset& ds, const QWindowConfig& cfg);

// upper bound on |Q_window - Q_infinity|: gamma^window * r_max / (1 - gamma)
double truncation_bound(double gamma_disc, double r_max, int window);

void save_q_dataset(const std::string& path, const QDataset& qs);
QDataset load_q_dataset(const std::string& path);

}  // namespace qdq
