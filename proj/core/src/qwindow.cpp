#include "qdq/qwindow.hpp"

#include <cmath>

#include "qdq/errors.hpp"
#include "qdq/io.hpp"

namespace qdq {

double QDataset::q_mean() const {
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (const auto& x : samples) s += x.q;
  return s / static_cast<double>(samples.size());
}

double QDataset::q_std() const {
  if (samples.size() < 2) return 0.0;
  const double m = q_mean();
  double s = 0.0;
  for (const auto& x : samples) s += (x.q - m) * (x.q - m);
  return std::sqrt(s / static_cast<double>(samples.size() - 1));
}

QDataset build_q_dataset(const Dataset& ds, const QWindowConfig& cfg) {
  if (cfg.k <= 0 || cfg.window <= 0)
    throw ConfigError("qwindow: k and window must be positive");
  if (cfg.k > cfg.window) throw ConfigError("qwindow: k must not exceed window");
  if (!(cfg.gamma_disc > 0.0 && cfg.gamma_disc < 1.0))
    throw ConfigError("qwindow: gamma_disc must lie in (0,1)");
  if (ds.trajectories.empty()) throw ConfigError("qwindow: dataset is empty");

  QDataset out;
  out.env_name = ds.env_name;
  out.state_dim = ds.state_dim;
  out.action_dim = ds.action_dim;
  out.cfg = cfg;

  const double q_cap =
      ds.r_max * (1.0 - std::pow(cfg.gamma_disc, cfg.window)) / (1.0 - cfg.gamma_disc);

  for (std::uint32_t ti = 0; ti < ds.trajectories.size(); ++ti) {
    const auto& steps = ds.trajectories[ti].steps;
    const int L = static_cast<int>(steps.size());
    if (L == 0) continue;
    const int start_limit = std::max(L - cfg.window + 1, 1);
    for (int start = 0; start < start_limit; start += cfg.k) {
      QSample qs;
      qs.s = steps[start].s;
      qs.a = steps[start].a;
      qs.traj = ti;
      qs.offset = static_cast<std::uint32_t>(start);
      double disc = 1.0;
      for (int j = 0; j < cfg.window && start + j < L; ++j) {
        const auto& tr = steps[start + j];
        qs.q += disc * tr.r;
        disc *= cfg.gamma_disc;
        if (tr.terminal) {
          qs.terminal_truncated = true;
          break;
        }
      }
      if (std::abs(qs.q) > q_cap + 1e-9)
        throw NumericError("qwindow: sample exceeds the geometric cap");
      out.samples.push_back(std::move(qs));
    }
  }
  return out;
}

double truncation_bound(double gamma_disc, double r_max, int window) {
  if (!(gamma_disc > 0.0 && gamma_disc < 1.0))
    throw ConfigError("truncation_bound: gamma_disc must lie in (0,1)");
  if (r_max < 0.0) throw ConfigError("truncation_bound: r_max must be >= 0");
  return std::pow(gamma_disc, window) * r_max / (1.0 - gamma_disc);
}

void save_q_dataset(const std::string& path, const QDataset& qs) {
  BinWriter w(path);
  w.magic("QDQQS1");
  w.str(qs.config);
  w.str(qs.env_name);
  w.u32(qs.state_dim);
  w.u32(qs.action_dim);
  w.u32(qs.cfg.k);
  w.u32(qs.cfg.window);
  w.f64(qs.cfg.gamma_disc);
  w.u32(static_cast<std::uint32_t>(qs.samples.size()));
  for (const auto& x : qs.samples) {
    w.f64s(x.s.data(), x.s.size());
    w.f64s(x.a.data(), x.a.size());
    w.f64(x.q);
    w.u8(x.terminal_truncated ? 1 : 0);
    w.u32(x.traj);
    w.u32(x.offset);
  }
  w.close();
}

QDataset load_q_dataset(const std::string& path) {
  BinReader r(path);
  r.expect_magic("QDQQS1", "q-value dataset");
  QDataset qs;
  qs.config = r.str();
  qs.env_name = r.str();
  qs.state_dim = static_cast<int>(r.u32());
  qs.action_dim = static_cast<int>(r.u32());
  qs.cfg.k = static_cast<int>(r.u32());
  qs.cfg.window = static_cast<int>(r.u32());
  qs.cfg.gamma_disc = r.f64();
  const std::uint32_t n = r.u32();
  qs.samples.resize(n);
  for (auto& x : qs.samples) {
    x.s.resize(qs.state_dim);
    r.f64s(x.s.data(), x.s.size());
    x.a.resize(qs.action_dim);
    r.f64s(x.a.data(), x.a.size());
    x.q = r.f64();
    x.terminal_truncated = r.u8() != 0;
    x.traj = r.u32();
    x.offset = r.u32();
  }
  return qs;
}

}  // namespace qdq
