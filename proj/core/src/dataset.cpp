#include "qdq/dataset.hpp"

#include <cmath>

#include "qdq/errors.hpp"
#include "qdq/io.hpp"

namespace qdq {

std::size_t Dataset::transition_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.steps.size();
  return n;
}

double Dataset::mean_trajectory_return() const {
  if (trajectories.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& t : trajectories) sum += t.total_return();
  return sum / static_cast<double>(trajectories.size());
}

Dataset generate_dataset(const EnvSpec& spec, const BehaviorPolicySpec& bp,
                         int n_trajectories, std::uint64_t seed) {
  if (n_trajectories < 1) throw ConfigError("n_trajectories must be >= 1");
  Dataset ds;
  ds.env_name = spec.name;
  ds.state_dim = spec.state_dim;
  ds.action_dim = spec.action_dim;
  ds.r_max = spec.r_max;
  ds.behavior = bp;
  ds.seed = seed;
  ds.trajectories.reserve(n_trajectories);
  for (int i = 0; i < n_trajectories; ++i)
    ds.trajectories.push_back(rollout_behavior(spec, bp, seed, i));
  for (const auto& t : ds.trajectories)
    for (const auto& tr : t.steps)
      if (std::abs(tr.r) > ds.r_max)
        throw NumericError("reward exceeds declared bound in " + spec.name);
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  BinWriter w(path);
  w.magic("QDQDS1");
  w.str(ds.config);
  w.str(ds.env_name);
  w.u32(ds.state_dim);
  w.u32(ds.action_dim);
  w.f64(ds.r_max);
  w.str(ds.behavior.tag);
  w.f64(ds.behavior.noise);
  for (double wt : ds.behavior.mixture_weights) w.f64(wt);
  w.u64(ds.seed);
  w.u32(static_cast<std::uint32_t>(ds.trajectories.size()));
  for (const auto& traj : ds.trajectories) {
    w.u64(traj.episode_seed);
    w.u32(static_cast<std::uint32_t>(traj.steps.size()));
    for (const auto& tr : traj.steps) {
      w.f64s(tr.s.data(), tr.s.size());
      w.f64s(tr.a.data(), tr.a.size());
      w.f64(tr.r);
      w.f64s(tr.s_next.data(), tr.s_next.size());
      w.u8(static_cast<std::uint8_t>((tr.terminal ? 1 : 0) | (tr.timeout ? 2 : 0)));
    }
  }
  w.close();
}

Dataset load_dataset(const std::string& path) {
  BinReader r(path);
  r.expect_magic("QDQDS1", "trajectory dataset");
  Dataset ds;
  ds.config = r.str();
  ds.env_name = r.str();
  ds.state_dim = static_cast<int>(r.u32());
  ds.action_dim = static_cast<int>(r.u32());
  ds.r_max = r.f64();
  ds.behavior.tag = r.str();
  ds.behavior.noise = r.f64();
  for (double& wt : ds.behavior.mixture_weights) wt = r.f64();
  ds.seed = r.u64();
  const std::uint32_t n = r.u32();
  ds.trajectories.resize(n);
  for (auto& traj : ds.trajectories) {
    traj.episode_seed = r.u64();
    const std::uint32_t steps = r.u32();
    traj.steps.resize(steps);
    for (auto& tr : traj.steps) {
      tr.s.resize(ds.state_dim);
      r.f64s(tr.s.data(), tr.s.size());
      tr.a.resize(ds.action_dim);
      r.f64s(tr.a.data(), tr.a.size());
      tr.r = r.f64();
      tr.s_next.resize(ds.state_dim);
      r.f64s(tr.s_next.data(), tr.s_next.size());
      const std::uint8_t flags = r.u8();
      tr.terminal = flags & 1;
      tr.timeout = flags & 2;
    }
  }
  return ds;
}

void require_env_match(const Dataset& ds, const EnvSpec& spec) {
  if (ds.env_name != spec.name || ds.state_dim != spec.state_dim ||
      ds.action_dim != spec.action_dim)
    throw ConfigError("dataset was generated on '" + ds.env_name +
                      "', not '" + spec.name + "'");
}

}  // namespace qdq
