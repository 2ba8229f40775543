#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qdq/env.hpp"

namespace qdq {

// Offline dataset: raw trajectories plus the provenance needed downstream
// (env identity, reward bound, behavior spec, generation seed). Stored as
// magic "QDQDS1" with length-prefixed packed transitions.
struct Dataset {
  std::string config;  // resolved config echo; empty outside the CLI
  std::string env_name;
  int state_dim = 0;
  int action_dim = 0;
  double r_max = 0.0;
  BehaviorPolicySpec behavior;
  std::uint64_t seed = 0;
  std::vector<Trajectory> trajectories;

  std::size_t transition_count() const;
  double mean_trajectory_return() const;
};

// rolls out n trajectories under the behavior policy, episode i on the RNG
// stream (seed, i); serial and any parallel split produce identical data
Dataset generate_dataset(const EnvSpec& spec, const BehaviorPolicySpec& bp,
                         int n_trajectories, std::uint64_t seed);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// env-identity check used by every consumer stage
void require_env_match(const Dataset& ds, const EnvSpec& spec);

}  // namespace qdq
