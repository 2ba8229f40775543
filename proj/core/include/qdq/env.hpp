#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "qdq/rng.hpp"

namespace qdq {

// Both tasks share 1-D double-integrator dynamics, explicit Euler at dt:
//   x' = x + v dt          (old velocity)
//   v' = v + a dt
// with position/velocity clamps. They differ in reward and termination:
//   line-reach: r = -|x' - goal| - 0.01 a^2, fixed horizon, never terminates
//   cliff-car:  same r, but |x'| > cliff ends the episode with r = -10
// line-reach-sparse pays 1 only within goal_radius of the goal.
struct EnvSpec {
  std::string name;
  int state_dim = 2;
  int action_dim = 1;
  double action_low = -1.0;
  double action_high = 1.0;
  int max_episode_steps = 200;
  double r_max = 0.0;

  bool cliff_terminates = false;
  bool sparse = false;
  double dt = 0.05;
  double goal = 1.0;
  double goal_radius = 0.1;
  double pos_clamp = 5.0;
  double vel_clamp = 3.0;
  double cliff = 2.0;
  double cliff_penalty = -10.0;
};

// names: line-reach | line-reach-sparse | cliff-car
EnvSpec make_env(const std::string& name);

struct Transition {
  std::vector<double> s;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> s_next;
  bool terminal = false;
  bool timeout = false;
};

struct Trajectory {
  std::vector<Transition> steps;
  std::uint64_t episode_seed = 0;

  double total_return() const;
};

// start state: x ~ U(-1.5, -0.5), v ~ U(-0.1, 0.1)
std::vector<double> env_reset(const EnvSpec& spec, Rng& rng);

// deterministic given (state, clipped action); rejects non-finite inputs
void env_step(const EnvSpec& spec, const std::vector<double>& state,
              const std::vector<double>& action, std::vector<double>& next,
              double& reward, bool& terminal);

// random: uniform over bounds. medium/expert: PD controller toward the goal
// plus Gaussian noise (sigma 0.3 / 0.05). mixture: per-episode draw over
// {random, medium, expert} with the given weights.
struct BehaviorPolicySpec {
  std::string tag = "medium";
  double noise = -1.0;  // < 0 means the tag's default
  std::array<double, 3> mixture_weights{0.0, 0.5, 0.5};
};

double behavior_noise(const BehaviorPolicySpec& bp);

// PD gains shared by medium/expert
constexpr double kPdKp = 2.0;
constexpr double kPdKd = 2.5;

// mean (pre-noise) PD action, clamped to bounds
double pd_action(const EnvSpec& spec, const std::vector<double>& state);

// one behavior action; `controller` is the resolved tag for this episode
std::vector<double> behavior_action(const EnvSpec& spec, const std::string& controller,
                                    double noise, const std::vector<double>& state,
                                    Rng& rng);

// resolves mixture -> concrete controller for one episode
std::string resolve_controller(const BehaviorPolicySpec& bp, Rng& rng);

// Scripted rollout: one episode under the behavior policy, RNG stream derived
// from (seed, episode index) so generation order never matters.
Trajectory rollout_behavior(const EnvSpec& spec, const BehaviorPolicySpec& bp,
                            std::uint64_t seed, std::uint64_t episode);

// generic rollout for evaluation; policy(state, rng) -> action
template <class Policy>
Trajectory rollout(const EnvSpec& spec, Policy&& policy, std::uint64_t seed,
                   std::uint64_t episode) {
  Rng rng = derive_rng(seed, tag_hash("episode"), episode);
  Trajectory traj;
  traj.episode_seed = episode;
  std::vector<double> s = env_reset(spec, rng);
  for (int t = 0; t < spec.max_episode_steps; ++t) {
    Transition tr;
    tr.s = s;
    tr.a = policy(s, rng);
    env_step(spec, tr.s, tr.a, tr.s_next, tr.r, tr.terminal);
    tr.timeout = !tr.terminal && t + 1 == spec.max_episode_steps;
    s = tr.s_next;
    const bool done = tr.terminal || tr.timeout;
    traj.steps.push_back(std::move(tr));
    if (done) break;
  }
  return traj;
}

}  // namespace qdq
