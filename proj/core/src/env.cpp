#include "qdq/env.hpp"

#include <algorithm>
#include <cmath>

#include "qdq/errors.hpp"

namespace qdq {

namespace {

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

EnvSpec make_env(const std::string& name) {
  EnvSpec spec;
  spec.name = name;
  if (name == "line-reach") {
    // |x' - goal| <= pos_clamp + goal = 6, action term <= 0.01
    spec.r_max = 6.01;
  } else if (name == "line-reach-sparse") {
    spec.sparse = true;
    spec.r_max = 1.0;
  } else if (name == "cliff-car") {
    spec.cliff_terminates = true;
    spec.r_max = 10.0;
  } else {
    throw ConfigError("unknown env '" + name +
                      "' (expected line-reach, line-reach-sparse or cliff-car)");
  }
  return spec;
}

double Trajectory::total_return() const {
  double sum = 0.0;
  for (const auto& tr : steps) sum += tr.r;
  return sum;
}

std::vector<double> env_reset(const EnvSpec&, Rng& rng) {
  const double x = -1.5 + rng.uniform();
  const double v = -0.1 + 0.2 * rng.uniform();
  return {x, v};
}

void env_step(const EnvSpec& spec, const std::vector<double>& state,
              const std::vector<double>& action, std::vector<double>& next,
              double& reward, bool& terminal) {
  if (static_cast<int>(state.size()) != spec.state_dim ||
      static_cast<int>(action.size()) != spec.action_dim)
    throw ConfigError("env_step: dimension mismatch for " + spec.name);
  if (!all_finite(state) || !all_finite(action))
    throw NumericError("env_step: non-finite state or action");

  const double a = std::clamp(action[0], spec.action_low, spec.action_high);
  const double x = state[0];
  const double v = state[1];
  double nx = std::clamp(x + v * spec.dt, -spec.pos_clamp, spec.pos_clamp);
  double nv = std::clamp(v + a * spec.dt, -spec.vel_clamp, spec.vel_clamp);

  terminal = false;
  if (spec.cliff_terminates && std::abs(nx) > spec.cliff) {
    reward = spec.cliff_penalty;
    terminal = true;
  } else if (spec.sparse) {
    reward = std::abs(nx - spec.goal) <= spec.goal_radius ? 1.0 : 0.0;
  } else {
    reward = -std::abs(nx - spec.goal) - 0.01 * a * a;
  }
  next = {nx, nv};
}

double behavior_noise(const BehaviorPolicySpec& bp) {
  if (bp.noise >= 0.0) return bp.noise;
  if (bp.tag == "expert") return 0.05;
  if (bp.tag == "medium") return 0.3;
  return 0.0;
}

double pd_action(const EnvSpec& spec, const std::vector<double>& state) {
  const double raw = kPdKp * (spec.goal - state[0]) - kPdKd * state[1];
  return std::clamp(raw, spec.action_low, spec.action_high);
}

std::vector<double> behavior_action(const EnvSpec& spec, const std::string& controller,
                                    double noise, const std::vector<double>& state,
                                    Rng& rng) {
  if (controller == "random") {
    const double span = spec.action_high - spec.action_low;
    return {spec.action_low + span * rng.uniform()};
  }
  double a = pd_action(spec, state);
  if (noise > 0.0) a += noise * rng.normal();
  return {std::clamp(a, spec.action_low, spec.action_high)};
}

std::string resolve_controller(const BehaviorPolicySpec& bp, Rng& rng) {
  if (bp.tag != "mixture") return bp.tag;
  double wsum = bp.mixture_weights[0] + bp.mixture_weights[1] + bp.mixture_weights[2];
  if (std::abs(wsum - 1.0) > 1e-9)
    throw ConfigError("mixture weights must sum to 1");
  const double u = rng.uniform();
  if (u < bp.mixture_weights[0]) return "random";
  if (u < bp.mixture_weights[0] + bp.mixture_weights[1]) return "medium";
  return "expert";
}

Trajectory rollout_behavior(const EnvSpec& spec, const BehaviorPolicySpec& bp,
                            std::uint64_t seed, std::uint64_t episode) {
  // controller choice consumes from the same per-episode stream, before reset
  Rng pick = derive_rng(seed, tag_hash("controller"), episode);
  const std::string controller = resolve_controller(bp, pick);
  const double noise = behavior_noise(bp);
  return rollout(
      spec,
      [&](const std::vector<double>& s, Rng& rng) {
        return behavior_action(spec, controller, noise, s, rng);
      },
      seed, episode);
}

}  // namespace qdq
