#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qdq/dataset.hpp"
#include "qdq/genq.hpp"
#include "qdq/optim.hpp"
#include "qdq/uncertainty.hpp"

namespace qdq {

struct TrainConfig {
  double alpha = 0.95;       // residual blend; 1 disables the penalized term
  double beta = 0.9;         // quantile level and off-set factor
  double gamma_ent = 0.0;    // dataset log-likelihood weight
  double gamma_disc = 0.99;
  double kappa = 0.005;      // target blend rate
  int batch = 256;
  double critic_lr = 3e-4;
  double actor_lr = 3e-4;
  long iterations = 200000;
  int policy_delay = 2;
  double smooth_noise = 0.2;
  double smooth_clip = 0.5;
  int n_bootstrap = 50;
  int eval_episodes = 10;
  long eval_interval = 5000;
  int hidden = 32;
  int layers = 3;

  void validate() const;
};

constexpr double kLogStdMin = -5.0;
constexpr double kLogStdMax = 2.0;

// actor maps s -> (mean, log-std) per action dim; actions are
// tanh(mean + std z), so they live strictly inside [-1, 1]
struct Agent {
  Mlp critic1, critic2;
  Mlp critic1_target, critic2_target;
  Mlp actor, actor_target;
};

Agent make_agent(int state_dim, int action_dim, const TrainConfig& cfg, Rng& rng);

// deterministic policy action: tanh of the mean head
std::vector<double> policy_mean_action(const Mlp& actor, const std::vector<double>& s);

struct EvalStats {
  double mean = 0.0;
  double stddev = 0.0;
};

// mean-action rollouts; episode e runs on the stream (seed, e)
EvalStats evaluate(const Mlp& actor, const EnvSpec& env, int episodes,
                   std::uint64_t seed);

// flattened transition view over a dataset
struct TransitionTable {
  int state_dim = 0, action_dim = 0;
  std::vector<double> S, A, R, S2;
  std::vector<std::uint8_t> terminal;

  std::size_t size() const { return R.size(); }
  static TransitionTable from(const Dataset& ds);
};

// one critic update on a fixed batch; exposed for the loss-form and
// no-gradient-leak checks. Returns the loss value; gradients are written
// into the provided holders (callers step the optimizers).
struct CriticBatch {
  Tensor S, A, R, S2;
  std::vector<std::uint8_t> terminal;
  Tensor A2;      // smoothed target-policy actions at s'
  std::vector<double> h;       // uncertainty per row
  double threshold = 0.0;      // batch quantile of h
  std::vector<double> y_raw, y_pen;  // filled by critic_targets
};

// builds a', h, and both targets for a batch (everything the loss treats
// as constant)
void critic_targets(const Agent& agent, const ConsistencyModel* cm,
                    const TrainConfig& cfg, CriticBatch& batch,
                    std::uint64_t seed, std::uint64_t step);

// alpha-blended two-term residual on both critics; fills grads
double critic_loss_and_grads(Agent& agent, const TrainConfig& cfg,
                             const CriticBatch& batch, Mlp& grads1, Mlp& grads2);

// -E[Q1(s, a_pi)] - gamma_ent E[log pi(a_D | s)]; fills actor grads
double actor_loss_and_grads(Agent& agent, const TrainConfig& cfg, const Tensor& S,
                            const Tensor& A_data, Rng& rng, Mlp& grads,
                            long* clamped_actions = nullptr);

struct TrainResult {
  Agent agent;
  long steps = 0;
  double final_eval_mean = 0.0;
  double final_eval_std = 0.0;
};

// Full loop: critic every step; actor, then both target blends, every
// policy_delay steps; evaluation every eval_interval. Metrics stream to
// `metrics_path` as JSON lines when nonempty. `checkpoint_path` receives an
// exact-resume snapshot at the end (and the loop starts from it when it
// already exists and `resume` is set).
TrainResult train_qdq(const Dataset& ds, const ConsistencyModel* cm,
                      const TrainConfig& cfg, std::uint64_t seed,
                      const std::string& metrics_path = "",
                      const std::string& checkpoint_path = "",
                      bool resume = false, const std::string& config_echo = "");

// checkpoint io (magic "QDQCK1")
struct Checkpoint {
  std::string config;
  std::string env_name;
  TrainConfig cfg;
  std::uint64_t seed = 0;
  long step = 0;
  long clamped = 0;  // boundary dataset actions seen by the likelihood term
  Agent agent;
  MlpOptimizer opt_c1, opt_c2, opt_actor;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// env-keyed defaults: the forgiving task runs alpha 0.99 / beta 0.9 /
// gamma_ent 0; the cliff task runs alpha 0.95 / beta 0.8 / gamma_ent 1
void apply_env_preset(TrainConfig& cfg, const std::string& env_name);

}  // namespace qdq
