#include "qdq/qdq_train.hpp"

#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "qdq/errors.hpp"
#include "qdq/graph.hpp"
#include "qdq/io.hpp"
#include "qdq/stats.hpp"

namespace qdq {

namespace {

using nlohmann::json;

constexpr double kAtanhGuard = 1e-6;

void append_line(std::FILE* f, const json& j) {
  const std::string line = j.dump();
  std::fwrite(line.data(), 1, line.size(), f);
  std::fputc('\n', f);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw ConfigError("alpha must lie in (0, 1]");
  if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("beta must lie in (0, 1)");
  if (gamma_ent < 0.0) throw ConfigError("gamma_ent must be >= 0");
  if (!(gamma_disc > 0.0 && gamma_disc < 1.0))
    throw ConfigError("gamma_disc must lie in (0, 1)");
  if (!(kappa > 0.0 && kappa <= 1.0)) throw ConfigError("kappa must lie in (0, 1]");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (policy_delay < 1) throw ConfigError("policy_delay must be >= 1");
  if (n_bootstrap < 2) throw ConfigError("n_bootstrap must be >= 2");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
  if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (hidden < 1 || layers < 1) throw ConfigError("network size must be positive");
}

Agent make_agent(int state_dim, int action_dim, const TrainConfig& cfg, Rng& rng) {
  Agent ag;
  ag.critic1 = make_mlp(state_dim + action_dim, cfg.hidden, cfg.layers, 1,
                        Act::mish, rng);
  ag.critic2 = make_mlp(state_dim + action_dim, cfg.hidden, cfg.layers, 1,
                        Act::mish, rng);
  ag.actor = make_mlp(state_dim, cfg.hidden, cfg.layers, 2 * action_dim,
                      Act::relu, rng);
  ag.critic1_target = ag.critic1;
  ag.critic2_target = ag.critic2;
  ag.actor_target = ag.actor;
  return ag;
}

std::vector<double> policy_mean_action(const Mlp& actor,
                                       const std::vector<double>& s) {
  Tensor x(1, static_cast<int>(s.size()));
  x.v = s;
  Tensor out = mlp_forward(actor, x);
  const int ad = out.cols / 2;
  std::vector<double> a(ad);
  for (int j = 0; j < ad; ++j) a[j] = std::tanh(out.v[j]);
  return a;
}

EvalStats evaluate(const Mlp& actor, const EnvSpec& env, int episodes,
                   std::uint64_t seed) {
  if (episodes < 1) throw ConfigError("evaluate: episodes must be >= 1");
  std::vector<double> returns(episodes);
  for (int e = 0; e < episodes; ++e) {
    Trajectory t = rollout(
        env,
        [&](const std::vector<double>& s, Rng&) {
          return policy_mean_action(actor, s);
        },
        seed, e);
    returns[e] = t.total_return();
  }
  EvalStats st;
  st.mean = mean_of(returns);
  st.stddev = stddev_of(returns);
  return st;
}

TransitionTable TransitionTable::from(const Dataset& ds) {
  TransitionTable t;
  t.state_dim = ds.state_dim;
  t.action_dim = ds.action_dim;
  const std::size_t n = ds.transition_count();
  t.S.reserve(n * ds.state_dim);
  t.A.reserve(n * ds.action_dim);
  t.R.reserve(n);
  t.S2.reserve(n * ds.state_dim);
  t.terminal.reserve(n);
  for (const auto& traj : ds.trajectories)
    for (const auto& tr : traj.steps) {
      t.S.insert(t.S.end(), tr.s.begin(), tr.s.end());
      t.A.insert(t.A.end(), tr.a.begin(), tr.a.end());
      t.R.push_back(tr.r);
      t.S2.insert(t.S2.end(), tr.s_next.begin(), tr.s_next.end());
      t.terminal.push_back(tr.terminal ? 1 : 0);
    }
  return t;
}

void critic_targets(const Agent& agent, const ConsistencyModel* cm,
                    const TrainConfig& cfg, CriticBatch& batch,
                    std::uint64_t seed, std::uint64_t step) {
  const int B = batch.S.rows;
  const int ad = batch.A.cols;

  // smoothed target-policy action at s'
  Tensor heads = mlp_forward(agent.actor_target, batch.S2);
  batch.A2 = Tensor(B, ad);
  Rng noise = derive_rng(seed, tag_hash("smooth"), step);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < ad; ++j) {
      double eps = cfg.smooth_noise * noise.normal();
      eps = std::clamp(eps, -cfg.smooth_clip, cfg.smooth_clip);
      batch.A2.at(i, j) = std::tanh(heads.at(i, j) + eps);
    }

  // clipped double-Q target values
  Tensor X2(B, batch.S2.cols + ad);
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < batch.S2.cols; ++j) X2.at(i, j) = batch.S2.at(i, j);
    for (int j = 0; j < ad; ++j) X2.at(i, batch.S2.cols + j) = batch.A2.at(i, j);
  }
  Tensor q1 = mlp_forward(agent.critic1_target, X2);
  Tensor q2 = mlp_forward(agent.critic2_target, X2);

  if (cm != nullptr && cfg.alpha < 1.0) {
    UncertaintyConfig ucfg;
    ucfg.n_bootstrap = cfg.n_bootstrap;
    ucfg.beta = cfg.beta;
    batch.h = estimate_uncertainty_rows(*cm, batch.S2, batch.A2, ucfg, seed, step);
  } else {
    batch.h.assign(B, 0.0);
  }
  const double thr = batch_threshold(batch.h, cfg.beta);
  batch.threshold = thr;

  batch.y_raw.resize(B);
  batch.y_pen.resize(B);
  for (int i = 0; i < B; ++i) {
    const double qmin = std::min(q1.v[i], q2.v[i]);
    const double mask = batch.terminal[i] ? 0.0 : 1.0;
    const double pf = penalty_factor(batch.h[i], thr, cfg.beta);
    batch.y_raw[i] = batch.R.v[i] + cfg.gamma_disc * mask * qmin;
    batch.y_pen[i] = batch.R.v[i] + cfg.gamma_disc * mask * (pf * qmin);
  }
}

double critic_loss_and_grads(Agent& agent, const TrainConfig& cfg,
                             const CriticBatch& batch, Mlp& grads1, Mlp& grads2) {
  const int B = batch.S.rows;
  Tensor X(B, batch.S.cols + batch.A.cols);
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < batch.S.cols; ++j) X.at(i, j) = batch.S.at(i, j);
    for (int j = 0; j < batch.A.cols; ++j)
      X.at(i, batch.S.cols + j) = batch.A.at(i, j);
  }
  Tensor Yr(B, 1), Yp(B, 1);
  Yr.v = batch.y_raw;
  Yp.v = batch.y_pen;

  zero_grads(grads1);
  zero_grads(grads2);
  Graph g;
  const int xin = g.input(X);
  const int q1 = g.apply_mlp(agent.critic1, &grads1, xin);
  const int q2 = g.apply_mlp(agent.critic2, &grads2, xin);
  const int l1 = g.add(g.scale_shift(mse_against(g, q1, Yr), cfg.alpha, 0.0),
                       g.scale_shift(mse_against(g, q1, Yp), 1.0 - cfg.alpha, 0.0));
  const int l2 = g.add(g.scale_shift(mse_against(g, q2, Yr), cfg.alpha, 0.0),
                       g.scale_shift(mse_against(g, q2, Yp), 1.0 - cfg.alpha, 0.0));
  const int loss = g.add(l1, l2);
  const double lv = g.scalar(loss);
  if (!std::isfinite(lv)) throw NumericError("critic loss is not finite");
  g.backward(loss);
  return lv;
}

double actor_loss_and_grads(Agent& agent, const TrainConfig& cfg, const Tensor& S,
                            const Tensor& A_data, Rng& rng, Mlp& grads,
                            long* clamped_actions) {
  const int B = S.rows;
  const int ad = A_data.cols;
  zero_grads(grads);

  Tensor Z(B, ad);
  for (auto& v : Z.v) v = rng.normal();

  Graph g;
  const int sin = g.input(S);
  const int heads = g.apply_mlp(agent.actor, &grads, sin);
  const int mean = g.slice_cols(heads, 0, ad);
  const int logstd = g.clamp(g.slice_cols(heads, ad, ad), kLogStdMin, kLogStdMax);
  const int a_pi = g.act(g.add(mean, g.mul(g.exp_(logstd), g.input(Z))),
                         Act::tanh_);
  const int q1 = g.apply_mlp(agent.critic1, nullptr, g.concat_cols(sin, a_pi));
  int loss = g.scale_shift(g.mean_all(q1), -1.0, 0.0);

  double jac_correction = 0.0;
  Tensor U;  // aliased by the graph, must outlive backward()
  if (cfg.gamma_ent > 0.0) {
    // pre-squash dataset actions; the tanh Jacobian term is parameter-free
    U = Tensor(B, ad);
    long clamped = 0;
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < ad; ++j) {
        double a = A_data.at(i, j);
        if (a <= -1.0 + kAtanhGuard || a >= 1.0 - kAtanhGuard) {
          a = std::clamp(a, -1.0 + kAtanhGuard, 1.0 - kAtanhGuard);
          ++clamped;
        }
        U.at(i, j) = std::atanh(a);
        jac_correction += std::log(1.0 - a * a);
      }
    if (clamped_actions) *clamped_actions += clamped;
    const int lp = g.gauss_logpdf(mean, logstd, &U);
    loss = g.add(loss, g.scale_shift(g.mean_all(lp), -cfg.gamma_ent, 0.0));
  }
  const double lv = g.scalar(loss);
  if (!std::isfinite(lv)) throw NumericError("actor loss is not finite");
  g.backward(loss);
  // report the true tanh-corrected log-likelihood value
  return lv + cfg.gamma_ent * jac_correction / static_cast<double>(B);
}

namespace {

void write_train_config(BinWriter& w, const TrainConfig& c) {
  w.f64(c.alpha);
  w.f64(c.beta);
  w.f64(c.gamma_ent);
  w.f64(c.gamma_disc);
  w.f64(c.kappa);
  w.u32(c.batch);
  w.f64(c.critic_lr);
  w.f64(c.actor_lr);
  w.i64(c.iterations);
  w.u32(c.policy_delay);
  w.f64(c.smooth_noise);
  w.f64(c.smooth_clip);
  w.u32(c.n_bootstrap);
  w.u32(c.eval_episodes);
  w.i64(c.eval_interval);
  w.u32(c.hidden);
  w.u32(c.layers);
}

TrainConfig read_train_config(BinReader& r) {
  TrainConfig c;
  c.alpha = r.f64();
  c.beta = r.f64();
  c.gamma_ent = r.f64();
  c.gamma_disc = r.f64();
  c.kappa = r.f64();
  c.batch = static_cast<int>(r.u32());
  c.critic_lr = r.f64();
  c.actor_lr = r.f64();
  c.iterations = r.i64();
  c.policy_delay = static_cast<int>(r.u32());
  c.smooth_noise = r.f64();
  c.smooth_clip = r.f64();
  c.n_bootstrap = static_cast<int>(r.u32());
  c.eval_episodes = static_cast<int>(r.u32());
  c.eval_interval = r.i64();
  c.hidden = static_cast<int>(r.u32());
  c.layers = static_cast<int>(r.u32());
  return c;
}

// iterations is deliberately left out: resuming with a larger budget is the
// point of the checkpoint
bool same_config(const TrainConfig& a, const TrainConfig& b) {
  return a.alpha == b.alpha && a.beta == b.beta && a.gamma_ent == b.gamma_ent &&
         a.gamma_disc == b.gamma_disc && a.kappa == b.kappa && a.batch == b.batch &&
         a.critic_lr == b.critic_lr && a.actor_lr == b.actor_lr &&
         a.policy_delay == b.policy_delay && a.smooth_noise == b.smooth_noise &&
         a.smooth_clip == b.smooth_clip && a.n_bootstrap == b.n_bootstrap &&
         a.eval_episodes == b.eval_episodes && a.eval_interval == b.eval_interval &&
         a.hidden == b.hidden && a.layers == b.layers;
}

}  // namespace

TrainResult train_qdq(const Dataset& ds, const ConsistencyModel* cm,
                      const TrainConfig& cfg, std::uint64_t seed,
                      const std::string& metrics_path,
                      const std::string& checkpoint_path, bool resume,
                      const std::string& config_echo) {
  cfg.validate();
  EnvSpec env = make_env(ds.env_name);
  if (env.action_low != -1.0 || env.action_high != 1.0)
    throw ConfigError("the actor's tanh head assumes unit action bounds");
  if (cfg.alpha < 1.0) {
    if (cm == nullptr)
      throw ConfigError("alpha < 1 needs a consistency model for uncertainty");
    if (cm->env_name != ds.env_name || cm->state_dim != ds.state_dim ||
        cm->action_dim != ds.action_dim)
      throw ConfigError("consistency model was trained on '" + cm->env_name +
                        "', not '" + ds.env_name + "'");
  }

  const TransitionTable tt = TransitionTable::from(ds);
  if (tt.size() == 0) throw ConfigError("dataset holds no transitions");
  const int sd = tt.state_dim, ad = tt.action_dim;

  Checkpoint ck;
  long start_step = 0;
  if (resume && file_exists(checkpoint_path)) {
    ck = load_checkpoint(checkpoint_path);
    if (!same_config(ck.cfg, cfg) || ck.seed != seed || ck.env_name != ds.env_name)
      throw ConfigError("checkpoint does not match the requested run");
    start_step = ck.step;
    ck.cfg = cfg;  // adopt the (possibly extended) iteration budget
    ck.config = config_echo;
  } else {
    Rng init = derive_rng(seed, tag_hash("agent-init"));
    ck.agent = make_agent(sd, ad, cfg, init);
    ck.cfg = cfg;
    ck.seed = seed;
    ck.env_name = ds.env_name;
    ck.config = config_echo;
    ck.opt_c1.cfg.lr = cfg.critic_lr;
    ck.opt_c2.cfg.lr = cfg.critic_lr;
    ck.opt_actor.cfg.lr = cfg.actor_lr;
    ck.opt_c1.init(ck.agent.critic1);
    ck.opt_c2.init(ck.agent.critic2);
    ck.opt_actor.init(ck.agent.actor);
  }
  Agent& agent = ck.agent;

  std::FILE* mf = nullptr;
  if (!metrics_path.empty()) {
    mf = std::fopen(metrics_path.c_str(), start_step > 0 ? "ab" : "wb");
    if (!mf) throw ArtifactError("cannot open metrics log " + metrics_path);
    if (start_step == 0) {
      json meta;
      meta["env"] = ds.env_name;
      meta["seed"] = seed;
      meta["alpha"] = cfg.alpha;
      meta["beta"] = cfg.beta;
      meta["gamma_ent"] = cfg.gamma_ent;
      append_line(mf, meta);
    }
  }

  Mlp grads_c1 = make_grads(agent.critic1);
  Mlp grads_c2 = make_grads(agent.critic2);
  Mlp grads_actor = make_grads(agent.actor);

  CriticBatch batch;
  batch.S = Tensor(cfg.batch, sd);
  batch.A = Tensor(cfg.batch, ad);
  batch.R = Tensor(cfg.batch, 1);
  batch.S2 = Tensor(cfg.batch, sd);
  batch.terminal.resize(cfg.batch);

  TrainResult result;
  double last_actor_loss = 0.0;
  long clamped = ck.clamped;
  for (long step = start_step; step < cfg.iterations; ++step) {
    Rng brng = derive_rng(seed, tag_hash("batch"), static_cast<std::uint64_t>(step));
    for (int i = 0; i < cfg.batch; ++i) {
      const std::size_t idx = brng.uniform_index(tt.size());
      for (int j = 0; j < sd; ++j) {
        batch.S.at(i, j) = tt.S[idx * sd + j];
        batch.S2.at(i, j) = tt.S2[idx * sd + j];
      }
      for (int j = 0; j < ad; ++j) batch.A.at(i, j) = tt.A[idx * ad + j];
      batch.R.v[i] = tt.R[idx];
      batch.terminal[i] = tt.terminal[idx];
    }

    critic_targets(agent, cm, cfg, batch, seed, static_cast<std::uint64_t>(step));
    double closs;
    try {
      closs = critic_loss_and_grads(agent, cfg, batch, grads_c1, grads_c2);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
    }
    ck.opt_c1.step(agent.critic1, grads_c1, "critic1");
    ck.opt_c2.step(agent.critic2, grads_c2, "critic2");

    const bool delayed = (step + 1) % cfg.policy_delay == 0;
    if (delayed) {
      Rng arng =
          derive_rng(seed, tag_hash("reparam"), static_cast<std::uint64_t>(step));
      last_actor_loss = actor_loss_and_grads(agent, cfg, batch.S, batch.A, arng,
                                             grads_actor, &clamped);
      ck.opt_actor.step(agent.actor, grads_actor, "actor");
      polyak_update(agent.critic1_target, agent.critic1, cfg.kappa);
      polyak_update(agent.critic2_target, agent.critic2, cfg.kappa);
      polyak_update(agent.actor_target, agent.actor, cfg.kappa);
    }

    if (mf) {
      int members = 0;
      for (double h : batch.h)
        if (h > batch.threshold) ++members;
      json line;
      line["step"] = step + 1;
      line["critic_loss"] = closs;
      if (delayed) line["actor_loss"] = last_actor_loss;
      line["mean_h"] = mean_of(batch.h);
      line["u_frac"] = static_cast<double>(members) / cfg.batch;
      append_line(mf, line);
    }

    if ((step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.iterations) {
      const std::uint64_t es =
          derive_rng(seed, tag_hash("eval"), static_cast<std::uint64_t>(step))
              .next_u64();
      EvalStats st = evaluate(agent.actor, env, cfg.eval_episodes, es);
      result.final_eval_mean = st.mean;
      result.final_eval_std = st.stddev;
      if (mf) {
        json line;
        line["step"] = step + 1;
        line["eval_mean"] = st.mean;
        line["eval_std"] = st.stddev;
        line["clamped_actions"] = clamped;
        append_line(mf, line);
      }
    }
    ck.step = step + 1;
    ck.clamped = clamped;
  }
  if (mf) std::fclose(mf);

  if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, ck);
  result.steps = ck.step;
  result.agent = agent;
  return result;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string tmp = path + ".tmp";
  {
    BinWriter w(tmp);
    w.magic("QDQCK1");
    w.str(ck.config);
    w.str(ck.env_name);
    write_train_config(w, ck.cfg);
    w.u64(ck.seed);
    w.i64(ck.step);
    w.i64(ck.clamped);
    write_mlp(w, ck.agent.critic1);
    write_mlp(w, ck.agent.critic2);
    write_mlp(w, ck.agent.critic1_target);
    write_mlp(w, ck.agent.critic2_target);
    write_mlp(w, ck.agent.actor);
    write_mlp(w, ck.agent.actor_target);
    write_optimizer(w, ck.opt_c1);
    write_optimizer(w, ck.opt_c2);
    write_optimizer(w, ck.opt_actor);
    w.close();
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw ArtifactError("cannot move checkpoint into place at " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  BinReader r(path);
  r.expect_magic("QDQCK1", "training checkpoint");
  Checkpoint ck;
  ck.config = r.str();
  ck.env_name = r.str();
  ck.cfg = read_train_config(r);
  ck.seed = r.u64();
  ck.step = r.i64();
  ck.clamped = r.i64();
  ck.agent.critic1 = read_mlp(r);
  ck.agent.critic2 = read_mlp(r);
  ck.agent.critic1_target = read_mlp(r);
  ck.agent.critic2_target = read_mlp(r);
  ck.agent.actor = read_mlp(r);
  ck.agent.actor_target = read_mlp(r);
  ck.opt_c1.init(ck.agent.critic1);
  ck.opt_c2.init(ck.agent.critic2);
  ck.opt_actor.init(ck.agent.actor);
  read_optimizer(r, ck.opt_c1);
  read_optimizer(r, ck.opt_c2);
  read_optimizer(r, ck.opt_actor);
  ck.opt_c1.cfg.lr = ck.cfg.critic_lr;
  ck.opt_c2.cfg.lr = ck.cfg.critic_lr;
  ck.opt_actor.cfg.lr = ck.cfg.actor_lr;
  return ck;
}

void apply_env_preset(TrainConfig& cfg, const std::string& env_name) {
  if (env_name == "cliff-car") {
    cfg.alpha = 0.95;
    cfg.beta = 0.8;
    cfg.gamma_ent = 1.0;
  } else {
    cfg.alpha = 0.99;
    cfg.beta = 0.9;
    cfg.gamma_ent = 0.0;
  }
}

}  // namespace qdq
