// qdq: offline RL pipeline driver. Subcommands cover the full path from
// rollout collection to uncertainty-aware policy training, plus the exact
// tabular verifier and plot-data emission. Stages communicate only through
// files; every output artifact embeds the resolved config that produced it.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <exception>
#include <filesystem>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qdq/config.hpp"
#include "qdq/dataset.hpp"
#include "qdq/env.hpp"
#include "qdq/errors.hpp"
#include "qdq/genq.hpp"
#include "qdq/io.hpp"
#include "qdq/qdq_train.hpp"
#include "qdq/qwindow.hpp"
#include "qdq/schedule.hpp"
#include "qdq/stats.hpp"
#include "qdq/tabular.hpp"
#include "qdq/uncertainty.hpp"

namespace {

using namespace qdq;

// shortest decimal form that parses back to the same double
std::string fmt_g(double v) {
  char buf[64];
  for (int prec : {15, 16, 17}) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// the full flat key universe with defaults; commands read their slice
RunConfig make_run_config() {
  RunConfig rc;
  rc.declare("env", "line-reach");
  rc.declare("behavior", "medium");
  rc.declare("behavior_noise", "-1");  // negative: use the tag's default
  rc.declare("mixture_random", "0");
  rc.declare("mixture_medium", "0.5");
  rc.declare("mixture_expert", "0.5");
  rc.declare("n_trajectories", "2000");
  rc.declare("seed", "0");

  rc.declare("k", "10");
  rc.declare("window", "200");
  rc.declare("gamma_disc", "0.99");

  rc.declare("gen_hidden", "32");
  rc.declare("gen_layers", "3");
  rc.declare("emb_features", "8");
  rc.declare("emb_scale", "16");
  rc.declare("gen_batch", "256");
  rc.declare("gen_iterations", "80000");
  rc.declare("gen_lr", "5e-4");
  rc.declare("distill_iterations", "160000");
  rc.declare("distill_lr", "4e-4");
  rc.declare("ema", "0.999");
  rc.declare("sigma_min", "0.002");
  rc.declare("sigma_max", "80");
  rc.declare("schedule_n", "1000");
  rc.declare("rho", "7");

  rc.declare("alpha", "0.95");
  rc.declare("beta", "0.9");
  rc.declare("gamma_ent", "0");
  rc.declare("kappa", "0.005");
  rc.declare("batch", "256");
  rc.declare("critic_lr", "3e-4");
  rc.declare("actor_lr", "3e-4");
  rc.declare("iterations", "200000");
  rc.declare("policy_delay", "2");
  rc.declare("smooth_noise", "0.2");
  rc.declare("smooth_clip", "0.5");
  rc.declare("n_bootstrap", "50");
  rc.declare("eval_episodes", "10");
  rc.declare("eval_interval", "5000");
  rc.declare("hidden", "32");
  rc.declare("layers", "3");

  rc.declare("verify_mdp_trials", "50");
  rc.declare("verify_pair_trials", "1000");
  rc.declare("verify_max_states", "20");
  rc.declare("verify_max_actions", "5");
  rc.declare("diag_probes", "1000");
  rc.declare("hist_bins", "40");
  rc.declare("hist_samples", "5000");

  rc.declare("path_dataset", "dataset.bin");
  rc.declare("path_qdataset", "qdataset.bin");
  rc.declare("path_score", "score_model.bin");
  rc.declare("path_consistency", "consistency_model.bin");
  rc.declare("path_checkpoint", "checkpoint.bin");
  rc.declare("path_metrics", "metrics.jsonl");
  rc.declare("path_eval", "eval.json");
  rc.declare("path_report", "verify_report.csv");
  rc.declare("path_counterexample", "counterexample_mdp.bin");
  rc.declare("path_uncertainty", "uncertainty_report.csv");
  rc.declare("path_plots", "plots");
  return rc;
}

// every numeric key must parse no matter which stage reads it, so a typo
// fails the command instead of riding along in the echo
void check_types(const RunConfig& rc) {
  static const char* kF64[] = {
      "behavior_noise", "mixture_random", "mixture_medium", "mixture_expert",
      "gamma_disc",     "emb_scale",      "gen_lr",         "distill_lr",
      "ema",            "sigma_min",      "sigma_max",      "rho",
      "alpha",          "beta",           "gamma_ent",      "kappa",
      "critic_lr",      "actor_lr",       "smooth_noise",   "smooth_clip"};
  static const char* kI64[] = {
      "n_trajectories", "k",          "window",        "gen_hidden",
      "gen_layers",     "emb_features", "gen_batch",   "gen_iterations",
      "distill_iterations", "schedule_n", "batch",     "iterations",
      "policy_delay",   "n_bootstrap", "eval_episodes", "eval_interval",
      "hidden",         "layers",     "verify_mdp_trials", "verify_pair_trials",
      "verify_max_states", "verify_max_actions", "diag_probes", "hist_bins",
      "hist_samples"};
  for (const char* k : kF64) rc.f64(k);
  for (const char* k : kI64) rc.i64(k);
  rc.u64("seed");
}

// env-keyed alpha/beta/gamma_ent defaults; explicit settings win
void apply_presets(RunConfig& rc) {
  TrainConfig pre;
  apply_env_preset(pre, rc.str("env"));
  rc.default_override("alpha", fmt_g(pre.alpha));
  rc.default_override("beta", fmt_g(pre.beta));
  rc.default_override("gamma_ent", fmt_g(pre.gamma_ent));
}

// single-input stages take env identity from the artifact; an explicit
// --env must agree with it
void adopt_env(RunConfig& rc, const std::string& artifact_env, const std::string& what) {
  if (rc.is_explicit("env") && rc.str("env") != artifact_env)
    throw ConfigError("env is set to '" + rc.str("env") + "' but the " + what +
                      " was generated on '" + artifact_env + "'");
  rc.default_override("env", artifact_env);
}

void require_artifact(const std::string& path, const char* what, const char* producer) {
  if (!file_exists(path))
    throw ArtifactError(std::string("missing ") + what + " '" + path +
                        "'; run " + producer + " first");
}

BehaviorPolicySpec behavior_from(const RunConfig& rc) {
  BehaviorPolicySpec bp;
  bp.tag = rc.str("behavior");
  if (bp.tag != "random" && bp.tag != "medium" && bp.tag != "expert" &&
      bp.tag != "mixture")
    throw ConfigError("unknown behavior '" + bp.tag +
                      "', expected random|medium|expert|mixture");
  bp.noise = rc.f64("behavior_noise");
  bp.mixture_weights = {rc.f64("mixture_random"), rc.f64("mixture_medium"),
                        rc.f64("mixture_expert")};
  return bp;
}

QWindowConfig qwindow_from(const RunConfig& rc) {
  QWindowConfig c;
  c.k = rc.i32("k");
  c.window = rc.i32("window");
  c.gamma_disc = rc.f64("gamma_disc");
  return c;
}

GenTrainConfig gen_from(const RunConfig& rc) {
  GenTrainConfig c;
  c.hidden = rc.i32("gen_hidden");
  c.layers = rc.i32("gen_layers");
  c.emb_features = rc.i32("emb_features");
  c.emb_scale = rc.f64("emb_scale");
  c.batch = rc.i32("gen_batch");
  c.iterations = rc.i64("gen_iterations");
  c.lr = rc.f64("gen_lr");
  c.distill_iterations = rc.i64("distill_iterations");
  c.distill_lr = rc.f64("distill_lr");
  c.ema = rc.f64("ema");
  c.schedule = make_schedule(rc.f64("sigma_min"), rc.f64("sigma_max"),
                             rc.i32("schedule_n"), rc.f64("rho"));
  return c;
}

TrainConfig train_from(const RunConfig& rc) {
  TrainConfig c;
  c.alpha = rc.f64("alpha");
  c.beta = rc.f64("beta");
  c.gamma_ent = rc.f64("gamma_ent");
  c.gamma_disc = rc.f64("gamma_disc");
  c.kappa = rc.f64("kappa");
  c.batch = rc.i32("batch");
  c.critic_lr = rc.f64("critic_lr");
  c.actor_lr = rc.f64("actor_lr");
  c.iterations = rc.i64("iterations");
  c.policy_delay = rc.i32("policy_delay");
  c.smooth_noise = rc.f64("smooth_noise");
  c.smooth_clip = rc.f64("smooth_clip");
  c.n_bootstrap = rc.i32("n_bootstrap");
  c.eval_episodes = rc.i32("eval_episodes");
  c.eval_interval = rc.i64("eval_interval");
  c.hidden = rc.i32("hidden");
  c.layers = rc.i32("layers");
  return c;
}

UncertaintyConfig uncertainty_from(const RunConfig& rc) {
  UncertaintyConfig c;
  c.n_bootstrap = rc.i32("n_bootstrap");
  c.beta = rc.f64("beta");
  return c;
}

void write_text(const std::string& path, const std::string& content) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw ArtifactError("cannot write " + path);
  const std::size_t n = std::fwrite(content.data(), 1, content.size(), f);
  const int rc = std::fclose(f);
  if (n != content.size() || rc != 0) throw ArtifactError("short write to " + path);
}

// resolved config as '#'-prefixed CSV comment lines
std::string csv_header(const RunConfig& rc) {
  std::string out;
  const std::string echo = rc.echo();
  std::size_t pos = 0;
  while (pos < echo.size()) {
    const std::size_t nl = echo.find('\n', pos);
    out += "# " + echo.substr(pos, nl - pos) + "\n";
    pos = nl + 1;
  }
  return out;
}

// CLI flags that feed config keys; applied after the file and --set pairs
// so the most specific spelling wins
class StageOpts {
 public:
  explicit StageOpts(CLI::App* sub) : sub_(sub) {
    sub_->add_option("--config", config_file_, "key=value config file");
    sub_->add_option("--set", sets_, "override one key, e.g. --set alpha=0.97")
        ->type_name("KEY=VALUE");
    key_opt("--seed", "seed", "master seed");
  }

  CLI::Option* key_opt(const std::string& flag, const std::string& key,
                       const std::string& desc) {
    hold_.emplace_back();
    CLI::Option* o = sub_->add_option(flag, hold_.back(), desc);
    routes_.emplace_back(o, key, &hold_.back());
    return o;
  }

  void resolve(RunConfig& rc) const {
    if (!config_file_.empty()) rc.load_file(config_file_);
    for (const auto& p : sets_) rc.set_pair(p);
    for (const auto& [opt, key, val] : routes_)
      if (opt->count() > 0) rc.set(key, *val);
    check_types(rc);
  }

 private:
  CLI::App* sub_;
  std::string config_file_;
  std::vector<std::string> sets_;
  std::deque<std::string> hold_;
  std::vector<std::tuple<CLI::Option*, std::string, std::string*>> routes_;
};

// ---- uncertainty probe shared by diagnose-uncertainty and emit-plots ----

struct UncProbe {
  std::vector<double> h_in, h_ood;
};

UncProbe probe_uncertainty(const ConsistencyModel& cm, const QDataset& qs,
                           const UncertaintyConfig& ucfg, int probes,
                           std::uint64_t seed) {
  if (qs.samples.empty()) throw ConfigError("q-dataset has no samples");
  const EnvSpec spec = make_env(cm.env_name);
  const std::size_t n = std::min<std::size_t>(probes, qs.samples.size());
  UncProbe out;
  out.h_in.reserve(n);
  out.h_ood.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = i * qs.samples.size() / n;
    const QSample& smp = qs.samples[idx];
    const std::uint64_t si = derive_rng(seed, tag_hash("diag-in"), i).next_u64();
    out.h_in.push_back(
        estimate_uncertainty(cm, smp.s.data(), smp.a.data(), ucfg, si));
    Rng arng = derive_rng(seed, tag_hash("diag-ood"), i);
    std::vector<double> a(cm.action_dim);
    for (auto& v : a) v = arng.uniform(spec.action_low, spec.action_high);
    const std::uint64_t so = derive_rng(seed, tag_hash("diag-ood-h"), i).next_u64();
    out.h_ood.push_back(estimate_uncertainty(cm, smp.s.data(), a.data(), ucfg, so));
  }
  return out;
}

std::string uncertainty_csv(const RunConfig& rc, const UncProbe& u) {
  std::string out = csv_header(rc);
  out += "statistic,in_dist,ood\n";
  const std::pair<const char*, double> qs[] = {
      {"p50", 0.50}, {"p90", 0.90}, {"p95", 0.95}, {"p99", 0.99}};
  for (const auto& [name, p] : qs)
    out += std::string(name) + "," + fmt_g(linear_quantile(u.h_in, p)) + "," +
           fmt_g(linear_quantile(u.h_ood, p)) + "\n";
  out += "mean," + fmt_g(mean_of(u.h_in)) + "," + fmt_g(mean_of(u.h_ood)) + "\n";
  out += "max," + fmt_g(*std::max_element(u.h_in.begin(), u.h_in.end())) + "," +
         fmt_g(*std::max_element(u.h_ood.begin(), u.h_ood.end())) + "\n";
  return out;
}

// ---- verify-tabular ----

struct CheckRow {
  std::string check;
  long trial = 0;
  std::string measured, bound;
  bool pass = false;
};

PenaltyTable mixed_table(int nS, int nA, double alpha, double beta, Rng& rng) {
  PenaltyTable pt;
  pt.alpha = alpha;
  pt.beta = beta;
  pt.h.resize(static_cast<std::size_t>(nS) * nA);
  pt.member.resize(pt.h.size());
  for (std::size_t i = 0; i < pt.h.size(); ++i) {
    pt.h[i] = rng.uniform(0.5, 3.0);
    pt.member[i] = rng.uniform() < 0.5 ? 1 : 0;
  }
  return pt;
}

void run_mdp_checks(const TabularMdp& m, long trial, double alpha, double beta,
                    int pairs, std::uint64_t pair_seed, Rng& rng,
                    std::vector<CheckRow>& rows, const TabularMdp** first_bad) {
  const double cbound = contraction_modulus(alpha, beta) * m.gamma;
  const PenaltyTable mixed = mixed_table(m.nS, m.nA, alpha, beta, rng);
  {
    const double worst = verify_contraction(m, mixed, pairs, pair_seed);
    rows.push_back({"contraction", trial, fmt_g(worst), fmt_g(cbound),
                    worst <= cbound + 1e-12});
  }
  {
    const SuboptReport rep =
        verify_suboptimality(m, PenaltyTable::none(m.nS, m.nA, alpha, beta));
    rows.push_back({"suboptimality", trial, fmt_g(rep.gap), fmt_g(rep.bound),
                    rep.gap <= rep.bound});
  }
  {
    const SuboptReport rep =
        verify_suboptimality(m, PenaltyTable::none(m.nS, m.nA, alpha, 1.0));
    rows.push_back({"suboptimality_beta1", trial, fmt_g(rep.gap), fmt_g(rep.bound),
                    rep.gap <= rep.bound});
  }
  {
    const std::vector<StepError> chain = stepwise_error(m, mixed, 60);
    double worst = -1e300;
    for (const StepError& e : chain) worst = std::max(worst, e.zeta - e.bound_rhs);
    rows.push_back({"stepwise_error", trial, fmt_g(worst), "0", worst <= 1e-12});
  }
  if (first_bad && !*first_bad)
    for (std::size_t i = rows.size() - 4; i < rows.size(); ++i)
      if (!rows[i].pass) {
        *first_bad = &m;
        break;
      }
}

// ---- metrics log parsing for emit-plots ----

std::string sanitize_stem(const std::string& path) {
  std::string stem = std::filesystem::path(path).stem().string();
  if (stem.empty()) stem = "metrics";
  for (char& c : stem)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return stem;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"offline RL toolkit: truncated Q-windows, a distilled "
               "q-distribution model, bootstrap uncertainty, and "
               "uncertainty-aware critic/actor training"};
  app.require_subcommand(1);

  try {
    // gen-data
    auto* gd = app.add_subcommand(
        "gen-data", "roll out the behavior policy into a trajectory dataset");
    StageOpts gd_opts(gd);
    gd_opts.key_opt("--env", "env", "environment name");
    gd_opts.key_opt("--behavior", "behavior", "random|medium|expert|mixture");
    gd_opts.key_opt("--n", "n_trajectories", "episodes to roll out");
    gd_opts.key_opt("--out", "path_dataset", "output dataset path");
    gd->callback([&] {
      RunConfig rc = make_run_config();
      gd_opts.resolve(rc);
      apply_presets(rc);
      const EnvSpec spec = make_env(rc.str("env"));
      Dataset ds = generate_dataset(spec, behavior_from(rc),
                                    rc.i32("n_trajectories"), rc.u64("seed"));
      ds.config = rc.echo();
      save_dataset(rc.str("path_dataset"), ds);
      std::printf("gen-data: %s: %zu trajectories, %zu transitions, mean return %s\n",
                  rc.str("path_dataset").c_str(), ds.trajectories.size(),
                  ds.transition_count(), fmt_g(ds.mean_trajectory_return()).c_str());
    });

    // build-qwindow
    auto* bq = app.add_subcommand(
        "build-qwindow", "slide truncated discounted-return windows over a dataset");
    StageOpts bq_opts(bq);
    bq_opts.key_opt("--dataset", "path_dataset", "input trajectory dataset");
    bq_opts.key_opt("--k", "k", "window slide step");
    bq_opts.key_opt("--window", "window", "window width");
    bq_opts.key_opt("--out", "path_qdataset", "output q-dataset path");
    bq->callback([&] {
      RunConfig rc = make_run_config();
      bq_opts.resolve(rc);
      require_artifact(rc.str("path_dataset"), "trajectory dataset", "gen-data");
      const Dataset ds = load_dataset(rc.str("path_dataset"));
      adopt_env(rc, ds.env_name, "dataset");
      apply_presets(rc);
      QDataset qs = build_q_dataset(ds, qwindow_from(rc));
      qs.config = rc.echo();
      save_q_dataset(rc.str("path_qdataset"), qs);
      std::printf("build-qwindow: %s: %zu windows, q mean %s, q std %s, tail bound %s\n",
                  rc.str("path_qdataset").c_str(), qs.samples.size(),
                  fmt_g(qs.q_mean()).c_str(), fmt_g(qs.q_std()).c_str(),
                  fmt_g(truncation_bound(qs.cfg.gamma_disc, ds.r_max, qs.cfg.window))
                      .c_str());
    });

    // train-diffusion
    auto* td = app.add_subcommand(
        "train-diffusion", "fit the conditional denoiser on a q-dataset");
    StageOpts td_opts(td);
    td_opts.key_opt("--qdataset", "path_qdataset", "input q-dataset");
    td_opts.key_opt("--iters", "gen_iterations", "training iterations");
    td_opts.key_opt("--out", "path_score", "output score model path");
    td->callback([&] {
      RunConfig rc = make_run_config();
      td_opts.resolve(rc);
      require_artifact(rc.str("path_qdataset"), "q-dataset", "build-qwindow");
      const QDataset qs = load_q_dataset(rc.str("path_qdataset"));
      adopt_env(rc, qs.env_name, "q-dataset");
      apply_presets(rc);
      ScoreModel sm = train_diffusion(qs, gen_from(rc), rc.u64("seed"));
      sm.config = rc.echo();
      save_score_model(rc.str("path_score"), sm);
      std::printf("train-diffusion: %s: %ld iterations on %zu samples\n",
                  rc.str("path_score").c_str(), rc.i64("gen_iterations"),
                  qs.samples.size());
    });

    // distill-consistency
    auto* dc = app.add_subcommand(
        "distill-consistency", "distill the denoiser into a one-step generator");
    StageOpts dc_opts(dc);
    dc_opts.key_opt("--qdataset", "path_qdataset", "input q-dataset");
    dc_opts.key_opt("--score", "path_score", "input score model");
    dc_opts.key_opt("--iters", "distill_iterations", "distillation iterations");
    dc_opts.key_opt("--out", "path_consistency", "output consistency model path");
    dc->callback([&] {
      RunConfig rc = make_run_config();
      dc_opts.resolve(rc);
      require_artifact(rc.str("path_qdataset"), "q-dataset", "build-qwindow");
      require_artifact(rc.str("path_score"), "score model", "train-diffusion");
      const QDataset qs = load_q_dataset(rc.str("path_qdataset"));
      const ScoreModel sm = load_score_model(rc.str("path_score"));
      adopt_env(rc, sm.env_name, "score model");
      apply_presets(rc);
      ConsistencyModel cm = distill_consistency(sm, qs, gen_from(rc), rc.u64("seed"));
      cm.config = rc.echo();
      save_consistency_model(rc.str("path_consistency"), cm);
      std::printf("distill-consistency: %s: self-consistency %s\n",
                  rc.str("path_consistency").c_str(),
                  fmt_g(cm.self_consistency).c_str());
    });

    // train-qdq
    auto* tq = app.add_subcommand(
        "train-qdq", "train the uncertainty-aware critic/actor pair");
    StageOpts tq_opts(tq);
    tq_opts.key_opt("--dataset", "path_dataset", "input trajectory dataset");
    tq_opts.key_opt("--consistency", "path_consistency",
                    "input consistency model (needed when alpha < 1)");
    tq_opts.key_opt("--alpha", "alpha", "raw/penalized blend in (0,1]");
    tq_opts.key_opt("--beta", "beta", "quantile level and off-set factor");
    tq_opts.key_opt("--gamma-ent", "gamma_ent", "dataset log-likelihood weight");
    tq_opts.key_opt("--iters", "iterations", "gradient steps");
    tq_opts.key_opt("--checkpoint", "path_checkpoint", "output checkpoint path");
    tq_opts.key_opt("--metrics", "path_metrics", "output metrics JSONL path");
    bool resume = false;
    tq->add_flag("--resume", resume, "continue from the existing checkpoint");
    tq->callback([&] {
      RunConfig rc = make_run_config();
      tq_opts.resolve(rc);
      require_artifact(rc.str("path_dataset"), "trajectory dataset", "gen-data");
      const Dataset ds = load_dataset(rc.str("path_dataset"));
      adopt_env(rc, ds.env_name, "dataset");
      apply_presets(rc);
      const TrainConfig cfg = train_from(rc);
      ConsistencyModel cm;
      const ConsistencyModel* cmp = nullptr;
      if (cfg.alpha < 1.0) {
        require_artifact(rc.str("path_consistency"), "consistency model",
                         "distill-consistency");
        cm = load_consistency_model(rc.str("path_consistency"));
        cmp = &cm;
      }
      const TrainResult res =
          train_qdq(ds, cmp, cfg, rc.u64("seed"), rc.str("path_metrics"),
                    rc.str("path_checkpoint"), resume, rc.echo());
      std::printf("train-qdq: %s: %ld steps, final eval %s +- %s\n",
                  rc.str("path_checkpoint").c_str(), res.steps,
                  fmt_g(res.final_eval_mean).c_str(),
                  fmt_g(res.final_eval_std).c_str());
    });

    // eval
    auto* ev = app.add_subcommand("eval", "roll out a checkpoint's mean policy");
    StageOpts ev_opts(ev);
    ev_opts.key_opt("--checkpoint", "path_checkpoint", "input checkpoint");
    ev_opts.key_opt("--episodes", "eval_episodes", "episodes to roll out");
    ev_opts.key_opt("--out", "path_eval", "output eval JSON path");
    ev->callback([&] {
      RunConfig rc = make_run_config();
      ev_opts.resolve(rc);
      require_artifact(rc.str("path_checkpoint"), "checkpoint", "train-qdq");
      const Checkpoint ck = load_checkpoint(rc.str("path_checkpoint"));
      adopt_env(rc, ck.env_name, "checkpoint");
      apply_presets(rc);
      const EnvSpec spec = make_env(ck.env_name);
      const int episodes = rc.i32("eval_episodes");
      if (episodes < 1) throw ConfigError("eval_episodes must be >= 1");
      const std::uint64_t seed = rc.u64("seed");
      std::vector<double> returns;
      for (int e = 0; e < episodes; ++e)
        returns.push_back(rollout(spec,
                                  [&](const std::vector<double>& s, Rng&) {
                                    return policy_mean_action(ck.agent.actor, s);
                                  },
                                  seed, e)
                              .total_return());
      nlohmann::json j;
      j["config"] = rc.echo();
      j["env"] = ck.env_name;
      j["episodes"] = episodes;
      j["eval_mean"] = mean_of(returns);
      j["eval_std"] = stddev_of(returns);
      j["returns"] = returns;
      j["seed"] = seed;
      j["train_step"] = ck.step;
      write_text(rc.str("path_eval"), j.dump() + "\n");
      std::printf("eval: %s: mean %s +- %s over %d episodes\n",
                  rc.str("path_eval").c_str(), fmt_g(mean_of(returns)).c_str(),
                  fmt_g(stddev_of(returns)).c_str(), episodes);
    });

    // verify-tabular
    auto* vt = app.add_subcommand(
        "verify-tabular",
        "check the contraction/suboptimality/gap theory on exact MDPs");
    StageOpts vt_opts(vt);
    vt_opts.key_opt("--mdps", "verify_mdp_trials", "random MDPs to sweep");
    vt_opts.key_opt("--pairs", "verify_pair_trials", "Q-pairs per contraction check");
    vt_opts.key_opt("--alpha", "alpha", "blend used by the operators");
    vt_opts.key_opt("--beta", "beta", "off-set factor");
    vt_opts.key_opt("--report", "path_report", "output CSV report path");
    vt_opts.key_opt("--counterexample", "path_counterexample",
                    "where a failing MDP is serialized");
    std::string replay_path;
    vt->add_option("--replay", replay_path, "re-check one serialized MDP");
    vt->callback([&] {
      RunConfig rc = make_run_config();
      vt_opts.resolve(rc);
      // no env presets here: the sweep checks the canonical operator constants
      const double alpha = rc.f64("alpha"), beta = rc.f64("beta");
      const double gamma = rc.f64("gamma_disc");
      const int pairs = rc.i32("verify_pair_trials");
      const std::uint64_t seed = rc.u64("seed");
      std::vector<CheckRow> rows;
      std::vector<TabularMdp> sweep;
      const TabularMdp* first_bad = nullptr;

      if (!replay_path.empty()) {
        require_artifact(replay_path, "mdp file", "verify-tabular");
        sweep.push_back(load_mdp(replay_path));
        Rng rng = derive_rng(seed, tag_hash("verify-mdp"), 0);
        run_mdp_checks(sweep[0], 0, alpha, beta, pairs,
                       derive_rng(seed, tag_hash("verify-pairs"), 0).next_u64(),
                       rng, rows, nullptr);
      } else {
        const long trials = rc.i64("verify_mdp_trials");
        const int max_s = rc.i32("verify_max_states");
        const int max_a = rc.i32("verify_max_actions");
        if (trials < 1 || max_s < 2 || max_a < 2)
          throw ConfigError("verify sweep needs >= 1 trial and sizes >= 2");
        sweep.reserve(trials);
        for (long t = 0; t < trials; ++t) {
          Rng rng = derive_rng(seed, tag_hash("verify-mdp"), t);
          const int nS = 2 + static_cast<int>(rng.uniform_index(max_s - 1));
          const int nA = 2 + static_cast<int>(rng.uniform_index(max_a - 1));
          sweep.push_back(random_mdp(nS, nA, gamma, rng, t % 3 == 0 ? 1 : 0));
          run_mdp_checks(sweep.back(), t, alpha, beta, pairs,
                         derive_rng(seed, tag_hash("verify-pairs"), t).next_u64(),
                         rng, rows, &first_bad);
        }
      }

      // gap-expanding margin sweep is MDP-independent
      {
        Rng rng = derive_rng(seed, tag_hash("verify-gap"));
        double worst = 1e300;
        for (int i = 0; i < 10000; ++i) {
          const double Q = rng.uniform(1e-3, 50.0);
          const double h = 1.0 / beta + rng.uniform(1e-6, 10.0);
          worst = std::min(worst, gap_expanding_margin(Q, h, alpha, beta));
        }
        rows.push_back({"gap_expanding", 0, fmt_g(worst), "0", worst > 0.0});
      }

      std::string csv = csv_header(rc);
      csv += "check,trial,measured,bound,pass\n";
      long failed = 0;
      for (const CheckRow& r : rows) {
        csv += r.check + "," + std::to_string(r.trial) + "," + r.measured + "," +
               r.bound + "," + (r.pass ? "pass" : "fail") + "\n";
        if (!r.pass) ++failed;
      }
      write_text(rc.str("path_report"), csv);
      if (first_bad) save_mdp(rc.str("path_counterexample"), *first_bad);
      std::printf("verify-tabular: %zu checks, %ld failed, report %s\n", rows.size(),
                  failed, rc.str("path_report").c_str());
      if (failed > 0)
        throw VerifyError(std::to_string(failed) + " of " +
                          std::to_string(rows.size()) + " checks failed; see " +
                          rc.str("path_report") +
                          (first_bad ? ", counterexample " +
                                           rc.str("path_counterexample")
                                     : std::string()));
    });

    // diagnose-uncertainty
    auto* du = app.add_subcommand(
        "diagnose-uncertainty",
        "compare bootstrap uncertainty on dataset vs uniform-random actions");
    StageOpts du_opts(du);
    du_opts.key_opt("--consistency", "path_consistency", "input consistency model");
    du_opts.key_opt("--qdataset", "path_qdataset", "input q-dataset");
    du_opts.key_opt("--probes", "diag_probes", "conditions to probe");
    du_opts.key_opt("--out", "path_uncertainty", "output CSV path");
    du->callback([&] {
      RunConfig rc = make_run_config();
      du_opts.resolve(rc);
      require_artifact(rc.str("path_consistency"), "consistency model",
                       "distill-consistency");
      require_artifact(rc.str("path_qdataset"), "q-dataset", "build-qwindow");
      const ConsistencyModel cm = load_consistency_model(rc.str("path_consistency"));
      const QDataset qs = load_q_dataset(rc.str("path_qdataset"));
      if (qs.env_name != cm.env_name)
        throw ConfigError("q-dataset is from '" + qs.env_name +
                          "' but the consistency model is from '" + cm.env_name + "'");
      adopt_env(rc, cm.env_name, "consistency model");
      apply_presets(rc);
      const UncProbe u = probe_uncertainty(cm, qs, uncertainty_from(rc),
                                           rc.i32("diag_probes"), rc.u64("seed"));
      write_text(rc.str("path_uncertainty"), uncertainty_csv(rc, u));
      std::printf(
          "diagnose-uncertainty: %s: median in-dist %s, median ood %s\n",
          rc.str("path_uncertainty").c_str(),
          fmt_g(linear_quantile(u.h_in, 0.5)).c_str(),
          fmt_g(linear_quantile(u.h_ood, 0.5)).c_str());
    });

    // emit-plots
    auto* ep = app.add_subcommand(
        "emit-plots", "emit histogram/uncertainty/learning-curve CSV bundles");
    StageOpts ep_opts(ep);
    ep_opts.key_opt("--qdataset", "path_qdataset", "input q-dataset");
    ep_opts.key_opt("--consistency", "path_consistency", "input consistency model");
    ep_opts.key_opt("--bins", "hist_bins", "histogram bin count");
    ep_opts.key_opt("--outdir", "path_plots", "output directory");
    std::vector<std::string> metrics_paths;
    ep->add_option("--metrics", metrics_paths,
                   "metrics JSONL logs (default: path_metrics)");
    ep->callback([&] {
      RunConfig rc = make_run_config();
      ep_opts.resolve(rc);
      require_artifact(rc.str("path_qdataset"), "q-dataset", "build-qwindow");
      require_artifact(rc.str("path_consistency"), "consistency model",
                       "distill-consistency");
      const QDataset qs = load_q_dataset(rc.str("path_qdataset"));
      const ConsistencyModel cm = load_consistency_model(rc.str("path_consistency"));
      if (qs.env_name != cm.env_name)
        throw ConfigError("q-dataset is from '" + qs.env_name +
                          "' but the consistency model is from '" + cm.env_name + "'");
      adopt_env(rc, cm.env_name, "consistency model");
      apply_presets(rc);
      if (metrics_paths.empty()) metrics_paths.push_back(rc.str("path_metrics"));
      for (const std::string& p : metrics_paths)
        require_artifact(p, "metrics log", "train-qdq");
      const std::filesystem::path outdir(rc.str("path_plots"));
      std::error_code ec;
      std::filesystem::create_directories(outdir, ec);
      if (ec) throw ArtifactError("cannot create " + outdir.string());
      const std::uint64_t seed = rc.u64("seed");

      // (a) paired histograms: dataset q vs one-step model samples
      {
        std::vector<double> data;
        data.reserve(qs.samples.size());
        for (const QSample& s : qs.samples) data.push_back(s.q);
        const std::size_t nm =
            std::min<std::size_t>(rc.i64("hist_samples"), qs.samples.size());
        if (nm == 0) throw ConfigError("q-dataset has no samples");
        std::vector<double> model;
        model.reserve(nm);
        for (std::size_t i = 0; i < nm; ++i) {
          const QSample& s = qs.samples[i * qs.samples.size() / nm];
          Rng rng = derive_rng(seed, tag_hash("plot-hist"), i);
          model.push_back(one_step_sample(cm, s.s.data(), s.a.data(), 1, rng)[0]);
        }
        const int bins = rc.i32("hist_bins");
        if (bins < 1) throw ConfigError("hist_bins must be >= 1");
        double lo = 1e300, hi = -1e300;
        for (double v : data) lo = std::min(lo, v), hi = std::max(hi, v);
        for (double v : model) lo = std::min(lo, v), hi = std::max(hi, v);
        if (!(hi > lo)) hi = lo + 1.0;
        const double w = (hi - lo) / bins;
        std::vector<long> cd(bins, 0), cmo(bins, 0);
        auto slot = [&](double v) {
          return std::min<long>(bins - 1,
                                std::max<long>(0, static_cast<long>((v - lo) / w)));
        };
        for (double v : data) ++cd[slot(v)];
        for (double v : model) ++cmo[slot(v)];
        std::string csv = csv_header(rc);
        csv += "bin_lo,bin_hi,count_data,count_model\n";
        for (int b = 0; b < bins; ++b)
          csv += fmt_g(lo + b * w) + "," + fmt_g(lo + (b + 1) * w) + "," +
                 std::to_string(cd[b]) + "," + std::to_string(cmo[b]) + "\n";
        write_text((outdir / "hist_q.csv").string(), csv);
      }

      // (b) uncertainty quantile table, same probe as diagnose-uncertainty
      {
        const UncProbe u = probe_uncertainty(cm, qs, uncertainty_from(rc),
                                             rc.i32("diag_probes"), seed);
        write_text((outdir / "uncertainty_quantiles.csv").string(),
                   uncertainty_csv(rc, u));
      }

      // (c) per-log learning curves, split into train and eval series
      std::vector<std::string> used_stems;
      for (const std::string& mp : metrics_paths) {
        std::string stem = sanitize_stem(mp);
        int dup = 1;
        while (std::find(used_stems.begin(), used_stems.end(), stem) !=
               used_stems.end())
          stem = sanitize_stem(mp) + "_" + std::to_string(++dup);
        used_stems.push_back(stem);

        std::string train_csv = csv_header(rc);
        train_csv += "# source = " + mp + "\n";
        train_csv += "step,critic_loss,actor_loss,mean_h,u_frac\n";
        std::string eval_csv = csv_header(rc);
        eval_csv += "# source = " + mp + "\n";
        eval_csv += "step,eval_mean,eval_std,clamped_actions\n";

        const std::vector<unsigned char> raw = slurp_file(mp);
        const std::string text(raw.begin(), raw.end());
        std::size_t pos = 0;
        long lineno = 0;
        while (pos < text.size()) {
          const std::size_t nl = text.find('\n', pos);
          const std::string line =
              text.substr(pos, nl == std::string::npos ? nl : nl - pos);
          pos = nl == std::string::npos ? text.size() : nl + 1;
          ++lineno;
          if (line.empty()) continue;
          nlohmann::json j;
          try {
            j = nlohmann::json::parse(line);
          } catch (const nlohmann::json::parse_error&) {
            throw ArtifactError("malformed metrics line " + std::to_string(lineno) +
                                " in " + mp);
          }
          if (j.contains("critic_loss")) {
            train_csv += std::to_string(j["step"].get<long>()) + "," +
                         fmt_g(j["critic_loss"].get<double>()) + "," +
                         (j.contains("actor_loss")
                              ? fmt_g(j["actor_loss"].get<double>())
                              : std::string()) +
                         "," + fmt_g(j["mean_h"].get<double>()) + "," +
                         fmt_g(j["u_frac"].get<double>()) + "\n";
          } else if (j.contains("eval_mean")) {
            eval_csv += std::to_string(j["step"].get<long>()) + "," +
                        fmt_g(j["eval_mean"].get<double>()) + "," +
                        fmt_g(j["eval_std"].get<double>()) + "," +
                        std::to_string(j["clamped_actions"].get<long>()) + "\n";
          }
        }
        write_text((outdir / ("curves_train_" + stem + ".csv")).string(), train_csv);
        write_text((outdir / ("curves_eval_" + stem + ".csv")).string(), eval_csv);
      }
      std::printf("emit-plots: wrote %s\n", outdir.string().c_str());
    });

    app.parse(argc, argv);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "qdq: config error: %s\n", e.what());
    return 2;
  } catch (const qdq::ConfigError& e) {
    std::fprintf(stderr, "qdq: config error: %s\n", e.what());
    return 2;
  } catch (const qdq::ArtifactError& e) {
    std::fprintf(stderr, "qdq: artifact error: %s\n", e.what());
    return 3;
  } catch (const qdq::NumericError& e) {
    std::fprintf(stderr, "qdq: numerical failure: %s\n", e.what());
    return 4;
  } catch (const qdq::VerifyError& e) {
    std::fprintf(stderr, "qdq: verification failure: %s\n", e.what());
    return 5;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "qdq: %s\n", e.what());
    return 1;
  }
}
