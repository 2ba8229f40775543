#include "qdq/genq.hpp"

#include <cmath>
#include <cstring>

#include "qdq/errors.hpp"
#include "qdq/graph.hpp"
#include "qdq/io.hpp"
#include "qdq/optim.hpp"
#include "qdq/stats.hpp"

namespace qdq {

namespace {

constexpr double kTwoPi = 6.2831853071795864769;

int cond_input_dim(const FourierEmb& emb, int sd, int ad) {
  return 1 + emb.dim() + sd + ad;
}

// EDM-style preconditioning for the denoiser
struct EdmCoef {
  double c_skip, c_out, c_in;
};
EdmCoef edm_coef(double sigma, double sd) {
  const double s2 = sigma * sigma, d2 = sd * sd;
  return {d2 / (s2 + d2), sigma * sd / std::sqrt(s2 + d2), 1.0 / std::sqrt(s2 + d2)};
}

// boundary-exact coefficients for the one-step map
struct CmCoef {
  double c_skip, c_out, c_in;
};
CmCoef cm_coef(double t, double eps, double sd) {
  const double te = t - eps, d2 = sd * sd;
  return {d2 / (te * te + d2), sd * te / std::sqrt(d2 + t * t),
          1.0 / std::sqrt(d2 + t * t)};
}

// one network-input row: [c_in x, emb(log sigma), s_std, a_std]
void fill_row(double* row, const FourierEmb& emb, double cin_x, double log_sigma,
              const double* s_std, const double* a_std, int sd, int ad) {
  row[0] = cin_x;
  emb.write(log_sigma, row + 1);
  std::memcpy(row + 1 + emb.dim(), s_std, sd * sizeof(double));
  std::memcpy(row + 1 + emb.dim() + sd, a_std, ad * sizeof(double));
}

struct StdData {
  int sd, ad;
  std::vector<double> S, A, Q;  // standardized, row-major
};

StdData standardize_all(const QDataset& qs, const Normalizer& norm) {
  StdData d;
  d.sd = qs.state_dim;
  d.ad = qs.action_dim;
  const std::size_t n = qs.samples.size();
  d.S.resize(n * d.sd);
  d.A.resize(n * d.ad);
  d.Q.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    norm.norm_s(qs.samples[i].s.data(), &d.S[i * d.sd]);
    norm.norm_a(qs.samples[i].a.data(), &d.A[i * d.ad]);
    d.Q[i] = norm.norm_q(qs.samples[i].q);
  }
  return d;
}

// denoiser over rows with per-row sigma and per-row standardized condition
void denoise_rows(const ScoreModel& sm, const double* x, const double* sigma,
                  const double* Sstd, const double* Astd, int rows, double* out,
                  MlpScratch& scratch) {
  const int in = cond_input_dim(sm.emb, sm.state_dim, sm.action_dim);
  std::vector<double> X(static_cast<std::size_t>(rows) * in);
  for (int i = 0; i < rows; ++i) {
    const EdmCoef c = edm_coef(sigma[i], sm.sigma_data);
    fill_row(&X[static_cast<std::size_t>(i) * in], sm.emb, c.c_in * x[i],
             std::log(sigma[i]), Sstd + static_cast<std::size_t>(i) * sm.state_dim,
             Astd + static_cast<std::size_t>(i) * sm.action_dim, sm.state_dim,
             sm.action_dim);
  }
  mlp_forward(sm.net, X.data(), rows, out, scratch);
  for (int i = 0; i < rows; ++i) {
    const EdmCoef c = edm_coef(sigma[i], sm.sigma_data);
    out[i] = c.c_skip * x[i] + c.c_out * out[i];
  }
}

void consistency_rows(const ConsistencyModel& cm, const Mlp& which, const double* x,
                      const double* t, const double* Sstd, const double* Astd,
                      int rows, double* out, MlpScratch& scratch) {
  const int in = cond_input_dim(cm.emb, cm.state_dim, cm.action_dim);
  thread_local std::vector<double> X;
  X.resize(static_cast<std::size_t>(rows) * in);
  bool uniform_t = true;
  for (int i = 1; i < rows && uniform_t; ++i) uniform_t = t[i] == t[0];
  if (uniform_t && rows > 0) {
    // one noise level for the whole batch: the coefficients and the level
    // embedding are shared, so build them once and stamp them per row
    const CmCoef c = cm_coef(t[0], cm.sched.sigma_min, cm.sigma_data);
    std::vector<double> emb_row(cm.emb.dim());
    cm.emb.write(std::log(t[0]), emb_row.data());
    for (int i = 0; i < rows; ++i) {
      double* row = &X[static_cast<std::size_t>(i) * in];
      row[0] = c.c_in * x[i];
      std::memcpy(row + 1, emb_row.data(), emb_row.size() * sizeof(double));
      std::memcpy(row + 1 + cm.emb.dim(),
                  Sstd + static_cast<std::size_t>(i) * cm.state_dim,
                  cm.state_dim * sizeof(double));
      std::memcpy(row + 1 + cm.emb.dim() + cm.state_dim,
                  Astd + static_cast<std::size_t>(i) * cm.action_dim,
                  cm.action_dim * sizeof(double));
    }
    mlp_forward(which, X.data(), rows, out, scratch);
    for (int i = 0; i < rows; ++i) out[i] = c.c_skip * x[i] + c.c_out * out[i];
    return;
  }
  for (int i = 0; i < rows; ++i) {
    const CmCoef c = cm_coef(t[i], cm.sched.sigma_min, cm.sigma_data);
    fill_row(&X[static_cast<std::size_t>(i) * in], cm.emb, c.c_in * x[i],
             std::log(t[i]), Sstd + static_cast<std::size_t>(i) * cm.state_dim,
             Astd + static_cast<std::size_t>(i) * cm.action_dim, cm.state_dim,
             cm.action_dim);
  }
  mlp_forward(which, X.data(), rows, out, scratch);
  for (int i = 0; i < rows; ++i) {
    const CmCoef c = cm_coef(t[i], cm.sched.sigma_min, cm.sigma_data);
    out[i] = c.c_skip * x[i] + c.c_out * out[i];
  }
}

void write_schedule(BinWriter& w, const NoiseSchedule& s) {
  w.f64(s.sigma_min);
  w.f64(s.sigma_max);
  w.u32(s.n);
  w.f64(s.rho);
}

NoiseSchedule read_schedule(BinReader& r) {
  const double smin = r.f64();
  const double smax = r.f64();
  const int n = static_cast<int>(r.u32());
  const double rho = r.f64();
  return make_schedule(smin, smax, n, rho);
}

void write_normalizer(BinWriter& w, const Normalizer& n) {
  w.f64s(n.s_mean.data(), n.s_mean.size());
  w.f64s(n.s_scale.data(), n.s_scale.size());
  w.f64s(n.a_mean.data(), n.a_mean.size());
  w.f64s(n.a_scale.data(), n.a_scale.size());
  w.f64(n.q_mean);
  w.f64(n.q_scale);
}

Normalizer read_normalizer(BinReader& r, int sd, int ad) {
  Normalizer n;
  n.s_mean.resize(sd);
  r.f64s(n.s_mean.data(), sd);
  n.s_scale.resize(sd);
  r.f64s(n.s_scale.data(), sd);
  n.a_mean.resize(ad);
  r.f64s(n.a_mean.data(), ad);
  n.a_scale.resize(ad);
  r.f64s(n.a_scale.data(), ad);
  n.q_mean = r.f64();
  n.q_scale = r.f64();
  return n;
}

void write_emb(BinWriter& w, const FourierEmb& e) {
  w.u64(e.seed);
  w.f64(e.scale);
  w.u32(static_cast<std::uint32_t>(e.freq.size()));
  w.f64s(e.freq.data(), e.freq.size());
}

FourierEmb read_emb(BinReader& r) {
  FourierEmb e;
  e.seed = r.u64();
  e.scale = r.f64();
  const std::uint32_t n = r.u32();
  e.freq.resize(n);
  r.f64s(e.freq.data(), n);
  return e;
}

NoiseSchedule resolve_schedule(const GenTrainConfig& cfg) {
  return make_schedule(cfg.schedule.sigma_min, cfg.schedule.sigma_max,
                       cfg.schedule.n, cfg.schedule.rho);
}

}  // namespace

FourierEmb FourierEmb::make(std::uint64_t seed, int features, double scale) {
  if (features < 1) throw ConfigError("fourier embedding needs at least 1 feature");
  FourierEmb e;
  e.seed = seed;
  e.scale = scale;
  e.freq.resize(features);
  Rng rng = derive_rng(seed, tag_hash("fourier"));
  for (auto& f : e.freq) f = scale * rng.normal();
  return e;
}

void FourierEmb::write(double u, double* out) const {
  for (std::size_t j = 0; j < freq.size(); ++j) {
    const double arg = kTwoPi * freq[j] * u;
    out[2 * j] = std::sin(arg);
    out[2 * j + 1] = std::cos(arg);
  }
}

Normalizer Normalizer::fit(const QDataset& qs) {
  if (qs.samples.empty()) throw ConfigError("cannot fit a normalizer on no samples");
  const int sd = qs.state_dim, ad = qs.action_dim;
  const double n = static_cast<double>(qs.samples.size());
  Normalizer out;
  out.s_mean.assign(sd, 0.0);
  out.s_scale.assign(sd, 1.0);
  out.a_mean.assign(ad, 0.0);
  out.a_scale.assign(ad, 1.0);
  for (const auto& x : qs.samples) {
    for (int j = 0; j < sd; ++j) out.s_mean[j] += x.s[j];
    for (int j = 0; j < ad; ++j) out.a_mean[j] += x.a[j];
    out.q_mean += x.q;
  }
  for (int j = 0; j < sd; ++j) out.s_mean[j] /= n;
  for (int j = 0; j < ad; ++j) out.a_mean[j] /= n;
  out.q_mean /= n;
  if (qs.samples.size() > 1) {
    std::vector<double> sv(sd, 0.0), av(ad, 0.0);
    double qv = 0.0;
    for (const auto& x : qs.samples) {
      for (int j = 0; j < sd; ++j)
        sv[j] += (x.s[j] - out.s_mean[j]) * (x.s[j] - out.s_mean[j]);
      for (int j = 0; j < ad; ++j)
        av[j] += (x.a[j] - out.a_mean[j]) * (x.a[j] - out.a_mean[j]);
      qv += (x.q - out.q_mean) * (x.q - out.q_mean);
    }
    const double denom = n - 1.0;
    for (int j = 0; j < sd; ++j) {
      const double s = std::sqrt(sv[j] / denom);
      if (s > 1e-12) out.s_scale[j] = s;
    }
    for (int j = 0; j < ad; ++j) {
      const double s = std::sqrt(av[j] / denom);
      if (s > 1e-12) out.a_scale[j] = s;
    }
    const double s = std::sqrt(qv / denom);
    if (s > 1e-12) out.q_scale = s;
  }
  return out;
}

void Normalizer::norm_s(const double* s, double* out) const {
  for (std::size_t j = 0; j < s_mean.size(); ++j)
    out[j] = (s[j] - s_mean[j]) / s_scale[j];
}

void Normalizer::norm_a(const double* a, double* out) const {
  for (std::size_t j = 0; j < a_mean.size(); ++j)
    out[j] = (a[j] - a_mean[j]) / a_scale[j];
}

ScoreModel train_diffusion(const QDataset& qs, const GenTrainConfig& cfg,
                           std::uint64_t seed) {
  if (qs.samples.empty()) throw ConfigError("diffusion training needs samples");
  ScoreModel sm;
  sm.env_name = qs.env_name;
  sm.state_dim = qs.state_dim;
  sm.action_dim = qs.action_dim;
  sm.sched = resolve_schedule(cfg);
  sm.norm = Normalizer::fit(qs);
  sm.sigma_data = 1.0;  // q is standardized before training
  sm.emb = FourierEmb::make(derive_rng(seed, tag_hash("emb-seed")).next_u64(),
                            cfg.emb_features, cfg.emb_scale);

  const int in = cond_input_dim(sm.emb, sm.state_dim, sm.action_dim);
  Rng init = derive_rng(seed, tag_hash("diffusion-init"));
  sm.net = make_mlp(in, cfg.hidden, cfg.layers, 1, Act::swish, init);

  const StdData data = standardize_all(qs, sm.norm);
  const std::size_t n = qs.samples.size();
  Mlp grads = make_grads(sm.net);
  MlpOptimizer opt;
  opt.cfg.lr = cfg.lr;
  opt.init(sm.net);

  Rng rng = derive_rng(seed, tag_hash("diffusion-train"));
  const double lmin = std::log(sm.sched.sigma_min);
  const double lmax = std::log(sm.sched.sigma_max);
  const int B = cfg.batch;
  Tensor X(B, in), Ftgt(B, 1);

  for (long it = 0; it < cfg.iterations; ++it) {
    for (int b = 0; b < B; ++b) {
      const std::size_t idx = rng.uniform_index(n);
      const double sigma = std::exp(lmin + (lmax - lmin) * rng.uniform());
      const double z = rng.normal();
      const double q = data.Q[idx];
      const double x = q + sigma * z;
      const EdmCoef c = edm_coef(sigma, sm.sigma_data);
      fill_row(&X.v[static_cast<std::size_t>(b) * in], sm.emb, c.c_in * x,
               std::log(sigma), &data.S[idx * data.sd], &data.A[idx * data.ad],
               data.sd, data.ad);
      Ftgt.v[b] = (q - c.c_skip * x) / c.c_out;
    }
    Graph g;
    const int F = g.apply_mlp(sm.net, &grads, g.input(X));
    const int loss = mse_against(g, F, Ftgt);
    if (!std::isfinite(g.scalar(loss)))
      throw NumericError("diffusion training diverged at iteration " +
                         std::to_string(it));
    zero_grads(grads);
    g.backward(loss);
    opt.step(sm.net, grads, "denoiser");
  }
  return sm;
}

void denoise(const ScoreModel& sm, const double* x, int rows, double sigma,
             const double* s, const double* a, double* out, MlpScratch& scratch) {
  std::vector<double> sstd(sm.state_dim), astd(sm.action_dim);
  sm.norm.norm_s(s, sstd.data());
  sm.norm.norm_a(a, astd.data());
  std::vector<double> sig(rows, sigma);
  std::vector<double> S(static_cast<std::size_t>(rows) * sm.state_dim);
  std::vector<double> A(static_cast<std::size_t>(rows) * sm.action_dim);
  for (int i = 0; i < rows; ++i) {
    std::memcpy(&S[static_cast<std::size_t>(i) * sm.state_dim], sstd.data(),
                sm.state_dim * sizeof(double));
    std::memcpy(&A[static_cast<std::size_t>(i) * sm.action_dim], astd.data(),
                sm.action_dim * sizeof(double));
  }
  denoise_rows(sm, x, sig.data(), S.data(), A.data(), rows, out, scratch);
}

void heun_integrate(const DenoiseFn& D, const std::vector<double>& sigmas,
                    std::vector<double>& x) {
  if (sigmas.size() < 2) throw ConfigError("heun: need at least 2 noise levels");
  const std::size_t n = x.size();
  std::vector<double> den(n), d(n), xe(n), den2(n);
  for (std::size_t i = 0; i + 1 < sigmas.size(); ++i) {
    const double t = sigmas[i], t2 = sigmas[i + 1];
    D(x, t, den);
    for (std::size_t j = 0; j < n; ++j) d[j] = (x[j] - den[j]) / t;
    for (std::size_t j = 0; j < n; ++j) xe[j] = x[j] + (t2 - t) * d[j];
    D(xe, t2, den2);
    for (std::size_t j = 0; j < n; ++j) {
      const double d2 = (xe[j] - den2[j]) / t2;
      x[j] += (t2 - t) * 0.5 * (d[j] + d2);
      if (!std::isfinite(x[j]))
        throw NumericError("heun integration produced a non-finite value at step " +
                           std::to_string(i));
    }
  }
}

std::vector<double> heun_sample(const ScoreModel& sm, const double* s,
                                const double* a, int steps, int n, Rng& rng) {
  const std::vector<double> sigmas = sampling_sigmas(sm.sched, steps);
  std::vector<double> x(n);
  for (auto& v : x) v = sm.sched.sigma_max * rng.normal();
  MlpScratch scratch;
  DenoiseFn D = [&](const std::vector<double>& xs, double sigma,
                    std::vector<double>& out) {
    denoise(sm, xs.data(), static_cast<int>(xs.size()), sigma, s, a, out.data(),
            scratch);
  };
  heun_integrate(D, sigmas, x);
  for (auto& v : x) v = sm.norm.denorm_q(v);
  return x;
}

ConsistencyModel distill_consistency(const ScoreModel& sm, const QDataset& qs,
                                     const GenTrainConfig& cfg, std::uint64_t seed) {
  if (qs.env_name != sm.env_name || qs.state_dim != sm.state_dim ||
      qs.action_dim != sm.action_dim)
    throw ConfigError("distill: q-dataset does not match the denoiser's env");
  const NoiseSchedule want = resolve_schedule(cfg);
  if (want.sigma_min != sm.sched.sigma_min || want.sigma_max != sm.sched.sigma_max ||
      want.n != sm.sched.n || want.rho != sm.sched.rho)
    throw ConfigError("distill: schedule differs from the denoiser's schedule");

  ConsistencyModel cm;
  cm.env_name = sm.env_name;
  cm.state_dim = sm.state_dim;
  cm.action_dim = sm.action_dim;
  cm.sched = sm.sched;
  cm.sigma_data = sm.sigma_data;
  cm.norm = sm.norm;
  cm.emb = sm.emb;
  cm.net = sm.net;  // student starts from the teacher weights
  cm.ema = sm.net;

  const StdData data = standardize_all(qs, cm.norm);
  const std::size_t n = qs.samples.size();
  Mlp grads = make_grads(cm.net);
  MlpOptimizer opt;
  opt.cfg.lr = cfg.distill_lr;
  opt.cfg.rectified = true;
  opt.init(cm.net);

  Rng rng = derive_rng(seed, tag_hash("distill-train"));
  const int B = cfg.batch;
  const int in = cond_input_dim(cm.emb, cm.state_dim, cm.action_dim);
  const int N = cm.sched.n;
  MlpScratch scratch;

  std::vector<double> x_hi(B), z(B), t_hi(B), t_lo(B), Scond(B * data.sd),
      Acond(B * data.ad), den(B), xe(B), den2(B), x_hat(B), target(B);
  const long window = std::min<long>(1000, std::max<long>(cfg.distill_iterations, 1));
  std::vector<double> root_losses;
  root_losses.reserve(window);
  long ring_at = 0;

  Tensor X(B, in), Tgt(B, 1), CSkipX(B, 1), COut(B, 1);
  for (long it = 0; it < cfg.distill_iterations; ++it) {
    for (int b = 0; b < B; ++b) {
      const std::size_t idx = rng.uniform_index(n);
      const std::size_t pair = rng.uniform_index(static_cast<std::size_t>(N - 1));
      z[b] = rng.normal();
      t_lo[b] = cm.sched.t[pair];
      t_hi[b] = cm.sched.t[pair + 1];
      x_hi[b] = data.Q[idx] + t_hi[b] * z[b];
      std::memcpy(&Scond[static_cast<std::size_t>(b) * data.sd],
                  &data.S[idx * data.sd], data.sd * sizeof(double));
      std::memcpy(&Acond[static_cast<std::size_t>(b) * data.ad],
                  &data.A[idx * data.ad], data.ad * sizeof(double));
    }
    // one frozen-teacher Heun step from t_hi down to t_lo
    denoise_rows(sm, x_hi.data(), t_hi.data(), Scond.data(), Acond.data(), B,
                 den.data(), scratch);
    for (int b = 0; b < B; ++b) {
      const double d = (x_hi[b] - den[b]) / t_hi[b];
      xe[b] = x_hi[b] + (t_lo[b] - t_hi[b]) * d;
    }
    denoise_rows(sm, xe.data(), t_lo.data(), Scond.data(), Acond.data(), B,
                 den2.data(), scratch);
    for (int b = 0; b < B; ++b) {
      const double d = (x_hi[b] - den[b]) / t_hi[b];
      const double d2 = (xe[b] - den2[b]) / t_lo[b];
      x_hat[b] = x_hi[b] + (t_lo[b] - t_hi[b]) * 0.5 * (d + d2);
    }
    // EMA target at the lower level
    consistency_rows(cm, cm.ema, x_hat.data(), t_lo.data(), Scond.data(),
                     Acond.data(), B, target.data(), scratch);
    // student prediction at the upper level, through the tape
    for (int b = 0; b < B; ++b) {
      const CmCoef c = cm_coef(t_hi[b], cm.sched.sigma_min, cm.sigma_data);
      fill_row(&X.v[static_cast<std::size_t>(b) * in], cm.emb, c.c_in * x_hi[b],
               std::log(t_hi[b]), &Scond[static_cast<std::size_t>(b) * data.sd],
               &Acond[static_cast<std::size_t>(b) * data.ad], data.sd, data.ad);
      CSkipX.v[b] = c.c_skip * x_hi[b];
      COut.v[b] = c.c_out;
      Tgt.v[b] = target[b];
    }
    Graph g;
    const int F = g.apply_mlp(cm.net, &grads, g.input(X));
    const int f = g.add(g.input(CSkipX), g.mul(g.input(COut), F));
    const int loss = mse_against(g, f, Tgt);
    const double lv = g.scalar(loss);
    if (!std::isfinite(lv))
      throw NumericError("distillation diverged at iteration " + std::to_string(it));
    zero_grads(grads);
    g.backward(loss);
    opt.step(cm.net, grads, "consistency");
    polyak_update(cm.ema, cm.net, 1.0 - cfg.ema);

    if (cfg.distill_iterations - it <= window) {
      if (static_cast<long>(root_losses.size()) < window)
        root_losses.push_back(std::sqrt(lv));
      else
        root_losses[ring_at++ % window] = std::sqrt(lv);
    }
  }
  cm.self_consistency =
      root_losses.empty() ? 0.0 : linear_quantile(root_losses, 0.95);
  return cm;
}

void consistency_f(const ConsistencyModel& cm, const Mlp& which, const double* x,
                   int rows, double t, const double* s, const double* a,
                   double* out, MlpScratch& scratch) {
  std::vector<double> sstd(cm.state_dim), astd(cm.action_dim);
  cm.norm.norm_s(s, sstd.data());
  cm.norm.norm_a(a, astd.data());
  std::vector<double> ts(rows, t);
  std::vector<double> S(static_cast<std::size_t>(rows) * cm.state_dim);
  std::vector<double> A(static_cast<std::size_t>(rows) * cm.action_dim);
  for (int i = 0; i < rows; ++i) {
    std::memcpy(&S[static_cast<std::size_t>(i) * cm.state_dim], sstd.data(),
                cm.state_dim * sizeof(double));
    std::memcpy(&A[static_cast<std::size_t>(i) * cm.action_dim], astd.data(),
                cm.action_dim * sizeof(double));
  }
  consistency_rows(cm, which, x, ts.data(), S.data(), A.data(), rows, out, scratch);
}

void consistency_f_cond_rows(const ConsistencyModel& cm, const Mlp& which,
                             const double* x, int rows, double t,
                             const double* S_raw, const double* A_raw, double* out,
                             MlpScratch& scratch) {
  thread_local std::vector<double> S, A, ts;
  S.resize(static_cast<std::size_t>(rows) * cm.state_dim);
  A.resize(static_cast<std::size_t>(rows) * cm.action_dim);
  for (int i = 0; i < rows; ++i) {
    cm.norm.norm_s(S_raw + static_cast<std::size_t>(i) * cm.state_dim,
                   &S[static_cast<std::size_t>(i) * cm.state_dim]);
    cm.norm.norm_a(A_raw + static_cast<std::size_t>(i) * cm.action_dim,
                   &A[static_cast<std::size_t>(i) * cm.action_dim]);
  }
  ts.assign(rows, t);
  consistency_rows(cm, which, x, ts.data(), S.data(), A.data(), rows, out, scratch);
}

std::vector<double> one_step_sample(const ConsistencyModel& cm, const double* s,
                                    const double* a, int n, Rng& rng) {
  if (n < 1) throw ConfigError("one_step_sample: n must be >= 1");
  std::vector<double> x(n);
  for (auto& v : x) v = cm.sched.sigma_max * rng.normal();
  std::vector<double> out(n);
  MlpScratch scratch;
  consistency_f(cm, cm.ema, x.data(), n, cm.sched.sigma_max, s, a, out.data(),
                scratch);
  for (int i = 0; i < n; ++i) {
    out[i] = cm.norm.denorm_q(out[i]);
    if (!std::isfinite(out[i]))
      throw NumericError("one-step sample " + std::to_string(i) + " is not finite");
  }
  return out;
}

double empirical_lipschitz(const ConsistencyModel& cm, const double* s,
                           const double* a, int pairs, Rng& rng) {
  MlpScratch scratch;
  std::vector<double> x(2);
  std::vector<double> f(2);
  double worst = 0.0;
  for (int i = 0; i < pairs; ++i) {
    x[0] = cm.sched.sigma_max * rng.normal();
    x[1] = cm.sched.sigma_max * rng.normal();
    if (std::abs(x[0] - x[1]) < 1e-9) continue;
    consistency_f(cm, cm.ema, x.data(), 2, cm.sched.sigma_max, s, a, f.data(),
                  scratch);
    worst = std::max(worst, std::abs(f[0] - f[1]) / std::abs(x[0] - x[1]));
  }
  return worst;
}

void save_score_model(const std::string& path, const ScoreModel& sm) {
  BinWriter w(path);
  w.magic("QDQDM1");
  w.str(sm.config);
  w.str(sm.env_name);
  w.u32(sm.state_dim);
  w.u32(sm.action_dim);
  write_schedule(w, sm.sched);
  w.f64(sm.sigma_data);
  write_normalizer(w, sm.norm);
  write_emb(w, sm.emb);
  write_mlp(w, sm.net);
  w.close();
}

ScoreModel load_score_model(const std::string& path) {
  BinReader r(path);
  r.expect_magic("QDQDM1", "denoiser model");
  ScoreModel sm;
  sm.config = r.str();
  sm.env_name = r.str();
  sm.state_dim = static_cast<int>(r.u32());
  sm.action_dim = static_cast<int>(r.u32());
  sm.sched = read_schedule(r);
  sm.sigma_data = r.f64();
  sm.norm = read_normalizer(r, sm.state_dim, sm.action_dim);
  sm.emb = read_emb(r);
  sm.net = read_mlp(r);
  return sm;
}

void save_consistency_model(const std::string& path, const ConsistencyModel& cm) {
  BinWriter w(path);
  w.magic("QDQCM1");
  w.str(cm.config);
  w.str(cm.env_name);
  w.u32(cm.state_dim);
  w.u32(cm.action_dim);
  write_schedule(w, cm.sched);
  w.f64(cm.sigma_data);
  write_normalizer(w, cm.norm);
  write_emb(w, cm.emb);
  write_mlp(w, cm.net);
  write_mlp(w, cm.ema);
  w.f64(cm.self_consistency);
  w.close();
}

ConsistencyModel load_consistency_model(const std::string& path) {
  BinReader r(path);
  r.expect_magic("QDQCM1", "consistency model");
  ConsistencyModel cm;
  cm.config = r.str();
  cm.env_name = r.str();
  cm.state_dim = static_cast<int>(r.u32());
  cm.action_dim = static_cast<int>(r.u32());
  cm.sched = read_schedule(r);
  cm.sigma_data = r.f64();
  cm.norm = read_normalizer(r, cm.state_dim, cm.action_dim);
  cm.emb = read_emb(r);
  cm.net = read_mlp(r);
  cm.ema = read_mlp(r);
  cm.self_consistency = r.f64();
  return cm;
}

}  // namespace qdq
