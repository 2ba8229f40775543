#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qdq/mlp.hpp"
#include "qdq/qwindow.hpp"
#include "qdq/rng.hpp"
#include "qdq/schedule.hpp"

namespace qdq {

// Noise-level embedding: frozen Gaussian frequencies f_j ~ N(0, scale^2);
// emb(u) interleaves sin(2 pi f_j u), cos(2 pi f_j u) for u = log(sigma).
struct FourierEmb {
  std::uint64_t seed = 0;
  double scale = 16.0;
  std::vector<double> freq;

  static FourierEmb make(std::uint64_t seed, int features = 8, double scale = 16.0);
  int dim() const { return 2 * static_cast<int>(freq.size()); }
  void write(double u, double* out) const;
};

// Per-dimension standardization fitted on the Q-dataset. Zero-variance
// dimensions keep scale 1 so they pass through unchanged.
struct Normalizer {
  std::vector<double> s_mean, s_scale;
  std::vector<double> a_mean, a_scale;
  double q_mean = 0.0;
  double q_scale = 1.0;

  static Normalizer fit(const QDataset& qs);
  void norm_s(const double* s, double* out) const;
  void norm_a(const double* a, double* out) const;
  double norm_q(double q) const { return (q - q_mean) / q_scale; }
  double denorm_q(double z) const { return z * q_scale + q_mean; }
};

struct GenTrainConfig {
  int hidden = 32;
  int layers = 3;
  int emb_features = 8;
  double emb_scale = 16.0;
  int batch = 256;
  long iterations = 80000;     // denoiser pretraining
  double lr = 5e-4;            // Adam
  long distill_iterations = 160000;
  double distill_lr = 4e-4;    // RAdam
  double ema = 0.999;          // theta^- retention per step
  NoiseSchedule schedule;      // defaults sigma in [0.002, 80], N=1000, rho=7
};

// Denoiser over standardized q conditioned on (s, a). The network runs in a
// preconditioned parameterization: D(x; sigma) = c_skip x + c_out F(c_in x,
// emb(log sigma), s_std, a_std), with sigma_data-dependent coefficients.
struct ScoreModel {
  std::string config;
  std::string env_name;
  int state_dim = 0;
  int action_dim = 0;
  NoiseSchedule sched;
  double sigma_data = 1.0;
  Normalizer norm;
  FourierEmb emb;
  Mlp net;
};

// One-step generator distilled from the denoiser: f(x, t) = c_skip(t) x +
// c_out(t) F(...) with c_skip(eps) = 1, c_out(eps) = 0, so f(x, eps) = x
// holds exactly at the boundary. `ema` is the theta^- copy used for
// inference and as the distillation target.
struct ConsistencyModel {
  std::string config;
  std::string env_name;
  int state_dim = 0;
  int action_dim = 0;
  NoiseSchedule sched;
  double sigma_data = 1.0;
  Normalizer norm;
  FourierEmb emb;
  Mlp net;
  Mlp ema;
  // 95th percentile of root batch losses over the final training window;
  // calibrates the one-step residual between adjacent schedule levels
  double self_consistency = 0.0;
};

// denoising score matching on the Q-dataset; sigma log-uniform per row
ScoreModel train_diffusion(const QDataset& qs, const GenTrainConfig& cfg,
                           std::uint64_t seed);

// batched denoiser evaluation, one shared condition (s, a); x and out hold
// `rows` standardized-q values
void denoise(const ScoreModel& sm, const double* x, int rows, double sigma,
             const double* s, const double* a, double* out, MlpScratch& scratch);

// ODE integrator driver shared by sampling, distillation and the analytic
// test oracle: D(x_rows, sigma) -> denoised rows
using DenoiseFn =
    std::function<void(const std::vector<double>&, double, std::vector<double>&)>;

// second-order Heun walk along descending sigmas, in place
void heun_integrate(const DenoiseFn& D, const std::vector<double>& sigmas,
                    std::vector<double>& x);

// n independent reverse-ODE samples of q given (s, a); `steps` Heun steps
std::vector<double> heun_sample(const ScoreModel& sm, const double* s,
                                const double* a, int steps, int n, Rng& rng);

// student initialized from the teacher; targets from the EMA copy fed by
// one frozen-teacher Heun step between adjacent schedule levels
ConsistencyModel distill_consistency(const ScoreModel& sm, const QDataset& qs,
                                     const GenTrainConfig& cfg, std::uint64_t seed);

// f(x, t | s, a) for `rows` standardized-q inputs through the chosen network
void consistency_f(const ConsistencyModel& cm, const Mlp& which,
                   const double* x, int rows, double t, const double* s,
                   const double* a, double* out, MlpScratch& scratch);

// like consistency_f but with a raw (unstandardized) condition per row;
// row i pairs x[i] with (S_raw + i*state_dim, A_raw + i*action_dim)
void consistency_f_cond_rows(const ConsistencyModel& cm, const Mlp& which,
                             const double* x, int rows, double t,
                             const double* S_raw, const double* A_raw, double* out,
                             MlpScratch& scratch);

// x ~ N(0, sigma_max^2), one forward pass each, de-standardized
std::vector<double> one_step_sample(const ConsistencyModel& cm, const double* s,
                                    const double* a, int n, Rng& rng);

// largest |f(x,T)-f(y,T)|/|x-y| over random pairs; recorded, not bounded
double empirical_lipschitz(const ConsistencyModel& cm, const double* s,
                           const double* a, int pairs, Rng& rng);

void save_score_model(const std::string& path, const ScoreModel& sm);
ScoreModel load_score_model(const std::string& path);
void save_consistency_model(const std::string& path, const ConsistencyModel& cm);
ConsistencyModel load_consistency_model(const std::string& path);

}  // namespace qdq
