#include "qdq/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include "qdq/errors.hpp"
#include "qdq/stats.hpp"

namespace qdq {

double estimate_uncertainty(const ConsistencyModel& cm, const double* s,
                            const double* a, const UncertaintyConfig& cfg,
                            std::uint64_t seed) {
  if (cfg.n_bootstrap < 2)
    throw ConfigError("uncertainty needs at least 2 bootstrap samples");
  Rng rng = derive_rng(seed, tag_hash("uncertainty"));
  const std::vector<double> q = one_step_sample(cm, s, a, cfg.n_bootstrap, rng);
  return stddev_of(q);
}

std::vector<double> estimate_uncertainty_rows(const ConsistencyModel& cm,
                                              const Tensor& S, const Tensor& A,
                                              const UncertaintyConfig& cfg,
                                              std::uint64_t seed,
                                              std::uint64_t step) {
  if (cfg.n_bootstrap < 2)
    throw ConfigError("uncertainty needs at least 2 bootstrap samples");
  const int B = S.rows;
  const int n = cfg.n_bootstrap;
  const int sd = cm.state_dim, ad = cm.action_dim;

  // per-step workspaces are large (B*n rows); reuse them across calls
  thread_local std::vector<double> x, Srep, Arep, f;
  thread_local MlpScratch scratch;

  // row i's draws occupy block i*n..i*n+n-1, in its stream's draw order
  x.resize(static_cast<std::size_t>(B) * n);
  Srep.resize(x.size() * sd);
  Arep.resize(x.size() * ad);
  for (int i = 0; i < B; ++i) {
    Rng rng = derive_rng(seed, tag_hash("uncertainty") ^ step,
                         static_cast<std::uint64_t>(i));
    for (int j = 0; j < n; ++j) {
      const std::size_t r = static_cast<std::size_t>(i) * n + j;
      x[r] = cm.sched.sigma_max * rng.normal();
      std::copy(&S.v[static_cast<std::size_t>(i) * sd],
                &S.v[static_cast<std::size_t>(i) * sd] + sd, &Srep[r * sd]);
      std::copy(&A.v[static_cast<std::size_t>(i) * ad],
                &A.v[static_cast<std::size_t>(i) * ad] + ad, &Arep[r * ad]);
    }
  }
  f.resize(x.size());
  consistency_f_cond_rows(cm, cm.ema, x.data(), static_cast<int>(x.size()),
                          cm.sched.sigma_max, Srep.data(), Arep.data(), f.data(),
                          scratch);
  std::vector<double> h(B);
  for (int i = 0; i < B; ++i) {
    double m = 0.0;
    for (int j = 0; j < n; ++j) m += cm.norm.denorm_q(f[static_cast<std::size_t>(i) * n + j]);
    m /= n;
    double v = 0.0;
    for (int j = 0; j < n; ++j) {
      const double q = cm.norm.denorm_q(f[static_cast<std::size_t>(i) * n + j]);
      v += (q - m) * (q - m);
    }
    h[i] = std::sqrt(v / (n - 1));
    if (!std::isfinite(h[i]))
      throw NumericError("uncertainty estimate is not finite at row " +
                         std::to_string(i));
  }
  return h;
}

double batch_threshold(const std::vector<double>& h, double beta) {
  if (h.empty()) throw ConfigError("batch_threshold: empty batch");
  return linear_quantile(h, beta);
}

double penalty_factor(double h, double threshold, double beta) {
  if (h <= threshold) return beta;
  return std::min(1.0 / h, beta);
}

}  // namespace qdq
