#include "qdq/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "qdq/errors.hpp"

namespace qdq {

NoiseSchedule make_schedule(double sigma_min, double sigma_max, int n, double rho) {
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
    throw ConfigError("schedule: need 0 < sigma_min < sigma_max");
  if (n < 2) throw ConfigError("schedule: need at least 2 points");
  if (!(rho > 0.0)) throw ConfigError("schedule: rho must be positive");
  NoiseSchedule s;
  s.sigma_min = sigma_min;
  s.sigma_max = sigma_max;
  s.n = n;
  s.rho = rho;
  s.t.resize(n);
  const double lo = std::pow(sigma_min, 1.0 / rho);
  const double hi = std::pow(sigma_max, 1.0 / rho);
  for (int i = 0; i < n; ++i) {
    const double u = static_cast<double>(i) / static_cast<double>(n - 1);
    s.t[i] = std::pow(lo + u * (hi - lo), rho);
  }
  s.t.front() = sigma_min;  // pow round trip is not exact
  s.t.back() = sigma_max;
  return s;
}

std::vector<double> sampling_sigmas(const NoiseSchedule& sched, int steps) {
  if (steps < 1) throw ConfigError("sampling: need at least 1 step");
  NoiseSchedule sub =
      make_schedule(sched.sigma_min, sched.sigma_max, steps + 1, sched.rho);
  std::reverse(sub.t.begin(), sub.t.end());
  return sub.t;
}

}  // namespace qdq
