#pragma once

#include <vector>

namespace qdq {

// Power-spaced noise levels t_i = (min^(1/rho) + (i-1)/(N-1) * (max^(1/rho) -
// min^(1/rho)))^rho, i = 1..N, ascending. Endpoints are pinned exactly.
struct NoiseSchedule {
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  int n = 1000;
  double rho = 7.0;
  std::vector<double> t;
};

NoiseSchedule make_schedule(double sigma_min = 0.002, double sigma_max = 80.0,
                            int n = 1000, double rho = 7.0);

// descending levels for ODE integration, sigma_max down to sigma_min,
// steps + 1 points (steps >= 1)
std::vector<double> sampling_sigmas(const NoiseSchedule& sched, int steps);

}  // namespace qdq
