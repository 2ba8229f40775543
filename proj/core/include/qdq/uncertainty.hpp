#pragma once

#include <cstdint>
#include <vector>

#include "qdq/genq.hpp"
#include "qdq/tensor.hpp"

namespace qdq {

struct UncertaintyConfig {
  int n_bootstrap = 50;
  double beta = 0.9;  // 0.8 for the action-sensitive preset
};

// h = sample standard deviation (n-1 denominator) of n one-step samples of
// q given (s, a); deterministic given the seed
double estimate_uncertainty(const ConsistencyModel& cm, const double* s,
                            const double* a, const UncertaintyConfig& cfg,
                            std::uint64_t seed);

// one h per row of (S, A); row i samples on the stream (seed, step, i), so a
// rerun of any step reproduces its uncertainties exactly
std::vector<double> estimate_uncertainty_rows(const ConsistencyModel& cm,
                                              const Tensor& S, const Tensor& A,
                                              const UncertaintyConfig& cfg,
                                              std::uint64_t seed,
                                              std::uint64_t step);

// upper beta-quantile of the batch; values strictly above it are the
// high-uncertainty set
double batch_threshold(const std::vector<double>& h, double beta);

// beta off-set; min(1/h, beta) for members, so the factor never exceeds beta
double penalty_factor(double h, double threshold, double beta);

}  // namespace qdq
