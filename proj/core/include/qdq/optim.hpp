#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qdq/mlp.hpp"
#include "qdq/tensor.hpp"

namespace qdq {

class BinWriter;
class BinReader;

// Per-tensor Adam moments. RAdam shares the state layout; `rectified`
// selects the variance-rectified update rule.
struct AdamState {
  Tensor m, v;
  std::int64_t t = 0;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool rectified = false;  // RAdam (rectification threshold rho_t > 5)
};

// One update step. Throws NumericError naming `label` if the gradient is not
// finite. Parameters update in storage order, so steps are reproducible.
void adam_step(Tensor& p, const Tensor& g, AdamState& st, const AdamConfig& cfg,
               const std::string& label);

// Optimizer over a whole network with a parallel gradient holder.
struct MlpOptimizer {
  AdamConfig cfg;
  std::vector<AdamState> states;  // 2 per layer: W then b

  void init(const Mlp& net);
  void step(Mlp& net, const Mlp& grads, const std::string& label);
};

// gradient holder with the same shapes as `net`, zero-filled
Mlp make_grads(const Mlp& net);
void zero_grads(Mlp& grads);

// target <- kappa * online + (1 - kappa) * target, elementwise
void polyak_update(Mlp& target, const Mlp& online, double kappa);

void write_adam(BinWriter& w, const AdamState& st);
AdamState read_adam(BinReader& r);
void write_optimizer(BinWriter& w, const MlpOptimizer& opt);
void read_optimizer(BinReader& r, MlpOptimizer& opt);

}  // namespace qdq
