#pragma once

#include <map>
#include <string>
#include <vector>

#include "wstal/tensor.hpp"

namespace wstal {

// Named trainable matrices. Iteration order is the lexicographic name
// order, which fixes the checkpoint layout and the optimizer visit order.
using ParameterSet = std::map<std::string, Matrix>;

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
  long step = 0;
};

// One Adam update with bias correction. Parameters without an entry in
// `grads` are left untouched. Throws TrainingError naming the parameter if a
// gradient is not finite, and DimensionError on shape disagreement.
void adam_step(ParameterSet& params, const ParameterSet& grads,
               AdamState& state, const AdamConfig& config);

}  // namespace wstal
