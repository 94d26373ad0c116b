#include "wstal/optim.hpp"

#include <cmath>

#include "wstal/errors.hpp"

namespace wstal {

void adam_step(ParameterSet& params, const ParameterSet& grads,
               AdamState& state, const AdamConfig& config) {
  for (const auto& [name, g] : grads) {
    if (!g.allFinite()) {
      throw TrainingError("non-finite gradient for parameter '" + name + "'");
    }
    auto it = params.find(name);
    if (it == params.end()) {
      throw TrainingError("gradient for unknown parameter '" + name + "'");
    }
    if (it->second.rows() != g.rows() || it->second.cols() != g.cols()) {
      throw DimensionError("gradient shape differs for parameter '" + name + "'");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);

  for (const auto& [name, g] : grads) {
    Matrix& p = params.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
    auto [vit, v_new] = state.v.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    p.array() -= config.lr * (m.array() / correction1) /
                 ((v.array() / correction2).sqrt() + config.eps);
  }
}

}  // namespace wstal
