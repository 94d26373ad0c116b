#include "wstal/boundary_refine.hpp"

#include <cmath>
#include <iostream>

#include "wstal/errors.hpp"

namespace wstal {

using ad::Var;

FusionMode parse_fusion_mode(std::string_view name) {
  if (name == "weighted_sum") return FusionMode::kWeightedSum;
  if (name == "add") return FusionMode::kAdd;
  if (name == "a_only") return FusionMode::kSalientOnly;
  if (name == "b_only") return FusionMode::kNonSalientOnly;
  if (name == "self") return FusionMode::kSelf;
  if (name == "temporal_only") return FusionMode::kTemporalOnly;
  throw ConfigError("unknown fusion mode '" + std::string(name) + "'");
}

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kWeightedSum:
      return "weighted_sum";
    case FusionMode::kAdd:
      return "add";
    case FusionMode::kSalientOnly:
      return "a_only";
    case FusionMode::kNonSalientOnly:
      return "b_only";
    case FusionMode::kSelf:
      return "self";
    case FusionMode::kTemporalOnly:
      return "temporal_only";
  }
  return "?";
}

InteractionUnit InteractionUnit::bind(const BoundParameters& p,
                                      const std::string& prefix) {
  return InteractionUnit{p[prefix + "w1"], p[prefix + "b1"], p[prefix + "w2"],
                         p[prefix + "b2"]};
}

void init_interaction_unit(ParameterSet& params, const ModelDims& dims,
                           std::mt19937_64& rng, const std::string& prefix) {
  const Index D = dims.feature_dim;
  if (dims.reduction < 1 || D % dims.reduction != 0) {
    throw ConfigError("reduction r=" + std::to_string(dims.reduction) +
                      " must divide feature_dim=" + std::to_string(D));
  }
  const Index hidden = D / dims.reduction;
  params[prefix + "w1"] = fan_in_uniform(D, hidden, D, rng);
  params[prefix + "b1"] = Matrix::Zero(1, hidden);
  params[prefix + "w2"] = fan_in_uniform(hidden, D, hidden, rng);
  params[prefix + "b2"] = Matrix::Zero(1, D);
}

Var channel_interact(Var x, const InteractionUnit& unit) {
  Var hidden = ad::relu(ad::add_row(ad::matmul(x, unit.w1), unit.b1));
  Var theta = ad::add_row(ad::matmul(hidden, unit.w2), unit.b2);
  Var gate = ad::softmax(theta, 1);
  return ad::add(ad::mul(gate, x), x);
}

Var temporal_interact(Var query, Var keys, bool scaled) {
  if (query.cols() != keys.cols()) {
    throw DimensionError("temporal_interact: query and keys differ in width");
  }
  if (keys.rows() < 1) throw DimensionError("temporal_interact: no keys");
  Var affinity = ad::matmul(query, ad::transpose(keys));
  if (scaled) {
    affinity = ad::scale(affinity, 1.0 / std::sqrt(static_cast<double>(keys.cols())));
  }
  return ad::matmul(ad::softmax(affinity, 1), keys);
}

Var refine_boundaries(Var features, const SaliencyPartition& partition,
                      const InteractionUnit& salient_unit,
                      const InteractionUnit& non_salient_unit,
                      const RefineConfig& config) {
  if (partition.size() != features.rows()) {
    throw DimensionError("refine_boundaries: partition covers " +
                         std::to_string(partition.size()) + " snippets, features " +
                         std::to_string(features.rows()));
  }
  if (!(config.sigma >= 0 && config.sigma <= 1)) {
    throw ConfigError("sigma must lie in [0, 1]");
  }
  const bool scaled = config.scaled_attention;
  if (config.mode == FusionMode::kSelf) {
    return temporal_interact(features, features, scaled);
  }

  const std::vector<Index> a_rows = partition.salient();
  const std::vector<Index> b_rows = partition.non_salient();
  const bool channel = config.mode != FusionMode::kTemporalOnly;

  auto path = [&](const std::vector<Index>& rows, const InteractionUnit& unit) {
    Var subset = ad::gather_rows(features, rows);
    Var keys = channel ? channel_interact(subset, unit) : subset;
    return temporal_interact(features, keys, scaled);
  };

  bool use_a = !a_rows.empty();
  bool use_b = !b_rows.empty();
  if (config.mode == FusionMode::kSalientOnly) use_b = false;
  if (config.mode == FusionMode::kNonSalientOnly) use_a = false;

  double wa = 1.0;
  double wb = 1.0;
  if (config.mode == FusionMode::kWeightedSum || config.mode == FusionMode::kTemporalOnly) {
    wa = config.sigma;
    wb = 1.0 - config.sigma;
    // Skip a path whose weight is exactly zero so the other reduces exactly.
    if (wa == 0.0) use_a = false;
    if (wb == 0.0) use_b = false;
  }

  if (use_a && use_b) {
    return ad::add(ad::scale(path(a_rows, salient_unit), wa),
                   ad::scale(path(b_rows, non_salient_unit), wb));
  }
  if (use_a) return path(a_rows, salient_unit);
  if (use_b) return path(b_rows, non_salient_unit);

  // The requested path has no snippets: fall back to whichever side exists.
  std::clog << "refine_boundaries: requested path is empty, using the other side\n";
  return a_rows.empty() ? path(b_rows, non_salient_unit)
                        : path(a_rows, salient_unit);
}

}  // namespace wstal
