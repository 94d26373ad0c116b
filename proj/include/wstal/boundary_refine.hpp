#pragma once

// Information interaction units. The channel-wise unit re-weights the
// channels of each snippet with a softmax gate produced by an FC-ReLU-FC
// MLP, plus a residual path; the temporal unit lets every snippet of the
// video attend over a set of key snippets.

#include <random>
#include <string>
#include <string_view>

#include "wstal/base_branch.hpp"
#include "wstal/saliency.hpp"

namespace wstal {

enum class FusionMode {
  kWeightedSum,     // sigma * salient + (1 - sigma) * non-salient
  kAdd,             // salient + non-salient
  kSalientOnly,     // drops the non-salient path
  kNonSalientOnly,  // drops the salient path
  kSelf,            // temporal unit of F with itself, no partition
  kTemporalOnly,    // weighted sum without the channel units
};

FusionMode parse_fusion_mode(std::string_view name);
std::string_view to_string(FusionMode mode);

struct InteractionUnit {
  ad::Var w1;  // D x D/r
  ad::Var b1;  // 1 x D/r
  ad::Var w2;  // D/r x D
  ad::Var b2;  // 1 x D

  static InteractionUnit bind(const BoundParameters& p, const std::string& prefix);
};

// Adds prefix + {w1, b1, w2, b2}. Throws ConfigError unless r divides D.
void init_interaction_unit(ParameterSet& params, const ModelDims& dims,
                           std::mt19937_64& rng, const std::string& prefix);

// X_hat = softmax_channels(theta(X)) * X + X.
ad::Var channel_interact(ad::Var x, const InteractionUnit& unit);

// softmax_rows(query * keys^T) * keys. `scaled` divides the affinity by
// sqrt(D) first.
ad::Var temporal_interact(ad::Var query, ad::Var keys, bool scaled = false);

struct RefineConfig {
  double sigma = 0.88;
  FusionMode mode = FusionMode::kWeightedSum;
  bool scaled_attention = false;
};

// Salient and non-salient snippets each pass through their own channel unit
// and then act as keys for the whole video; the two results are fused per
// `config.mode`. An empty side falls back to the other path alone.
ad::Var refine_boundaries(ad::Var features, const SaliencyPartition& partition,
                          const InteractionUnit& salient_unit,
                          const InteractionUnit& non_salient_unit,
                          const RefineConfig& config);

}  // namespace wstal
