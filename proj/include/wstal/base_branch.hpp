#pragma once

// Snippet embedding and the classification head: a class-agnostic attention
// (CA) head and a multiple-instance-learning (MIL) head producing temporal
// class activation maps (TCAMs) of shape T x (C+1), background last.

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "wstal/optim.hpp"
#include "wstal/tensor.hpp"

namespace wstal {

struct ModelDims {
  Index feature_dim = 0;
  Index num_classes = 0;
  Index reduction = 4;  // r of the interaction units

  Index tcam_width() const { return num_classes + 1; }
};

// Parameters placed on a tape as differentiable leaves.
class BoundParameters {
 public:
  BoundParameters(ad::Tape& tape, const ParameterSet& params);

  ad::Var operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) > 0; }
  ad::Tape& tape() const { return *tape_; }

  // Gradients of every bound parameter; call after Tape::backward().
  ParameterSet gradients() const;

 private:
  ad::Tape* tape_;
  std::map<std::string, ad::Var> vars_;
};

// rows x cols weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases
// start at zero.
Matrix fan_in_uniform(Index rows, Index cols, Index fan_in, std::mt19937_64& rng);

// Adds "embed.*", "ca.*" and "mil.*" entries. `prefix` lets a second,
// unshared head live alongside the first.
void init_base_branch(ParameterSet& params, const ModelDims& dims,
                      std::mt19937_64& rng);
void init_classifier_head(ParameterSet& params, const ModelDims& dims,
                          std::mt19937_64& rng, const std::string& prefix = "");

// Temporal convolution, kernel 3 with zero padding, followed by ReLU.
ad::Var embed(const BoundParameters& p, ad::Var features);

// Pre-sigmoid attention w . e_t + b, T x 1.
ad::Var ca_logit(const BoundParameters& p, ad::Var embedded, const std::string& prefix = "");

// lambda_t = sigmoid(w . e_t + b), T x 1.
ad::Var ca_attention(const BoundParameters& p, ad::Var embedded,
                     const std::string& prefix = "");

// Per-snippet class logits, T x (C+1).
ad::Var mil_tcam(const BoundParameters& p, ad::Var embedded,
                 const std::string& prefix = "");

// Pooling window for the video-level scores: max(1, ceil(T / divisor)).
Index pooling_k(Index num_snippets, Index divisor = 8);

struct VideoScores {
  ad::Var mil_logits;  // 1 x (C+1), top-k pooled raw TCAM
  ad::Var ca_logits;   // 1 x (C+1), top-k pooled attention-suppressed TCAM
  ad::Var mil;         // softmax of mil_logits
  ad::Var ca;          // softmax of ca_logits
};

VideoScores video_scores(ad::Var tcam, ad::Var attention, Index k);

struct HeadOutput {
  ad::Var attention_logit;  // T x 1, before the sigmoid
  ad::Var attention;   // T x 1
  ad::Var tcam;        // T x (C+1) logits
  ad::Var suppressed;  // attention-weighted tcam
  VideoScores scores;
};

// CA + MIL heads applied to already-embedded features.
HeadOutput classify(const BoundParameters& p, ad::Var embedded,
                    Index pool_divisor = 8, const std::string& prefix = "");

}  // namespace wstal
