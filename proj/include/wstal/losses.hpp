#pragma once

#include <span>
#include <string>

#include "wstal/base_branch.hpp"
#include "wstal/tensor.hpp"

namespace wstal {

// Video-level target of width C+1: the multi-hot label with the background
// bit appended, normalised to sum to one. Throws ContractError when the
// label has no positive class.
Matrix video_target(std::span<const std::uint8_t> label, bool background);

// -sum(target * log_softmax(logits)) for 1 x (C+1) pooled logits.
ad::Var cross_entropy(ad::Var logits, const Matrix& target);

struct ClsWeights {
  double theta_mil = 0.2;
};

// L_CA + theta_mil * L_MIL. The raw MIL stream is trained to see background
// in the video; the attention-suppressed CA stream is trained without it.
ad::Var loss_cls(const VideoScores& scores, std::span<const std::uint8_t> label,
                 const ClsWeights& weights);

// Mean over snippets of KL(target_t || softmax(tcam_t)). The target is a
// constant, so gradients reach only `tcam`.
ad::Var loss_kd(ad::Var tcam, const Matrix& target);
// Same divergence against a distribution given by its log-probabilities.
ad::Var loss_kd_log_probs(ad::Var log_probs, const Matrix& target);

// Per-snippet distribution that takes the background mass from the
// class-agnostic attention: log(lambda) + log_softmax over the C class
// columns, and log(1 - lambda) for background. T x (C+1).
ad::Var attention_log_probs(ad::Var tcam, ad::Var attention_logit);

// -mean(top-s attention) + mean(bottom-s attention), s = max(1, floor(T/8)).
ad::Var loss_att(ad::Var attention);

// Per-snippet class softmax of each TCAM, summed and renormalised to a
// distribution per snippet. Either argument may be absent (invalid Var).
Matrix pseudo_tcams(ad::Var refined_tcam, ad::Var enhanced_tcam);
// Sum of exp(log_probs) of the available branches, renormalised per snippet.
Matrix pseudo_from_log_probs(ad::Var refined, ad::Var enhanced);

// What the pseudo labels and the distillation target are built from:
// the (C+1)-way softmax of each TCAM, or the attention-weighted
// distribution of attention_log_probs.
enum class PseudoTarget { kTcam, kAttention };
PseudoTarget parse_pseudo_target(std::string_view name);
std::string_view to_string(PseudoTarget target);

struct LossParts {
  double cls = 0.0;
  double kd = 0.0;
  double att = 0.0;
};

// cls + kd + lambda * att. Throws TrainingError naming any non-finite part.
double total_loss(const LossParts& parts, double lambda_att);
ad::Var total_loss(ad::Var cls, ad::Var kd, ad::Var att, double lambda_att);

}  // namespace wstal
