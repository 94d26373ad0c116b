#include "wstal/base_branch.hpp"

#include <cmath>

#include "wstal/errors.hpp"

namespace wstal {

using ad::Var;

BoundParameters::BoundParameters(ad::Tape& tape, const ParameterSet& params)
    : tape_(&tape) {
  for (const auto& [name, value] : params) vars_.emplace(name, tape.variable(value));
}

Var BoundParameters::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

ParameterSet BoundParameters::gradients() const {
  ParameterSet out;
  for (const auto& [name, var] : vars_) out.emplace(name, var.grad());
  return out;
}

Matrix fan_in_uniform(Index rows, Index cols, Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix w(rows, cols);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  return w;
}

void init_base_branch(ParameterSet& params, const ModelDims& dims,
                      std::mt19937_64& rng) {
  const Index D = dims.feature_dim;
  // The three taps share the fan-in of a kernel-3 convolution.
  for (const char* tap : {"embed.w_prev", "embed.w_mid", "embed.w_next"}) {
    params[tap] = fan_in_uniform(D, D, 3 * D, rng);
  }
  params["embed.b"] = Matrix::Zero(1, D);
  init_classifier_head(params, dims, rng);
}

void init_classifier_head(ParameterSet& params, const ModelDims& dims,
                          std::mt19937_64& rng, const std::string& prefix) {
  const Index D = dims.feature_dim;
  params[prefix + "ca.w"] = fan_in_uniform(D, 1, D, rng);
  params[prefix + "ca.b"] = Matrix::Zero(1, 1);
  params[prefix + "mil.w"] = fan_in_uniform(D, dims.tcam_width(), D, rng);
  params[prefix + "mil.b"] = Matrix::Zero(1, dims.tcam_width());
}

Var embed(const BoundParameters& p, Var features) {
  Var prev = ad::shift_rows(features, -1);
  Var next = ad::shift_rows(features, 1);
  Var conv = ad::add(ad::add(ad::matmul(prev, p["embed.w_prev"]),
                             ad::matmul(features, p["embed.w_mid"])),
                     ad::matmul(next, p["embed.w_next"]));
  return ad::relu(ad::add_row(conv, p["embed.b"]));
}

Var ca_logit(const BoundParameters& p, Var embedded, const std::string& prefix) {
  return ad::add_row(ad::matmul(embedded, p[prefix + "ca.w"]), p[prefix + "ca.b"]);
}

Var ca_attention(const BoundParameters& p, Var embedded, const std::string& prefix) {
  return ad::sigmoid(ca_logit(p, embedded, prefix));
}

Var mil_tcam(const BoundParameters& p, Var embedded, const std::string& prefix) {
  return ad::add_row(ad::matmul(embedded, p[prefix + "mil.w"]), p[prefix + "mil.b"]);
}

Index pooling_k(Index num_snippets, Index divisor) {
  return std::max<Index>(1, (num_snippets + divisor - 1) / divisor);
}

VideoScores video_scores(Var tcam, Var attention, Index k) {
  if (attention.rows() != tcam.rows() || attention.cols() != 1) {
    throw DimensionError("video_scores: attention must be T x 1");
  }
  VideoScores s;
  s.mil_logits = ad::topk_mean(tcam, 0, k);
  s.ca_logits = ad::topk_mean(ad::mul_col(tcam, attention), 0, k);
  s.mil = ad::softmax(s.mil_logits, 1);
  s.ca = ad::softmax(s.ca_logits, 1);
  return s;
}

HeadOutput classify(const BoundParameters& p, Var embedded, Index pool_divisor,
                    const std::string& prefix) {
  HeadOutput out;
  out.attention_logit = ca_logit(p, embedded, prefix);
  out.attention = ad::sigmoid(out.attention_logit);
  out.tcam = mil_tcam(p, embedded, prefix);
  out.suppressed = ad::mul_col(out.tcam, out.attention);
  out.scores =
      video_scores(out.tcam, out.attention, pooling_k(embedded.rows(), pool_divisor));
  return out;
}

}  // namespace wstal
