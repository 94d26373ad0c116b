#include "wstal/losses.hpp"

#include <cmath>

#include "wstal/errors.hpp"

namespace wstal {

using ad::Var;

Matrix video_target(std::span<const std::uint8_t> label, bool background) {
  const auto C = static_cast<Index>(label.size());
  Matrix t = Matrix::Zero(1, C + 1);
  double positives = 0;
  for (Index c = 0; c < C; ++c) {
    if (label[c]) {
      t(0, c) = 1.0;
      ++positives;
    }
  }
  if (positives == 0) throw ContractError("video label has no positive class");
  if (background) t(0, C) = 1.0;
  return t / t.sum();
}

Var cross_entropy(Var logits, const Matrix& target) {
  if (logits.rows() != target.rows() || logits.cols() != target.cols()) {
    throw DimensionError("cross_entropy: target shape differs from logits");
  }
  Var logp = ad::log_softmax(logits, 1);
  return ad::scale(ad::sum_all(ad::mul(logp, logits.tape()->constant(target))), -1.0);
}

Var loss_cls(const VideoScores& scores, std::span<const std::uint8_t> label,
             const ClsWeights& weights) {
  Var ca = cross_entropy(scores.ca_logits, video_target(label, false));
  if (weights.theta_mil == 0.0) return ca;
  Var mil = cross_entropy(scores.mil_logits, video_target(label, true));
  return ad::add(ca, ad::scale(mil, weights.theta_mil));
}

Var loss_kd(Var tcam, const Matrix& target) {
  if (tcam.rows() != target.rows() || tcam.cols() != target.cols()) {
    throw DimensionError("loss_kd: pseudo-label shape differs from TCAM");
  }
  return loss_kd_log_probs(ad::log_softmax(tcam, 1), target);
}

Var loss_kd_log_probs(Var log_probs, const Matrix& target) {
  if (log_probs.rows() != target.rows() || log_probs.cols() != target.cols()) {
    throw DimensionError("loss_kd: pseudo-label shape differs from TCAM");
  }
  // Entropy term of the target is a constant: sum p log p with 0 log 0 = 0.
  double neg_entropy = 0.0;
  for (Index i = 0; i < target.size(); ++i) {
    const double p = target.data()[i];
    if (p > 0) neg_entropy += p * std::log(p);
  }
  const double T = static_cast<double>(log_probs.rows());
  Var cross = ad::sum_all(ad::mul(log_probs, log_probs.tape()->constant(target)));
  return ad::scale(ad::add_scalar(ad::scale(cross, -1.0), neg_entropy), 1.0 / T);
}

Var attention_log_probs(Var tcam, Var attention_logit) {
  if (attention_logit.rows() != tcam.rows() || attention_logit.cols() != 1) {
    throw DimensionError("attention_log_probs: attention must be T x 1");
  }
  const Index C = tcam.cols() - 1;
  Var classes = ad::log_softmax(ad::slice_cols(tcam, 0, C), 1);
  Var fg = ad::log_sigmoid(attention_logit);
  Var bg = ad::log_sigmoid(ad::scale(attention_logit, -1.0));
  // Broadcast log(lambda) across the class columns.
  Var ones = tcam.tape()->constant(Matrix::Ones(1, C));
  return ad::concat_cols(ad::add(classes, ad::matmul(fg, ones)), bg);
}

Var loss_att(Var attention) {
  const Index s = std::max<Index>(1, attention.rows() / 8);
  Var top = ad::topk_mean(attention, 0, s);
  Var bottom = ad::scale(ad::topk_mean(ad::scale(attention, -1.0), 0, s), -1.0);
  return ad::sub(bottom, top);
}

namespace {

Matrix sum_rows_normalised(const Matrix* a, const Matrix* b) {
  if (a == nullptr && b == nullptr) {
    throw ContractError("pseudo labels need at least one branch");
  }
  if (a != nullptr && b != nullptr && (a->rows() != b->rows() || a->cols() != b->cols())) {
    throw DimensionError("pseudo labels: branch shapes differ");
  }
  Matrix sum = a != nullptr ? *a : *b;
  if (a != nullptr && b != nullptr) sum += *b;
  for (Index t = 0; t < sum.rows(); ++t) sum.row(t) /= sum.row(t).sum();
  return sum;
}

}  // namespace

Matrix pseudo_tcams(Var refined_tcam, Var enhanced_tcam) {
  auto probs = [](Var v) {
    ad::Tape scratch;
    return Matrix(ad::softmax(scratch.constant(v.value()), 1).value());
  };
  const Matrix r = refined_tcam.valid() ? probs(refined_tcam) : Matrix();
  const Matrix e = enhanced_tcam.valid() ? probs(enhanced_tcam) : Matrix();
  return sum_rows_normalised(refined_tcam.valid() ? &r : nullptr,
                             enhanced_tcam.valid() ? &e : nullptr);
}

Matrix pseudo_from_log_probs(Var refined, Var enhanced) {
  const Matrix r = refined.valid() ? Matrix(refined.value().array().exp()) : Matrix();
  const Matrix e = enhanced.valid() ? Matrix(enhanced.value().array().exp()) : Matrix();
  return sum_rows_normalised(refined.valid() ? &r : nullptr, enhanced.valid() ? &e : nullptr);
}

PseudoTarget parse_pseudo_target(std::string_view name) {
  if (name == "tcam") return PseudoTarget::kTcam;
  if (name == "attention") return PseudoTarget::kAttention;
  throw ConfigError("unknown pseudo_target '" + std::string(name) + "'");
}

std::string_view to_string(PseudoTarget target) {
  return target == PseudoTarget::kTcam ? "tcam" : "attention";
}

double total_loss(const LossParts& parts, double lambda_att) {
  if (!std::isfinite(parts.cls)) throw TrainingError("classification loss is not finite");
  if (!std::isfinite(parts.kd)) throw TrainingError("distillation loss is not finite");
  if (!std::isfinite(parts.att)) throw TrainingError("attention loss is not finite");
  return parts.cls + parts.kd + lambda_att * parts.att;
}

Var total_loss(Var cls, Var kd, Var att, double lambda_att) {
  total_loss(LossParts{cls.scalar(), kd.scalar(), att.scalar()}, lambda_att);
  return ad::add(ad::add(cls, kd), ad::scale(att, lambda_att));
}

}  // namespace wstal
