#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/gradcheck.hpp"
#include "wstal/errors.hpp"
#include "wstal/losses.hpp"
#include "wstal/pipeline.hpp"

namespace wstal {
namespace {

using testing::uniform;

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

TEST(VideoTarget, NormalisedWithOptionalBackground) {
  const std::vector<std::uint8_t> label{1, 0, 1};
  EXPECT_EQ(video_target(label, false), row({0.5, 0, 0.5, 0}));
  EXPECT_EQ(video_target(label, true), row({1.0 / 3, 0, 1.0 / 3, 1.0 / 3}));
  const std::vector<std::uint8_t> empty{0, 0};
  EXPECT_THROW(video_target(empty, false), ContractError);
}

TEST(CrossEntropy, HandValue) {
  ad::Tape t;
  const Matrix logits = row({std::log(0.7), std::log(0.2), std::log(0.1)});
  const double ce = cross_entropy(t.constant(logits), row({1, 0, 0})).scalar();
  EXPECT_NEAR(ce, -std::log(0.7), 1e-15);
  EXPECT_NEAR(ce, 0.3567, 1e-4);
}

TEST(CrossEntropy, PerfectPredictionGivesLabelEntropy) {
  ad::Tape t;
  const Matrix target = row({0.5, 0.5, 0});
  const Matrix logits = row({0.0, 0.0, -1e3});
  EXPECT_NEAR(cross_entropy(t.constant(logits), target).scalar(), std::log(2.0), 1e-12);
}

TEST(LossCls, ZeroMilWeightLeavesCaLoss) {
  std::mt19937_64 rng(1);
  ad::Tape t;
  const VideoScores s =
      video_scores(t.constant(uniform(9, 3, rng)), ad::sigmoid(t.constant(uniform(9, 1, rng))), 2);
  const std::vector<std::uint8_t> label{0, 1};
  EXPECT_EQ(loss_cls(s, label, ClsWeights{0.0}).scalar(),
            cross_entropy(s.ca_logits, video_target(label, false)).scalar());
  const double both = loss_cls(s, label, ClsWeights{0.2}).scalar();
  EXPECT_NEAR(both,
              cross_entropy(s.ca_logits, video_target(label, false)).scalar() +
                  0.2 * cross_entropy(s.mil_logits, video_target(label, true)).scalar(),
              1e-12);
}

TEST(LossKd, ZeroWhenTargetMatchesPrediction) {
  std::mt19937_64 rng(2);
  ad::Tape t;
  const Matrix tcam = uniform(5, 4, rng);
  const Matrix p = ad::softmax(t.constant(tcam), 1).value();
  EXPECT_NEAR(loss_kd(t.constant(tcam), p).scalar(), 0.0, 1e-14);
}

TEST(LossKd, NonNegative) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    ad::Tape t;
    EXPECT_GE(loss_kd(t.constant(uniform(6, 3, rng, -5, 5)), testing::random_distribution(6, 3, rng))
                  .scalar(),
              -1e-14);
  }
}

TEST(LossKd, OneHotRowsAgainstUniformIsLnTwo) {
  ad::Tape t;
  Matrix target(2, 2);
  target << 1, 0, 0, 1;
  EXPECT_NEAR(loss_kd(t.constant(Matrix::Zero(2, 2)), target).scalar(), std::log(2.0), 1e-15);
  EXPECT_THROW(loss_kd(t.constant(Matrix::Zero(2, 3)), target), DimensionError);
}

TEST(LossAtt, HandValuesAndBounds) {
  ad::Tape t;
  EXPECT_EQ(loss_att(t.constant(Matrix::Constant(16, 1, 0.3))).scalar(), 0.0);
  Matrix lam(4, 1);
  lam << 0.9, 0.1, 0.5, 0.5;
  EXPECT_NEAR(loss_att(t.constant(lam)).scalar(), -0.8, 1e-15);
  Matrix sep(16, 1);
  sep.topRows(8).setConstant(1 - 1e-9);
  sep.bottomRows(8).setConstant(1e-9);
  EXPECT_NEAR(loss_att(t.constant(sep)).scalar(), -1.0, 1e-8);
}

TEST(AttentionLogProbs, RowsAreDistributionsWithAttentionBackground) {
  std::mt19937_64 rng(4);
  ad::Tape t;
  const Matrix a = uniform(7, 1, rng);
  const Matrix p = attention_log_probs(t.constant(uniform(7, 4, rng)), t.constant(a))
                       .value()
                       .array()
                       .exp();
  EXPECT_LT((p.rowwise().sum().array() - 1).abs().maxCoeff(), 1e-12);
  for (Index i = 0; i < 7; ++i) EXPECT_NEAR(p(i, 3), 1 / (1 + std::exp(a(i, 0))), 1e-12);
}

TEST(PseudoLabels, IdenticalBranchesGiveThatDistribution) {
  std::mt19937_64 rng(5);
  ad::Tape t;
  const ad::Var tcam = t.constant(uniform(6, 3, rng));
  const Matrix p = ad::softmax(tcam, 1).value();
  EXPECT_LT((pseudo_tcams(tcam, tcam) - p).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((pseudo_tcams(tcam, {}) - p).cwiseAbs().maxCoeff(), 1e-15);
  const ad::Var lp = attention_log_probs(tcam, t.constant(uniform(6, 1, rng)));
  const Matrix q = lp.value().array().exp();
  EXPECT_LT((pseudo_from_log_probs(lp, lp) - q).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(pseudo_tcams({}, {}), ContractError);
  EXPECT_THROW(pseudo_tcams(tcam, t.constant(Matrix::Zero(5, 3))), DimensionError);
}

TEST(PseudoLabels, RowsSumToOne) {
  std::mt19937_64 rng(6);
  ad::Tape t;
  const Matrix p = pseudo_tcams(t.constant(uniform(8, 4, rng)), t.constant(uniform(8, 4, rng)));
  EXPECT_LT((p.rowwise().sum().array() - 1).abs().maxCoeff(), 1e-12);
}

TEST(TotalLoss, WeightedSumAndDecomposition) {
  EXPECT_EQ(total_loss(LossParts{1.25, 0.0, 3.0}, 0.0), 1.25);
  EXPECT_EQ(total_loss(LossParts{}, 0.1), 0.0);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 100; ++i) {
    const LossParts p{u(rng), u(rng), u(rng)};
    ad::Tape t;
    const double v =
        total_loss(t.scalar(p.cls), t.scalar(p.kd), t.scalar(p.att), 0.1).scalar();
    EXPECT_NEAR(v, p.cls + p.kd + 0.1 * p.att, 1e-12);
  }
}

TEST(TotalLoss, NonFinitePartIsNamed) {
  try {
    total_loss(LossParts{1.0, NAN, 0.0}, 0.1);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("distillation"), std::string::npos);
  }
}

TEST(PseudoTarget, NamesRoundTrip) {
  EXPECT_EQ(parse_pseudo_target("tcam"), PseudoTarget::kTcam);
  EXPECT_EQ(to_string(parse_pseudo_target("attention")), "attention");
  EXPECT_THROW(parse_pseudo_target("soft"), ConfigError);
}

class CompositeGradient : public ::testing::TestWithParam<PseudoTarget> {};

TEST_P(CompositeGradient, FullObjectiveMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    EXPECT_LT(testing::composite_gradient_error(seed, GetParam()), 1e-3) << "seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(BothTargets, CompositeGradient,
                         ::testing::Values(PseudoTarget::kTcam, PseudoTarget::kAttention),
                         [](const ::testing::TestParamInfo<PseudoTarget>& info) {
                           return std::string(to_string(info.param));
                         });

TEST(Distillation, NoGradientReachesParametersThroughPseudoLabels) {
  // The refinement units feed the base branch only through the pseudo
  // labels, so the distillation term alone must leave them untouched.
  for (PseudoTarget target : {PseudoTarget::kTcam, PseudoTarget::kAttention}) {
    RunConfig cfg;
    cfg.modules = ModuleSet::kBaseBrm;
    cfg.pseudo_target = target;
    const Checkpoint model = initialize_model(ModelDims{8, 2, 4}, cfg, {"a", "b"});
    std::mt19937_64 rng(8);
    ad::Tape t;
    BoundParameters p(t, model.params);
    const ForwardResult r =
        forward_video(p, cfg, uniform(10, 8, rng, -1, 1), {1, 0}, nullptr, {});
    t.backward(r.loss_kd);
    const ParameterSet g = p.gradients();
    for (const auto& [name, grad] : g) {
      if (name.rfind("brm.", 0) == 0) {
        EXPECT_EQ(grad, Matrix::Zero(grad.rows(), grad.cols())) << name;
      }
    }
    EXPECT_GT(g.at("mil.w").norm(), 0.0);
  }
}

}  // namespace
}  // namespace wstal
