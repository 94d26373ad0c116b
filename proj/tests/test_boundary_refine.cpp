#include <gtest/gtest.h>

#include <random>

#include "support/gradcheck.hpp"
#include "wstal/boundary_refine.hpp"
#include "wstal/errors.hpp"

namespace wstal {
namespace {

using testing::uniform;

ParameterSet two_units(Index D, Index r, std::mt19937_64& rng) {
  ParameterSet p;
  init_interaction_unit(p, ModelDims{D, 2, r}, rng, "a.");
  init_interaction_unit(p, ModelDims{D, 2, r}, rng, "b.");
  // Non-zero biases as well, so the two paths differ in every term.
  for (auto& [name, m] : p) m = uniform(m.rows(), m.cols(), rng, -0.3, 0.3);
  return p;
}

SaliencyPartition partition_of(std::vector<std::uint8_t> labels) {
  SaliencyPartition p;
  p.labels = std::move(labels);
  for (std::uint8_t b : p.labels) p.realized += b;
  p.requested = p.realized;
  return p;
}

TEST(InteractionUnit, ReductionMustDivideWidth) {
  ParameterSet p;
  std::mt19937_64 rng(0);
  EXPECT_THROW(init_interaction_unit(p, ModelDims{10, 2, 4}, rng, "u."), ConfigError);
  init_interaction_unit(p, ModelDims{8, 2, 4}, rng, "u.");
  EXPECT_EQ(p.at("u.w1").cols(), 2);
  EXPECT_EQ(p.at("u.b1"), Matrix::Zero(1, 2));
}

TEST(ChannelInteract, ZeroMlpScalesByOnePlusInverseWidth) {
  std::mt19937_64 rng(1);
  for (Index D : {4, 8, 32}) {
    ad::Tape t;
    const Index h = D / 4;
    const InteractionUnit u{t.constant(Matrix::Zero(D, h)), t.constant(Matrix::Zero(1, h)),
                            t.constant(Matrix::Zero(h, D)), t.constant(Matrix::Zero(1, D))};
    const Matrix x = uniform(5, D, rng);
    const Matrix y = channel_interact(t.constant(x), u).value();
    EXPECT_LT((y - x * (1.0 + 1.0 / D)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(channel_interact(t.constant(Matrix::Zero(3, D)), u).value(), Matrix::Zero(3, D));
  }
}

TEST(TemporalInteract, SingleKeyIsCopiedToEveryRow) {
  std::mt19937_64 rng(2);
  ad::Tape t;
  const Matrix key = uniform(1, 6, rng);
  const Matrix y = temporal_interact(t.constant(uniform(7, 6, rng)), t.constant(key)).value();
  for (Index i = 0; i < 7; ++i) EXPECT_LT((y.row(i) - key).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TemporalInteract, AlignedQuerySharpensOntoItsKey) {
  ad::Tape t;
  const Matrix keys = Matrix::Identity(4, 4);
  const Matrix query = 100.0 * keys.row(2);
  const Matrix y = temporal_interact(t.constant(query), t.constant(keys)).value();
  EXPECT_LT((y - keys.row(2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TemporalInteract, AffinityRowsAreDistributions) {
  // With identity keys the output rows are the affinity rows themselves.
  std::mt19937_64 rng(3);
  for (bool scaled : {false, true}) {
    ad::Tape t;
    const Matrix a =
        temporal_interact(t.constant(uniform(9, 5, rng, -20, 20)), t.constant(Matrix::Identity(5, 5)),
                          scaled)
            .value();
    EXPECT_LT((a.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-6);
    EXPECT_GE(a.minCoeff(), 0.0);
  }
  ad::Tape t;
  EXPECT_THROW(temporal_interact(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 4))),
               DimensionError);
}

class RefineTest : public ::testing::Test {
 protected:
  Matrix refine(const SaliencyPartition& part, RefineConfig cfg, const std::string& first = "a.",
                const std::string& second = "b.") {
    ad::Tape t;
    BoundParameters p(t, params_);
    return refine_boundaries(t.constant(features_), part, InteractionUnit::bind(p, first),
                             InteractionUnit::bind(p, second), cfg)
        .value();
  }

  std::mt19937_64 rng_{4};
  ParameterSet params_ = two_units(8, 4, rng_);
  Matrix features_ = uniform(7, 8, rng_, -1, 1);
  SaliencyPartition part_ = partition_of({0, 1, 0, 1, 1, 0, 0});
};

TEST_F(RefineTest, SigmaOneAndZeroReduceExactlyToSinglePaths) {
  EXPECT_EQ(refine(part_, {1.0, FusionMode::kWeightedSum}),
            refine(part_, {0.3, FusionMode::kSalientOnly}));
  EXPECT_EQ(refine(part_, {0.0, FusionMode::kWeightedSum}),
            refine(part_, {0.3, FusionMode::kNonSalientOnly}));
}

TEST_F(RefineTest, FlippedPartitionWithSwappedUnitsAndSigmaIsIdentical) {
  EXPECT_EQ(refine(part_, {0.25, FusionMode::kWeightedSum}),
            refine(part_.flipped(), {0.75, FusionMode::kWeightedSum}, "b.", "a."));
}

TEST_F(RefineTest, AddIsTwiceTheEvenWeightedSum) {
  const Matrix add = refine(part_, {0.88, FusionMode::kAdd});
  const Matrix half = refine(part_, {0.5, FusionMode::kWeightedSum});
  EXPECT_LT((add - 2 * half).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(RefineTest, EqualPathsAtHalfWeightGiveThatPath) {
  // Same unit on both sides and a partition whose two halves carry identical
  // rows: both paths produce the same refined features.
  Matrix f(4, 8);
  f.topRows(2) = uniform(2, 8, rng_);
  f.bottomRows(2) = f.topRows(2);
  features_ = f;
  const SaliencyPartition halves = partition_of({1, 1, 0, 0});
  const Matrix a = refine(halves, {1.0, FusionMode::kWeightedSum}, "a.", "a.");
  const Matrix mixed = refine(halves, {0.5, FusionMode::kWeightedSum}, "a.", "a.");
  EXPECT_LT((mixed - a).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(RefineTest, ShapeHeldForEveryPartitionAndMode) {
  for (FusionMode mode : {FusionMode::kWeightedSum, FusionMode::kAdd, FusionMode::kSalientOnly,
                          FusionMode::kNonSalientOnly, FusionMode::kSelf,
                          FusionMode::kTemporalOnly}) {
    for (const auto& labels : {std::vector<std::uint8_t>(7, 0), std::vector<std::uint8_t>(7, 1),
                               std::vector<std::uint8_t>{1, 0, 0, 0, 0, 0, 0}}) {
      const Matrix y = refine(partition_of(labels), {0.88, mode});
      EXPECT_EQ(y.rows(), 7);
      EXPECT_EQ(y.cols(), 8);
      EXPECT_TRUE(y.allFinite());
    }
  }
}

TEST_F(RefineTest, ZeroUnitsStayFiniteOnLargeInputs) {
  for (auto& [name, m] : params_) m.setZero();
  features_ = uniform(7, 8, rng_, -1e3, 1e3);
  EXPECT_TRUE(refine(part_, {0.6, FusionMode::kWeightedSum}).allFinite());
}

TEST_F(RefineTest, ContractsChecked) {
  EXPECT_THROW(refine(partition_of({1, 0}), {0.5, FusionMode::kWeightedSum}), DimensionError);
  EXPECT_THROW(refine(part_, {1.5, FusionMode::kWeightedSum}), ConfigError);
  EXPECT_THROW(parse_fusion_mode("sideways"), ConfigError);
  for (const char* name : {"weighted_sum", "add", "a_only", "b_only", "self", "temporal_only"}) {
    EXPECT_EQ(to_string(parse_fusion_mode(name)), name);
  }
}

}  // namespace
}  // namespace wstal
