#include <gtest/gtest.h>

#include <random>

#include "support/gradcheck.hpp"
#include "wstal/dataset.hpp"
#include "wstal/saliency.hpp"

namespace wstal {
namespace {

using testing::uniform;

std::vector<double> as_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

TEST(DiffValues, HandComputedMetrics) {
  Matrix f(2, 2);
  f << 1, 2, 3, 1;
  EXPECT_DOUBLE_EQ(diff_values(f, DiffMetric::kL1)(0), 3.0);
  Matrix g(2, 2);
  g << 1, 0, 0, 1;
  EXPECT_DOUBLE_EQ(diff_values(g, DiffMetric::kL2)(0), std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(diff_values(g, DiffMetric::kCosine)(0), 1.0);
}

TEST(DiffValues, IdenticalSnippetsGiveZero) {
  const Matrix f = Matrix::Constant(4, 3, 0.7);
  for (DiffMetric m : {DiffMetric::kL1, DiffMetric::kL2, DiffMetric::kCosine}) {
    EXPECT_NEAR(diff_values(f, m).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  }
}

TEST(DiffValues, ZeroNormCosineIsOne) {
  Matrix f = Matrix::Zero(2, 3);
  f(1, 0) = 1;
  EXPECT_EQ(diff_values(f, DiffMetric::kCosine)(0), 1.0);
}

TEST(DiffValues, LengthAndSign) {
  std::mt19937_64 rng(1);
  const Matrix f = uniform(9, 4, rng);
  for (DiffMetric m : {DiffMetric::kL1, DiffMetric::kL2}) {
    const Eigen::VectorXd tau = diff_values(f, m);
    EXPECT_EQ(tau.size(), 8);
    EXPECT_GE(tau.minCoeff(), 0.0);
  }
  EXPECT_THROW(diff_values(Matrix::Zero(1, 3), DiffMetric::kL1), ArgumentError);
}

TEST(AssignLabels, HandSortExample) {
  const std::vector<double> tau{5, 1, 3};
  const SaliencyPartition p = assign_labels(tau, 0.5);  // T = 4, K = 2
  EXPECT_EQ(p.labels, (std::vector<std::uint8_t>{0, 1, 0, 1}));
  EXPECT_EQ(p.requested, 2);
  EXPECT_EQ(p.realized, 2);
}

TEST(AssignLabels, RatioOneRealizesAllPairs) {
  const std::vector<double> tau{2, 9, 4};
  const SaliencyPartition p = assign_labels(tau, 1.0);
  EXPECT_EQ(p.requested, 4);
  EXPECT_EQ(p.realized, 3);
  EXPECT_EQ(p.labels, (std::vector<std::uint8_t>{0, 1, 1, 1}));
}

TEST(AssignLabels, TiesFavourEarlierPairs) {
  const std::vector<double> tau(6, 1.0);
  const SaliencyPartition p = assign_labels(tau, 3.0 / 7.0);
  EXPECT_EQ(p.labels, (std::vector<std::uint8_t>{0, 1, 1, 1, 0, 0, 0}));
  EXPECT_EQ(top_pairs(tau, 2), (std::vector<Index>{0, 1}));
}

TEST(AssignLabels, PairMarkVariants) {
  const std::vector<double> tau{5, 1, 3};
  EXPECT_EQ(assign_labels(tau, 0.5, PairMark::kEarlier).labels,
            (std::vector<std::uint8_t>{1, 0, 1, 0}));
  const SaliencyPartition both = assign_labels(tau, 0.5, PairMark::kBoth);
  EXPECT_EQ(both.realized, 2);
  EXPECT_EQ(both.labels, (std::vector<std::uint8_t>{1, 1, 0, 0}));
}

TEST(AssignLabels, BadRatioRejected) {
  const std::vector<double> tau{1, 2};
  EXPECT_THROW(assign_labels(tau, 0.0), ArgumentError);
  EXPECT_THROW(assign_labels(tau, 1.5), ArgumentError);
}

TEST(SalientCount, FloorWithMinimumOne) {
  EXPECT_EQ(salient_count(40, 0.5), 20);
  EXPECT_EQ(salient_count(7, 0.5), 3);
  EXPECT_EQ(salient_count(2, 0.1), 1);
}

TEST(Partition, CompletenessOverRandomCases) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<Index> len(2, 60);
  std::uniform_real_distribution<double> ratio(0.01, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const Index T = len(rng);
    const double r = ratio(rng);
    const Matrix f = uniform(T, 3, rng);
    const SaliencyPartition p = assign_labels(as_vector(diff_values(f, DiffMetric::kL1)), r);
    Index sum = 0;
    for (std::uint8_t b : p.labels) {
      ASSERT_LE(b, 1);
      sum += b;
    }
    ASSERT_EQ(sum, p.realized);
    ASSERT_EQ(static_cast<Index>(p.salient().size() + p.non_salient().size()), T);
    ASSERT_EQ(p.realized, std::min(p.requested, T - 1));
  }
}

TEST(Partition, ScalingFeaturesKeepsPartition) {
  std::mt19937_64 rng(3);
  const Matrix f = uniform(20, 5, rng);
  for (DiffMetric m : {DiffMetric::kL1, DiffMetric::kL2, DiffMetric::kCosine}) {
    const Eigen::VectorXd tau = diff_values(f, m);
    const Eigen::VectorXd scaled = diff_values(Matrix(3.5 * f), m);
    if (m == DiffMetric::kCosine) {
      EXPECT_TRUE(scaled.isApprox(tau, 1e-12));
    } else {
      EXPECT_TRUE(scaled.isApprox(3.5 * tau, 1e-12));
    }
    EXPECT_EQ(assign_labels(as_vector(tau), 0.4).labels,
              assign_labels(as_vector(scaled), 0.4).labels);
  }
}

TEST(Partition, FlippedSwapsSides) {
  const SaliencyPartition p = assign_labels(std::vector<double>{5, 1, 3}, 0.5);
  const SaliencyPartition q = p.flipped();
  EXPECT_EQ(q.salient(), p.non_salient());
  EXPECT_EQ(q.non_salient(), p.salient());
}

TEST(Partition, ScoreAndRandomStrategiesHaveKSnippets) {
  const std::vector<double> scores{0.1, 0.9, 0.4, 0.9, 0.2};
  const SaliencyPartition s = partition_by_score(scores, 0.4);
  EXPECT_EQ(s.labels, (std::vector<std::uint8_t>{0, 1, 0, 1, 0}));
  std::mt19937_64 a(9), b(9);
  const SaliencyPartition r1 = random_partition(30, 0.5, a);
  const SaliencyPartition r2 = random_partition(30, 0.5, b);
  EXPECT_EQ(r1.realized, 15);
  EXPECT_EQ(r1.labels, r2.labels);
}

TEST(Partition, ZeroNoiseRecoversPlantedTransitions) {
  SyntheticSpec spec;
  spec.noise_sigma = 0.0;
  spec.train_videos_per_class = 5;
  spec.test_videos_per_class = 0;
  for (const VideoRecord& v : generate_synthetic(spec).videos) {
    const std::vector<Index> planted = planted_transitions(v);
    const Eigen::VectorXd tau = diff_values(v.features.cast<double>(), DiffMetric::kL1);
    std::vector<Index> chosen = top_pairs(as_vector(tau), static_cast<Index>(planted.size()));
    for (Index& i : chosen) ++i;
    std::sort(chosen.begin(), chosen.end());
    EXPECT_EQ(chosen, planted) << v.id;
  }
}

}  // namespace
}  // namespace wstal
