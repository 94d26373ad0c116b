#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "support/gradcheck.hpp"
#include "wstal/errors.hpp"
#include "wstal/memory_bank.hpp"

namespace wstal {
namespace {

using testing::uniform;

MemoryCandidate candidate(int c, double score, std::string video, Index snippet,
                          Eigen::RowVectorXd feature) {
  return MemoryCandidate{c, score, std::move(video), snippet, std::move(feature)};
}

Eigen::RowVectorXd constant_row(Index d, double v) { return Eigen::RowVectorXd::Constant(d, v); }

TEST(InitMemory, KeepsTopNByScore) {
  std::vector<MemoryCandidate> cands{candidate(0, 0.7, "v1", 0, constant_row(3, 7)),
                                     candidate(0, 0.4, "v1", 1, constant_row(3, 4)),
                                     candidate(0, 0.9, "v2", 5, constant_row(3, 9))};
  const MemoryBank bank = init_memory(1, 2, 3, cands);
  EXPECT_EQ(bank.slots(0).row(0), constant_row(3, 9));
  EXPECT_EQ(bank.slots(0).row(1), constant_row(3, 7));
  EXPECT_EQ(bank.scores(0)(0), 0.9);
  EXPECT_EQ(bank.state(0), MemoryBank::SlotState::kFull);
}

TEST(InitMemory, ExactFitFillsInScoreOrder) {
  std::vector<MemoryCandidate> cands;
  for (int i = 0; i < 4; ++i) cands.push_back(candidate(1, 0.1 * i, "v", i, constant_row(2, i)));
  const MemoryBank bank = init_memory(2, 4, 2, cands);
  for (Index i = 0; i < 4; ++i) EXPECT_EQ(bank.slots(1)(i, 0), 3 - i);
  EXPECT_FALSE(bank.initialized(0));
  EXPECT_EQ(bank.slots(0), Matrix::Zero(4, 2));
}

TEST(InitMemory, EqualScoresBreakTiesByVideoThenSnippet) {
  std::vector<MemoryCandidate> cands{candidate(0, 0.5, "b", 0, constant_row(1, 3)),
                                     candidate(0, 0.5, "a", 7, constant_row(1, 2)),
                                     candidate(0, 0.5, "a", 2, constant_row(1, 1))};
  const MemoryBank bank = init_memory(1, 3, 1, cands);
  EXPECT_EQ(bank.slots(0)(0, 0), 1);
  EXPECT_EQ(bank.slots(0)(1, 0), 2);
  EXPECT_EQ(bank.slots(0)(2, 0), 3);
}

TEST(InitMemory, ShortClassIsPartial) {
  const MemoryBank bank = init_memory(1, 3, 2, {candidate(0, 0.8, "v", 0, constant_row(2, 5))});
  EXPECT_EQ(bank.state(0), MemoryBank::SlotState::kPartial);
  EXPECT_EQ(bank.slots(0), Matrix::Constant(3, 2, 5));
}

TEST(MomentumEta, ClosedFormEndpointsAndMonotone) {
  const double eta0 = 0.1;
  EXPECT_NEAR(momentum_eta(eta0, 0, 180), eta0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(momentum_eta(eta0, 180, 180), eta0 * std::log(std::exp(1.0) + 1), 1e-12);
  EXPECT_NEAR(momentum_eta(eta0, 180, 180) / eta0, 1.3133, 1e-4);
  double prev = 0;
  for (int e = 0; e <= 180; ++e) {
    const double eta = momentum_eta(eta0, e, 180);
    EXPECT_GT(eta, prev);
    prev = eta;
  }
  EXPECT_THROW(momentum_eta(eta0, 0, 0), ArgumentError);
}

TEST(UpdateMemory, ConstantInputFollowsGeometricClosedForm) {
  std::mt19937_64 rng(1);
  const Index N = 4, D = 5;
  const Matrix x = uniform(N, D, rng);
  const std::vector<double> scores{0.9, 0.8, 0.7, 0.6};
  for (int u : {1, 5, 20}) {
    for (double eta : {0.05, 0.3, 0.9}) {
      MemoryBank bank(1, N, D);
      const Matrix m0 = uniform(N, D, rng);
      bank.slots(0) = m0;
      bank.scores(0) << 1.0, 0.95, 0.9, 0.85;
      bank.set_state(0, MemoryBank::SlotState::kFull);
      for (int i = 0; i < u; ++i) update_memory(bank, 0, x, scores, eta);
      const Matrix expected = x + std::pow(1 - eta, u) * (m0 - x);
      EXPECT_LT((bank.slots(0) - expected).cwiseAbs().maxCoeff(), 1e-9) << u << " " << eta;
    }
  }
}

TEST(UpdateMemory, ZeroAndFullMomentum) {
  std::mt19937_64 rng(2);
  MemoryBank bank(1, 2, 3);
  const Matrix m0 = uniform(2, 3, rng);
  bank.slots(0) = m0;
  bank.scores(0) << 0.9, 0.8;
  bank.set_state(0, MemoryBank::SlotState::kFull);
  const Matrix x = uniform(2, 3, rng);
  const std::vector<double> s{0.1, 0.05};
  update_memory(bank, 0, x, s, 0.0);
  EXPECT_EQ(bank.slots(0), m0);
  update_memory(bank, 0, x, s, 1.0);
  EXPECT_EQ(bank.slots(0), x);
}

TEST(UpdateMemory, EmptyClassTakesRowsDirectly) {
  MemoryBank bank(2, 2, 2);
  Matrix x(1, 2);
  x << 3, 4;
  update_memory(bank, 1, x, std::vector<double>{0.6}, 0.1);
  EXPECT_EQ(bank.slots(1), Matrix(x.replicate(2, 1)));
  EXPECT_EQ(bank.state(1), MemoryBank::SlotState::kPartial);
}

TEST(UpdateMemory, FewerRowsOnlyTouchMatchedSlotsAndKeepOrder) {
  MemoryBank bank(1, 3, 1);
  bank.slots(0) << 1, 2, 3;
  bank.scores(0) << 0.5, 0.4, 0.3;
  bank.set_state(0, MemoryBank::SlotState::kFull);
  Matrix x(1, 1);
  x << 10;
  update_memory(bank, 0, x, std::vector<double>{0.2}, 0.5);
  EXPECT_EQ(bank.slots(0)(0, 0), 5.5);
  EXPECT_EQ(bank.slots(0)(1, 0), 2);
  EXPECT_EQ(bank.slots(0)(2, 0), 3);
  const auto& sc = bank.scores(0);
  EXPECT_TRUE(std::is_sorted(sc.data(), sc.data() + sc.size(), std::greater<>()));
}

TEST(UpdateMemory, WidthChecked) {
  MemoryBank bank(1, 2, 3);
  EXPECT_THROW(update_memory(bank, 0, Matrix::Zero(2, 4), std::vector<double>{1, 1}, 0.5),
               DimensionError);
}

TEST(MemoryInteract, SingleSlotIsCopiedToEveryRow) {
  std::mt19937_64 rng(3);
  MemoryBank bank(2, 1, 4);
  bank.slots(1) = uniform(1, 4, rng);
  bank.set_state(1, MemoryBank::SlotState::kFull);
  ad::Tape t;
  const std::vector<int> classes{1};
  const Matrix y = memory_interact(t.constant(uniform(6, 4, rng)), bank, classes).value();
  for (Index i = 0; i < 6; ++i) EXPECT_LT((y.row(i) - bank.slots(1)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MemoryInteract, AlignedRowSharpensOntoSlot) {
  MemoryBank bank(1, 3, 3);
  bank.slots(0) = Matrix::Identity(3, 3);
  bank.set_state(0, MemoryBank::SlotState::kFull);
  ad::Tape t;
  const std::vector<int> classes{0};
  const Matrix y = memory_interact(t.constant(100.0 * Matrix::Identity(3, 3).row(1)), bank,
                                   classes)
                       .value();
  EXPECT_LT((y - Matrix::Identity(3, 3).row(1)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MemoryInteract, OutputInsideConvexHullOfSlots) {
  // Identity slots turn every output row into its affinity row, which must
  // be a probability vector.
  std::mt19937_64 rng(4);
  MemoryBank bank(2, 3, 6);
  bank.slots(0) = Matrix::Identity(6, 6).topRows(3);
  bank.slots(1) = Matrix::Identity(6, 6).bottomRows(3);
  bank.set_state(0, MemoryBank::SlotState::kFull);
  bank.set_state(1, MemoryBank::SlotState::kFull);
  ad::Tape t;
  const std::vector<int> classes{0, 1};
  const Matrix y = memory_interact(t.constant(uniform(8, 6, rng, -5, 5)), bank, classes).value();
  EXPECT_GE(y.minCoeff(), 0.0);
  EXPECT_LT((y.rowwise().sum().array() - 1).abs().maxCoeff(), 1e-12);
}

TEST(MemoryInteract, NoInitializedClassIsIdentity) {
  std::mt19937_64 rng(5);
  MemoryBank bank(2, 2, 3);
  ad::Tape t;
  const Matrix f = uniform(4, 3, rng);
  const std::vector<int> classes{0, 1};
  EXPECT_EQ(memory_interact(t.constant(f), bank, classes).value(), f);
}

TEST(MemoryPersistence, RoundTripIsExact) {
  std::mt19937_64 rng(6);
  MemoryBank bank(3, 2, 4);
  bank.slots(0) = uniform(2, 4, rng);
  bank.scores(0) << 0.75, 0.5;
  bank.set_state(0, MemoryBank::SlotState::kFull);
  bank.slots(2) = uniform(2, 4, rng);
  bank.set_state(2, MemoryBank::SlotState::kPartial);
  const auto path = std::filesystem::temp_directory_path() / "wstal_test_memory.bin";
  save_memory(path, bank);
  EXPECT_EQ(load_memory(path), bank);

  std::ofstream(path, std::ios::binary | std::ios::trunc) << "WSMB";
  EXPECT_THROW(load_memory(path), LoadError);
}

TEST(MemoryMode, NamesRoundTrip) {
  for (const char* name : {"ours", "direct", "momentum_all"}) {
    EXPECT_EQ(to_string(parse_memory_mode(name)), name);
  }
  EXPECT_THROW(parse_memory_mode("lazy"), ConfigError);
}

}  // namespace
}  // namespace wstal
