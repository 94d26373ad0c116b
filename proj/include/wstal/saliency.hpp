#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "wstal/errors.hpp"
#include "wstal/tensor.hpp"

namespace wstal {

enum class DiffMetric { kL1, kL2, kCosine };

DiffMetric parse_diff_metric(std::string_view name);
std::string_view to_string(DiffMetric metric);

// Which snippet(s) a selected pair (t-1, t) marks as salient.
enum class PairMark { kLater, kEarlier, kBoth };

PairMark parse_pair_mark(std::string_view name);
std::string_view to_string(PairMark mark);

// Difference between temporally adjacent snippets: entry i compares rows i
// and i+1 of `features`. The L1 form sums absolute per-dimension
// differences; cosine is 1 - cos and is taken as 1 when either row has zero
// norm.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> diff_values(
    const Eigen::MatrixBase<Derived>& features, DiffMetric metric) {
  using Scalar = typename Derived::Scalar;
  const Index T = features.rows();
  if (T < 2) throw ArgumentError("diff_values needs at least 2 snippets");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> tau(T - 1);
  for (Index i = 0; i + 1 < T; ++i) {
    const auto prev = features.row(i);
    const auto next = features.row(i + 1);
    switch (metric) {
      case DiffMetric::kL1:
        tau(i) = (next - prev).cwiseAbs().sum();
        break;
      case DiffMetric::kL2:
        tau(i) = (next - prev).norm();
        break;
      case DiffMetric::kCosine: {
        const Scalar denom = prev.norm() * next.norm();
        tau(i) = denom > Scalar(0) ? Scalar(1) - prev.dot(next) / denom : Scalar(1);
        break;
      }
    }
  }
  return tau;
}

struct SaliencyPartition {
  std::vector<std::uint8_t> labels;  // b_t per snippet
  Index requested = 0;               // K asked for
  Index realized = 0;                // sum of labels

  Index size() const { return static_cast<Index>(labels.size()); }
  std::vector<Index> salient() const;
  std::vector<Index> non_salient() const;
  SaliencyPartition flipped() const;
};

// K = max(1, floor(ratio * T)).
Index salient_count(Index num_snippets, double salient_ratio);

// Indices of the K largest differences, descending; ties go to the earlier
// pair.
std::vector<Index> top_pairs(std::span<const double> tau, Index k);

// Labels snippets from pairwise differences. Pairs are taken in descending
// order until K snippets are marked or pairs run out; the realised count is
// recorded when fewer than K could be marked.
SaliencyPartition assign_labels(std::span<const double> tau,
                                double salient_ratio,
                                PairMark mark = PairMark::kLater);

// K snippets with the highest per-snippet score (ties: earlier snippet).
SaliencyPartition partition_by_score(std::span<const double> scores,
                                     double salient_ratio);

// K snippets drawn uniformly without replacement.
SaliencyPartition random_partition(Index num_snippets, double salient_ratio,
                                   std::mt19937_64& rng);

}  // namespace wstal
