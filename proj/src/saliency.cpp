#include "wstal/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace wstal {

DiffMetric parse_diff_metric(std::string_view name) {
  if (name == "l1") return DiffMetric::kL1;
  if (name == "l2") return DiffMetric::kL2;
  if (name == "cosine") return DiffMetric::kCosine;
  throw ConfigError("unknown difference metric '" + std::string(name) + "'");
}

std::string_view to_string(DiffMetric metric) {
  switch (metric) {
    case DiffMetric::kL1:
      return "l1";
    case DiffMetric::kL2:
      return "l2";
    case DiffMetric::kCosine:
      return "cosine";
  }
  return "?";
}

PairMark parse_pair_mark(std::string_view name) {
  if (name == "later") return PairMark::kLater;
  if (name == "earlier") return PairMark::kEarlier;
  if (name == "both") return PairMark::kBoth;
  throw ConfigError("unknown pair mark '" + std::string(name) + "'");
}

std::string_view to_string(PairMark mark) {
  switch (mark) {
    case PairMark::kLater:
      return "later";
    case PairMark::kEarlier:
      return "earlier";
    case PairMark::kBoth:
      return "both";
  }
  return "?";
}

std::vector<Index> SaliencyPartition::salient() const {
  std::vector<Index> out;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t]) out.push_back(static_cast<Index>(t));
  }
  return out;
}

std::vector<Index> SaliencyPartition::non_salient() const {
  std::vector<Index> out;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (!labels[t]) out.push_back(static_cast<Index>(t));
  }
  return out;
}

SaliencyPartition SaliencyPartition::flipped() const {
  SaliencyPartition out = *this;
  for (auto& b : out.labels) b = b ? 0 : 1;
  out.realized = size() - realized;
  out.requested = out.realized;
  return out;
}

Index salient_count(Index num_snippets, double salient_ratio) {
  if (!(salient_ratio > 0 && salient_ratio <= 1)) {
    throw ArgumentError("salient_ratio must lie in (0, 1]");
  }
  const auto k = static_cast<Index>(
      std::floor(salient_ratio * static_cast<double>(num_snippets)));
  return std::max<Index>(1, k);
}

std::vector<Index> top_pairs(std::span<const double> tau, Index k) {
  return ad::topk_indices(tau, k);
}

SaliencyPartition assign_labels(std::span<const double> tau,
                                double salient_ratio, PairMark mark) {
  const auto T = static_cast<Index>(tau.size()) + 1;
  SaliencyPartition p;
  p.labels.assign(static_cast<std::size_t>(T), 0);
  p.requested = salient_count(T, salient_ratio);

  const std::vector<Index> order = top_pairs(tau, static_cast<Index>(tau.size()));
  Index marked = 0;
  for (Index pair : order) {
    if (marked >= p.requested) break;
    // Pair `pair` joins snippets pair and pair+1.
    auto set = [&](Index t) {
      if (!p.labels[t]) {
        p.labels[t] = 1;
        ++marked;
      }
    };
    switch (mark) {
      case PairMark::kLater:
        set(pair + 1);
        break;
      case PairMark::kEarlier:
        set(pair);
        break;
      case PairMark::kBoth:
        set(pair);
        set(pair + 1);
        break;
    }
  }
  p.realized = marked;
  return p;
}

SaliencyPartition partition_by_score(std::span<const double> scores,
                                     double salient_ratio) {
  const auto T = static_cast<Index>(scores.size());
  SaliencyPartition p;
  p.labels.assign(scores.size(), 0);
  p.requested = salient_count(T, salient_ratio);
  for (Index t : ad::topk_indices(scores, std::min(p.requested, T))) {
    p.labels[t] = 1;
  }
  p.realized = std::min(p.requested, T);
  return p;
}

SaliencyPartition random_partition(Index num_snippets, double salient_ratio,
                                   std::mt19937_64& rng) {
  SaliencyPartition p;
  p.labels.assign(static_cast<std::size_t>(num_snippets), 0);
  p.requested = salient_count(num_snippets, salient_ratio);
  const Index k = std::min(p.requested, num_snippets);
  // Partial Fisher-Yates with explicit draws keeps the result independent of
  // the standard library's shuffle implementation.
  std::vector<Index> idx(static_cast<std::size_t>(num_snippets));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = 0; i < k; ++i) {
    const auto span = static_cast<std::uint64_t>(num_snippets - i);
    const auto j = i + static_cast<Index>(rng() % span);
    std::swap(idx[i], idx[j]);
    p.labels[idx[i]] = 1;
  }
  p.realized = k;
  return p;
}

}  // namespace wstal
