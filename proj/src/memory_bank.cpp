#include "wstal/memory_bank.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>

#include "wstal/boundary_refine.hpp"
#include "wstal/errors.hpp"

namespace wstal {

MemoryMode parse_memory_mode(std::string_view name) {
  if (name == "ours") return MemoryMode::kOurs;
  if (name == "direct") return MemoryMode::kDirect;
  if (name == "momentum_all") return MemoryMode::kMomentumAll;
  throw ConfigError("unknown memory mode '" + std::string(name) + "'");
}

std::string_view to_string(MemoryMode mode) {
  switch (mode) {
    case MemoryMode::kOurs:
      return "ours";
    case MemoryMode::kDirect:
      return "direct";
    case MemoryMode::kMomentumAll:
      return "momentum_all";
  }
  return "?";
}

MemoryBank::MemoryBank(Index num_classes, Index slots, Index feature_dim)
    : slots_per_class_(slots),
      feature_dim_(feature_dim),
      slots_(static_cast<std::size_t>(num_classes), Matrix::Zero(slots, feature_dim)),
      scores_(static_cast<std::size_t>(num_classes), Eigen::RowVectorXd::Zero(slots)),
      state_(static_cast<std::size_t>(num_classes), SlotState::kEmpty) {
  if (num_classes < 1 || slots < 1 || feature_dim < 1) {
    throw ArgumentError("memory bank extents must be positive");
  }
}

void sort_candidates(std::vector<MemoryCandidate>& candidates) {
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const MemoryCandidate& a, const MemoryCandidate& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.video_id != b.video_id) return a.video_id < b.video_id;
                     return a.snippet < b.snippet;
                   });
}

MemoryBank init_memory(Index num_classes, Index slots, Index feature_dim,
                       std::vector<MemoryCandidate> candidates) {
  MemoryBank bank(num_classes, slots, feature_dim);
  sort_candidates(candidates);
  std::vector<Index> filled(static_cast<std::size_t>(num_classes), 0);
  for (const MemoryCandidate& cand : candidates) {
    const int c = cand.class_index;
    if (c < 0 || c >= num_classes) throw ArgumentError("candidate class out of range");
    if (cand.feature.size() != feature_dim) {
      throw DimensionError("candidate feature width differs from memory");
    }
    Index& n = filled[c];
    if (n >= slots) continue;
    bank.slots(c).row(n) = cand.feature;
    bank.scores(c)(n) = cand.score;
    ++n;
  }
  for (int c = 0; c < num_classes; ++c) {
    const Index n = filled[c];
    if (n == 0) continue;
    for (Index i = n; i < slots; ++i) {
      bank.slots(c).row(i) = bank.slots(c).row(0);
      bank.scores(c)(i) = bank.scores(c)(0);
    }
    bank.set_state(c, n == slots ? MemoryBank::SlotState::kFull
                                 : MemoryBank::SlotState::kPartial);
  }
  return bank;
}

double momentum_eta(double eta0, double epoch, double total_epochs) {
  if (!(total_epochs > 0)) throw ArgumentError("total epochs must be positive");
  return eta0 * std::log(std::exp(epoch / total_epochs) + 1.0);
}

void update_memory(MemoryBank& bank, int c, const Matrix& features,
                   std::span<const double> scores, double eta) {
  if (features.cols() != bank.feature_dim()) {
    throw DimensionError("update_memory: feature width differs from memory");
  }
  if (static_cast<Index>(scores.size()) != features.rows()) {
    throw DimensionError("update_memory: one score per feature row required");
  }
  const Index n = std::min(features.rows(), bank.slots_per_class());
  if (n == 0) return;
  Matrix& slots = bank.slots(c);
  Eigen::RowVectorXd& sc = bank.scores(c);

  if (!bank.initialized(c)) {
    for (Index i = 0; i < bank.slots_per_class(); ++i) {
      const Index src = i < n ? i : 0;
      slots.row(i) = features.row(src);
      sc(i) = scores[src];
    }
    bank.set_state(c, n == bank.slots_per_class() ? MemoryBank::SlotState::kFull
                                                  : MemoryBank::SlotState::kPartial);
    return;
  }
  for (Index i = 0; i < n; ++i) {
    slots.row(i) = (1.0 - eta) * slots.row(i) + eta * features.row(i);
    sc(i) = std::max(sc(i), scores[i]);
  }
  // Partial updates can break the descending order; restore it.
  std::vector<Index> order(static_cast<std::size_t>(bank.slots_per_class()));
  for (Index i = 0; i < bank.slots_per_class(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return sc(a) > sc(b); });
  if (!std::is_sorted(order.begin(), order.end())) {
    Matrix s2(slots.rows(), slots.cols());
    Eigen::RowVectorXd c2(sc.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      s2.row(static_cast<Index>(i)) = slots.row(order[i]);
      c2(static_cast<Index>(i)) = sc(order[i]);
    }
    slots = std::move(s2);
    sc = std::move(c2);
  }
}

ad::Var memory_interact(ad::Var features, const MemoryBank& bank,
                        std::span<const int> classes, bool scaled) {
  std::vector<int> usable;
  for (int c : classes) {
    if (c >= 0 && c < bank.num_classes() && bank.initialized(c)) usable.push_back(c);
  }
  if (usable.empty()) return features;
  const Index N = bank.slots_per_class();
  Matrix keys(N * static_cast<Index>(usable.size()), bank.feature_dim());
  for (std::size_t i = 0; i < usable.size(); ++i) {
    keys.middleRows(static_cast<Index>(i) * N, N) = bank.slots(usable[i]);
  }
  return temporal_interact(features, features.tape()->constant(std::move(keys)),
                           scaled);
}

// ---- persistence ------------------------------------------------------------

namespace {

constexpr char kMemoryMagic[4] = {'W', 'S', 'M', 'B'};
constexpr std::uint16_t kMemoryVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

template <typename T>
T take(std::string_view in, std::size_t& off) {
  if (off + sizeof(T) > in.size()) throw LoadError("memory bank: truncated data");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

void write_memory(std::string& out, const MemoryBank& bank) {
  out.append(kMemoryMagic, 4);
  put<std::uint16_t>(out, kMemoryVersion);
  put<std::uint16_t>(out, 0);
  const Index C = bank.num_classes();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(C));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.slots_per_class()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.feature_dim()));
  if (C == 0) return;
  for (int c = 0; c < C; ++c) put<std::uint8_t>(out, static_cast<std::uint8_t>(bank.state(c)));
  for (int c = 0; c < C; ++c) {
    for (Index i = 0; i < bank.slots_per_class(); ++i) put<double>(out, bank.scores(c)(i));
  }
  for (int c = 0; c < C; ++c) {
    const Matrix& s = bank.slots(c);
    out.append(reinterpret_cast<const char*>(s.data()),
               static_cast<std::size_t>(s.size()) * sizeof(double));
  }
}

MemoryBank read_memory(std::string_view in, std::size_t& off) {
  if (in.size() < off + 4 || std::memcmp(in.data() + off, kMemoryMagic, 4) != 0) {
    throw LoadError("memory bank: bad magic");
  }
  off += 4;
  if (take<std::uint16_t>(in, off) != kMemoryVersion) {
    throw LoadError("memory bank: unsupported version");
  }
  take<std::uint16_t>(in, off);
  const auto C = take<std::uint32_t>(in, off);
  const auto N = take<std::uint32_t>(in, off);
  const auto D = take<std::uint32_t>(in, off);
  if (C == 0) return MemoryBank{};
  MemoryBank bank(C, N, D);
  for (std::uint32_t c = 0; c < C; ++c) {
    const auto s = take<std::uint8_t>(in, off);
    if (s > 2) throw LoadError("memory bank: bad slot state");
    bank.set_state(static_cast<int>(c), static_cast<MemoryBank::SlotState>(s));
  }
  for (std::uint32_t c = 0; c < C; ++c) {
    for (std::uint32_t i = 0; i < N; ++i) bank.scores(static_cast<int>(c))(i) = take<double>(in, off);
  }
  for (std::uint32_t c = 0; c < C; ++c) {
    Matrix& s = bank.slots(static_cast<int>(c));
    const std::size_t bytes = static_cast<std::size_t>(s.size()) * sizeof(double);
    if (off + bytes > in.size()) throw LoadError("memory bank: truncated slots");
    std::memcpy(s.data(), in.data() + off, bytes);
    off += bytes;
  }
  return bank;
}

void save_memory(const std::filesystem::path& path, const MemoryBank& bank) {
  std::string buf;
  write_memory(buf, bank);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

MemoryBank load_memory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string() + ": cannot open memory bank");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t off = 0;
  try {
    return read_memory(buf, off);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace wstal
