#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wstal/tensor.hpp"

namespace wstal {

enum class MemoryMode {
  kOurs,         // top-N confident salient snippets, scheduled momentum
  kDirect,       // top-N confident salient snippets replace the slots
  kMomentumAll,  // scheduled momentum over candidates taken regardless of score
};

MemoryMode parse_memory_mode(std::string_view name);
std::string_view to_string(MemoryMode mode);

// Per-class store of N action snippet features (C x N x D) with the
// classification score of each slot. Slots of a class are kept in
// descending score order.
class MemoryBank {
 public:
  enum class SlotState : std::uint8_t { kEmpty = 0, kPartial = 1, kFull = 2 };

  MemoryBank() = default;
  MemoryBank(Index num_classes, Index slots, Index feature_dim);

  Index num_classes() const { return static_cast<Index>(slots_.size()); }
  Index slots_per_class() const { return slots_per_class_; }
  Index feature_dim() const { return feature_dim_; }

  const Matrix& slots(int c) const { return slots_.at(c); }
  Matrix& slots(int c) { return slots_.at(c); }
  const Eigen::RowVectorXd& scores(int c) const { return scores_.at(c); }
  Eigen::RowVectorXd& scores(int c) { return scores_.at(c); }
  SlotState state(int c) const { return state_.at(c); }
  void set_state(int c, SlotState s) { state_.at(c) = s; }
  bool initialized(int c) const { return state_.at(c) != SlotState::kEmpty; }

  friend bool operator==(const MemoryBank&, const MemoryBank&) = default;

 private:
  Index slots_per_class_ = 0;
  Index feature_dim_ = 0;
  std::vector<Matrix> slots_;
  std::vector<Eigen::RowVectorXd> scores_;
  std::vector<SlotState> state_;
};

// A snippet that may enter the memory of `class_index`.
struct MemoryCandidate {
  int class_index = 0;
  double score = 0.0;
  std::string video_id;
  Index snippet = 0;
  Eigen::RowVectorXd feature;
};

// Orders candidates by descending score, ties by (video id, snippet index).
void sort_candidates(std::vector<MemoryCandidate>& candidates);

// Fills each class with its N best candidates. A class with fewer than N
// repeats its best candidate and is marked partial; a class with none keeps
// zero slots and stays empty.
MemoryBank init_memory(Index num_classes, Index slots, Index feature_dim,
                       std::vector<MemoryCandidate> candidates);

// eta = eta0 * ln(exp(epoch / total_epochs) + 1).
double momentum_eta(double eta0, double epoch, double total_epochs);

// Slot i of class c moves toward row i of `features` (rank-to-rank):
// M <- (1 - eta) M + eta F, with scores max(old, new). Rows beyond the
// slot count are ignored and slots beyond the row count are untouched. An
// empty class takes the rows directly. `features` rows must be in
// descending score order.
void update_memory(MemoryBank& bank, int c, const Matrix& features,
                   std::span<const double> scores, double eta);

// softmax_rows(F * K^T) * K with K the stacked slots of the initialised
// classes in `classes`. Returns `features` unchanged when none is
// initialised.
ad::Var memory_interact(ad::Var features, const MemoryBank& bank,
                        std::span<const int> classes, bool scaled = false);

// Binary: "WSMB", u16 version, u16 reserved, u32 C, u32 N, u32 D, C state
// bytes, C*N f64 scores, C*N*D f64 slots.
void write_memory(std::string& out, const MemoryBank& bank);
MemoryBank read_memory(std::string_view in, std::size_t& offset);
void save_memory(const std::filesystem::path& path, const MemoryBank& bank);
MemoryBank load_memory(const std::filesystem::path& path);

}  // namespace wstal
