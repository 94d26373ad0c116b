#pragma once

// Training and inference for the full model: base branch, saliency
// partition, boundary refinement, memory-bank enhancement and pseudo-label
// distillation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "wstal/base_branch.hpp"
#include "wstal/config.hpp"
#include "wstal/dataset.hpp"
#include "wstal/localization.hpp"
#include "wstal/losses.hpp"
#include "wstal/memory_bank.hpp"
#include "wstal/optim.hpp"
#include "wstal/saliency.hpp"

namespace wstal {

struct Checkpoint {
  RunConfig config;
  std::vector<std::string> class_names;
  ModelDims dims;
  ParameterSet params;
  MemoryBank memory;  // empty when the memory module is off

  std::uint64_t config_hash() const { return wstal::config_hash(config); }
};

// Seeded parameter initialisation for `dims`; memory left empty.
Checkpoint initialize_model(const ModelDims& dims, const RunConfig& config,
                            const std::vector<std::string>& class_names);

// Binary layout: "WSCK", u16 version, u16 reserved, u64 config hash, u32 +
// config text, u32 class count + (u16 + name) each, u32 D, u32 r, u32
// parameter count + (u16 + name, u32 rows, u32 cols, f64 values) each, then
// the memory bank block.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct EpochLog {
  int epoch = 0;
  double loss_cls = 0.0;
  double loss_kd = 0.0;
  double loss_att = 0.0;
  double att_weighted = 0.0;  // lambda * loss_att
  double total = 0.0;         // loss_cls + loss_kd + att_weighted
  double eta = 0.0;
  bool joint = false;
};

// Per-video forward pass; exposed for gradient checks and probes.
struct ForwardResult {
  HeadOutput base;
  HeadOutput refined;   // invalid Vars when the refinement module is off
  HeadOutput enhanced;  // invalid Vars when the memory module is off
  ad::Var embedded;
  ad::Var loss_cls;
  ad::Var loss_kd;
  ad::Var loss_att;
  ad::Var total;
  SaliencyPartition partition;
  Matrix pseudo_labels;
};

struct ForwardOptions {
  bool joint = true;              // false during warm-up: base branch only
  std::uint64_t random_stream = 0;  // seeds the "random" saliency strategy
  // Replaces the computed pseudo labels when set; shape must match.
  const Matrix* fixed_pseudo_labels = nullptr;
};

ForwardResult forward_video(const BoundParameters& params, const RunConfig& config,
                            const Matrix& features, const std::vector<std::uint8_t>& label,
                            const MemoryBank* memory, const ForwardOptions& options);

// Saliency partition of embedded features under the configured strategy.
// `class_scores` (T x C) is consulted only by the classification strategy.
SaliencyPartition select_salient(const Matrix& embedded, const Matrix& class_scores,
                                 const RunConfig& config, std::uint64_t random_stream);

struct TrainOptions {
  int threads = 1;
  std::function<void(const EpochLog&)> on_epoch;
};

// Warm-up on the base branch for warmup_fraction of the epochs, memory
// initialisation, then joint training. Throws TrainingError on divergence,
// reporting epoch and batch.
Checkpoint train(const Dataset& train_set, const RunConfig& config,
                 const TrainOptions& options = {});

struct VideoInference {
  Matrix tcam_probs;            // T x (C+1) per-snippet class softmax
  Eigen::VectorXd attention;    // T
  std::vector<double> class_scores;  // C video-level scores
  Matrix activation;            // T x C attention-weighted class evidence
};

VideoInference infer(const Checkpoint& checkpoint, const VideoRecord& video);

std::vector<ActionProposal> localize(const Checkpoint& checkpoint, const VideoRecord& video);

struct Evaluation {
  EvalReport report;
  std::vector<ActionProposal> proposals;
};

Evaluation evaluate(const Checkpoint& checkpoint, const Dataset& test_set);

}  // namespace wstal
