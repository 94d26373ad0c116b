#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "wstal/boundary_refine.hpp"
#include "wstal/dataset.hpp"
#include "wstal/localization.hpp"
#include "wstal/losses.hpp"
#include "wstal/memory_bank.hpp"
#include "wstal/saliency.hpp"

namespace wstal {

// Which modules take part in training.
enum class ModuleSet { kBase, kBaseBrm, kBaseBrmDem };

ModuleSet parse_module_set(std::string_view name);
std::string_view to_string(ModuleSet modules);

// Which heads produce the test-time activation: the base branch alone, or
// the mean over base, refined and memory-enhanced branches (memory classes
// taken from the predicted video classes).
enum class InferenceBranch { kBase, kFused };

InferenceBranch parse_inference_branch(std::string_view name);
std::string_view to_string(InferenceBranch branch);

// How salient snippets are chosen: by neighbour difference (with a metric),
// by seeded random draw, or by the classification head's max class score.
struct SaliencyStrategy {
  enum class Kind { kDifference, kRandom, kClassification };
  Kind kind = Kind::kDifference;
  DiffMetric metric = DiffMetric::kL1;

  static SaliencyStrategy parse(std::string_view name);
  std::string name() const;
};

// Every hyper-parameter of a run. Defaults follow the THUMOS14 setting:
// r = 4, theta = 0.2, lambda = 0.1, 180 epochs at lr 5e-5 with batch 10,
// sigma = 0.88, K = floor(0.5 T).
struct RunConfig {
  std::uint64_t seed = 0;

  // optimisation
  int epochs = 180;
  double warmup_fraction = 0.1;
  double lr = 5e-5;
  int batch_size = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  // model
  ModuleSet modules = ModuleSet::kBaseBrmDem;
  int reduction = 4;
  int pool_divisor = 8;
  bool shared_head = true;

  // saliency
  SaliencyStrategy saliency;
  PairMark pair_mark = PairMark::kLater;
  double salient_ratio = 0.5;

  // boundary refinement
  double sigma = 0.88;
  FusionMode fusion_mode = FusionMode::kWeightedSum;
  bool scaled_attention = false;

  // discrimination enhancement
  MemoryMode memory_mode = MemoryMode::kOurs;
  int memory_slots = 8;
  double eta0 = 0.1;
  double memory_class_threshold = 0.1;

  // losses
  double lambda_att = 0.1;
  double theta_mil = 0.2;
  PseudoTarget pseudo_target = PseudoTarget::kAttention;

  // localisation / evaluation
  InferenceBranch inference_branch = InferenceBranch::kBase;
  double class_score_threshold = 0.1;
  std::vector<double> proposal_thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double outer_ratio = 0.25;
  double nms_iou = 0.5;
  std::string eval_protocol = "thumos";  // thumos | activitynet
  bool include_empty_classes = false;

  ProposalConfig proposal_config() const;
  std::vector<double> eval_thresholds() const;
  std::vector<ThresholdRange> eval_ranges() const;
};

// Throws ConfigError on any out-of-range value.
void validate(const RunConfig& config);

// "key = value" lines, one per field, in a fixed order.
std::string serialize(const RunConfig& config);
// Unknown keys and malformed values raise ConfigError; missing keys keep
// their defaults.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

// Applies one "key=value" override.
void set_option(RunConfig& config, const std::string& key, const std::string& value);

// FNV-1a over the serialised config.
std::uint64_t config_hash(const RunConfig& config);
std::string hex_hash(std::uint64_t hash);

std::string serialize(const SyntheticSpec& spec);
SyntheticSpec parse_synthetic_spec(std::string_view text);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

// Parses "key = value" lines (blank lines and '#' comments ignored) keeping
// the line number of each entry.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace wstal
