#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wstal/tensor.hpp"

namespace wstal {

// T x D snippet features as stored on disk (32-bit floats).
using FeatureMatrix = MatrixX<float>;

struct GtSegment {
  int class_index = 0;
  double start = 0.0;  // seconds
  double end = 0.0;    // seconds, > start
};

struct VideoRecord {
  std::string id;
  std::string split;  // "train" or "test"
  FeatureMatrix features;
  std::vector<std::uint8_t> label;  // multi-hot over C classes
  double seconds_per_snippet = 1.0;
  std::vector<GtSegment> gt_segments;

  Index num_snippets() const { return features.rows(); }
  std::vector<int> label_classes() const;
};

struct Dataset {
  std::vector<std::string> class_names;  // index order is the class index
  Index feature_dim = 0;
  std::vector<VideoRecord> videos;

  Index num_classes() const { return static_cast<Index>(class_names.size()); }
  int class_index(const std::string& name) const;  // -1 when unknown
  Dataset subset(const std::string& split) const;
  const VideoRecord* find(const std::string& id) const;
};

// Throws ArgumentError if a record breaks the VideoRecord invariants
// (T >= 2, finite features, label width, gt ordering, training label).
void validate(const Dataset& dataset);

// ---- binary features ------------------------------------------------------
//
// 16-byte header: "ISSF", u16 version (1), u32 T, u32 D, u16 reserved (0);
// then T*D little-endian float32, snippet-major.

inline constexpr std::uint16_t kFeatureFormatVersion = 1;

void write_features(const std::filesystem::path& path,
                    const FeatureMatrix& features);
FeatureMatrix read_features(const std::filesystem::path& path);

// ---- manifest + ground truth ---------------------------------------------

// Writes one feature file per video, the ground-truth file, and the
// manifest. Returns the manifest path.
std::filesystem::path write_dataset(const Dataset& dataset,
                                    const std::filesystem::path& dir);

// Throws LoadError naming the offending file.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// "video_id class_name start_sec end_sec" per line.
void write_ground_truth(const std::filesystem::path& path,
                        const Dataset& dataset);

// ---- synthetic data -------------------------------------------------------

struct SyntheticSpec {
  int num_classes = 3;
  Index feature_dim = 32;
  int train_videos_per_class = 20;
  int test_videos_per_class = 10;
  Index min_snippets = 36;
  Index max_snippets = 44;
  int min_segments = 1;  // action segments per video
  int max_segments = 3;
  Index min_action_length = 3;
  Index min_background_length = 2;
  double boundary_contrast = 1.0;
  double noise_sigma = 0.125;
  // Share of an action prototype that is class-specific; the rest points
  // along a direction common to all actions.
  double class_share = 1.0;
  // Per-instance random perturbation of segment prototypes, in units of
  // boundary_contrast.
  double instance_jitter = 0.0;
  // Distinct background prototypes; each background segment draws one.
  int background_types = 1;
  // Upper bound on distinct action classes in one video. Extra classes are
  // drawn uniformly; the video label is the union of planted classes.
  int max_classes_per_video = 1;
  // Probability that a background segment shows the class-specific context
  // of the video's first class instead of a generic background.
  double context_background = 0.0;
  double seconds_per_snippet = 16.0 / 25.0;
  std::uint64_t seed = 0;
};

// Throws ArgumentError when the spec cannot be realised.
void validate(const SyntheticSpec& spec);

// Alternating background/action segments per video. Videos are ordered
// train then test, class-major. Ground truth is recorded in seconds.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Snippet index t (1..T-1) such that snippets t-1 and t lie in different
// planted segments.
std::vector<Index> planted_transitions(const VideoRecord& video);

}  // namespace wstal
