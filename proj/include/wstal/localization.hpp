#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wstal/dataset.hpp"
#include "wstal/tensor.hpp"

namespace wstal {

struct ActionProposal {
  int class_index = 0;
  double confidence = 0.0;
  double start = 0.0;  // seconds
  double end = 0.0;    // seconds
  std::string video_id;
};

struct Segment {
  double start = 0.0;
  double end = 0.0;
};

// |a ∩ b| / |a ∪ b|, 0 for disjoint or degenerate segments.
template <typename Scalar>
Scalar temporal_iou(Scalar a_start, Scalar a_end, Scalar b_start, Scalar b_end) {
  const Scalar inter = std::max(Scalar(0), std::min(a_end, b_end) - std::max(a_start, b_start));
  const Scalar uni = std::max(a_end, b_end) - std::min(a_start, b_start);
  if (!(uni > Scalar(0))) return Scalar(0);
  return inter / uni;
}

inline double temporal_iou(const Segment& a, const Segment& b) {
  return temporal_iou(a.start, a.end, b.start, b.end);
}

struct ProposalConfig {
  std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double class_score_threshold = 0.1;
  double outer_ratio = 0.25;
  double nms_iou = 0.5;
};

// `activation` is T x C (per-snippet class evidence, already weighted by the
// attention); `video_score` holds C class scores. For each class whose score
// passes the threshold, the activation is min-max normalised and every
// threshold contributes its maximal above-threshold runs. A run is scored
// by its mean inner activation minus the mean over flanks of outer_ratio
// times its length, plus the video score. Runs [i..j] map to seconds
// [i*s, (j+1)*s]. No suppression is applied here.
std::vector<ActionProposal> generate_proposals(const Matrix& activation,
                                               std::span<const double> video_score,
                                               double seconds_per_snippet,
                                               const ProposalConfig& config,
                                               const std::string& video_id = "");

// Greedy suppression within each (video, class): keeps proposals in
// descending confidence (ties: earlier start) and drops any whose IoU with
// a kept one exceeds `iou_threshold`.
std::vector<ActionProposal> nms(std::vector<ActionProposal> proposals,
                                double iou_threshold = 0.5);

struct GroundTruth {
  std::string video_id;
  int class_index = 0;
  double start = 0.0;
  double end = 0.0;
};

std::vector<GroundTruth> ground_truth_of(const Dataset& dataset);

// Named average over a closed threshold range, e.g. "AVG(0.1:0.5)".
struct ThresholdRange {
  std::string name;
  double low = 0.0;
  double high = 0.0;
};

std::vector<double> thumos_thresholds();                 // 0.1 .. 0.7
std::vector<ThresholdRange> thumos_ranges();             // (0.1:0.5) (0.3:0.7) (0.1:0.7)
std::vector<double> activitynet_thresholds();            // 0.5 .. 0.95 step 0.05
std::vector<ThresholdRange> activitynet_ranges();        // (0.5:0.95)

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<std::string> class_names;
  Matrix ap;                            // C x thresholds, NaN for classes without gt
  std::vector<double> map;              // per threshold
  std::vector<ThresholdRange> ranges;
  std::vector<double> range_map;        // per range
  std::vector<int> evaluated_classes;

  double map_at(double threshold) const;
  double average(const std::string& range_name) const;
};

// AP of one class at one threshold: proposals sorted by confidence (ties by
// video id then start); each greedily claims the unmatched gt of the same
// video with the highest IoU, counting as a true positive when that IoU
// reaches the threshold. All-point interpolated area under the P-R curve.
double average_precision(std::vector<ActionProposal> proposals,
                         std::span<const GroundTruth> gt, double iou_threshold);

// Throws ArgumentError when `gt` is empty. Classes without gt are left out
// of the mean unless `include_empty_classes`, in which case they count 0.
EvalReport mean_average_precision(std::span<const ActionProposal> proposals,
                                  std::span<const GroundTruth> gt,
                                  const std::vector<std::string>& class_names,
                                  const std::vector<double>& thresholds,
                                  const std::vector<ThresholdRange>& ranges,
                                  bool include_empty_classes = false);

// Human-readable table: rows per class and a final mAP row; columns are the
// thresholds then the averages.
void write_report_table(std::ostream& out, const EvalReport& report);
// CSV with header "row,<thresholds...>,<range names...>" mirroring the table.
void write_report_csv(std::ostream& out, const EvalReport& report);

// "video_id class_name t_s t_e q" with 6-decimal fixed numbers.
void write_proposals(std::ostream& out, std::span<const ActionProposal> proposals,
                     const std::vector<std::string>& class_names);
std::vector<ActionProposal> read_proposals(const std::filesystem::path& path,
                                           const std::vector<std::string>& class_names);

}  // namespace wstal
