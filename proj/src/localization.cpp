#include "wstal/localization.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "wstal/errors.hpp"

namespace wstal {

// ---- proposals --------------------------------------------------------------

namespace {

Eigen::VectorXd normalise(const Eigen::VectorXd& a) {
  const double lo = a.minCoeff();
  const double hi = a.maxCoeff();
  if (hi - lo > 1e-12) return (a.array() - lo) / (hi - lo);
  // Flat activation: all-on when positive, all-off otherwise.
  return Eigen::VectorXd::Constant(a.size(), hi > 0 ? 1.0 : 0.0);
}

double mean_range(const Eigen::VectorXd& a, Index from, Index to) {
  // Mean of a[from, to), zero when empty.
  from = std::max<Index>(0, from);
  to = std::min<Index>(a.size(), to);
  if (to <= from) return 0.0;
  return a.segment(from, to - from).mean();
}

}  // namespace

std::vector<ActionProposal> generate_proposals(const Matrix& activation,
                                               std::span<const double> video_score,
                                               double seconds_per_snippet,
                                               const ProposalConfig& config,
                                               const std::string& video_id) {
  if (static_cast<Index>(video_score.size()) != activation.cols()) {
    throw DimensionError("generate_proposals: one video score per class required");
  }
  std::vector<ActionProposal> out;
  const Index T = activation.rows();
  for (Index c = 0; c < activation.cols(); ++c) {
    if (video_score[c] < config.class_score_threshold) continue;
    const Eigen::VectorXd raw = activation.col(c);
    const Eigen::VectorXd norm = normalise(raw);
    for (double thr : config.thresholds) {
      Index t = 0;
      while (t < T) {
        if (!(norm(t) > thr)) {
          ++t;
          continue;
        }
        const Index begin = t;
        while (t < T && norm(t) > thr) ++t;
        const Index end = t;  // exclusive
        const Index len = end - begin;
        const Index flank = std::max<Index>(1, static_cast<Index>(
                                                   std::floor(config.outer_ratio * len)));
        const double inner = raw.segment(begin, len).mean();
        const Index left_n = std::min<Index>(flank, begin);
        const Index right_n = std::min<Index>(flank, T - end);
        double outer = 0.0;
        if (left_n + right_n > 0) {
          outer = (mean_range(raw, begin - left_n, begin) * static_cast<double>(left_n) +
                   mean_range(raw, end, end + right_n) * static_cast<double>(right_n)) /
                  static_cast<double>(left_n + right_n);
        }
        ActionProposal p;
        p.class_index = static_cast<int>(c);
        p.confidence = inner - outer + video_score[c];
        p.start = static_cast<double>(begin) * seconds_per_snippet;
        p.end = static_cast<double>(end) * seconds_per_snippet;
        p.video_id = video_id;
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

std::vector<ActionProposal> nms(std::vector<ActionProposal> proposals,
                                double iou_threshold) {
  std::stable_sort(proposals.begin(), proposals.end(),
                   [](const ActionProposal& a, const ActionProposal& b) {
                     if (a.confidence != b.confidence) return a.confidence > b.confidence;
                     return a.start < b.start;
                   });
  std::vector<ActionProposal> kept;
  for (ActionProposal& p : proposals) {
    bool suppressed = false;
    for (const ActionProposal& k : kept) {
      if (k.video_id == p.video_id && k.class_index == p.class_index &&
          temporal_iou(Segment{k.start, k.end}, Segment{p.start, p.end}) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(std::move(p));
  }
  return kept;
}

// ---- evaluation -------------------------------------------------------------

std::vector<GroundTruth> ground_truth_of(const Dataset& dataset) {
  std::vector<GroundTruth> gt;
  for (const VideoRecord& v : dataset.videos) {
    for (const GtSegment& g : v.gt_segments) {
      gt.push_back(GroundTruth{v.id, g.class_index, g.start, g.end});
    }
  }
  return gt;
}

std::vector<double> thumos_thresholds() {
  return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
}

std::vector<ThresholdRange> thumos_ranges() {
  return {{"AVG(0.1:0.5)", 0.1, 0.5}, {"AVG(0.3:0.7)", 0.3, 0.7}, {"AVG(0.1:0.7)", 0.1, 0.7}};
}

std::vector<double> activitynet_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

std::vector<ThresholdRange> activitynet_ranges() { return {{"AVG(0.5:0.95)", 0.5, 0.95}}; }

double EvalReport::map_at(double threshold) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (std::abs(thresholds[i] - threshold) < 1e-9) return map[i];
  }
  throw ArgumentError("threshold not in report");
}

double EvalReport::average(const std::string& range_name) const {
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    if (ranges[i].name == range_name) return range_map[i];
  }
  throw ArgumentError("range '" + range_name + "' not in report");
}

double average_precision(std::vector<ActionProposal> proposals,
                         std::span<const GroundTruth> gt, double iou_threshold) {
  if (gt.empty()) return 0.0;
  std::stable_sort(proposals.begin(), proposals.end(),
                   [](const ActionProposal& a, const ActionProposal& b) {
                     if (a.confidence != b.confidence) return a.confidence > b.confidence;
                     if (a.video_id != b.video_id) return a.video_id < b.video_id;
                     return a.start < b.start;
                   });
  std::vector<bool> matched(gt.size(), false);
  std::vector<double> precision;
  std::vector<double> recall;
  double tp = 0;
  double fp = 0;
  const auto G = static_cast<double>(gt.size());
  for (const ActionProposal& p : proposals) {
    double best = -1.0;
    std::size_t best_j = gt.size();
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (matched[j] || gt[j].video_id != p.video_id) continue;
      const double iou = temporal_iou(p.start, p.end, gt[j].start, gt[j].end);
      if (iou > best) {
        best = iou;
        best_j = j;
      }
    }
    if (best_j < gt.size() && best >= iou_threshold) {
      matched[best_j] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(tp / (tp + fp));
    recall.push_back(tp / G);
  }

  // All-point interpolation: precision envelope integrated over recall.
  std::vector<double> mprec{0.0};
  std::vector<double> mrec{0.0};
  mprec.insert(mprec.end(), precision.begin(), precision.end());
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mprec.push_back(0.0);
  mrec.push_back(1.0);
  for (std::size_t i = mprec.size() - 1; i > 0; --i) {
    mprec[i - 1] = std::max(mprec[i - 1], mprec[i]);
  }
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) {
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mprec[i];
  }
  return ap;
}

EvalReport mean_average_precision(std::span<const ActionProposal> proposals,
                                  std::span<const GroundTruth> gt,
                                  const std::vector<std::string>& class_names,
                                  const std::vector<double>& thresholds,
                                  const std::vector<ThresholdRange>& ranges,
                                  bool include_empty_classes) {
  if (gt.empty()) throw ArgumentError("evaluation needs at least one ground-truth segment");
  const auto C = static_cast<int>(class_names.size());
  EvalReport r;
  r.thresholds = thresholds;
  r.class_names = class_names;
  r.ranges = ranges;
  r.ap = Matrix::Constant(C, static_cast<Index>(thresholds.size()),
                          std::numeric_limits<double>::quiet_NaN());

  for (int c = 0; c < C; ++c) {
    std::vector<GroundTruth> cgt;
    for (const GroundTruth& g : gt) {
      if (g.class_index == c) cgt.push_back(g);
    }
    if (cgt.empty() && !include_empty_classes) continue;
    r.evaluated_classes.push_back(c);
    std::vector<ActionProposal> cp;
    for (const ActionProposal& p : proposals) {
      if (p.class_index == c) cp.push_back(p);
    }
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      r.ap(c, static_cast<Index>(i)) =
          cgt.empty() ? 0.0 : average_precision(cp, cgt, thresholds[i]);
    }
  }

  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    double s = 0.0;
    for (int c : r.evaluated_classes) s += r.ap(c, static_cast<Index>(i));
    r.map.push_back(r.evaluated_classes.empty()
                        ? 0.0
                        : s / static_cast<double>(r.evaluated_classes.size()));
  }
  for (const ThresholdRange& range : ranges) {
    double s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (thresholds[i] >= range.low - 1e-9 && thresholds[i] <= range.high + 1e-9) {
        s += r.map[i];
        ++n;
      }
    }
    r.range_map.push_back(n ? s / n : std::numeric_limits<double>::quiet_NaN());
  }
  return r;
}

namespace {

std::string threshold_label(double t) {
  std::ostringstream os;
  os << std::setprecision(3) << t;
  return os.str();
}

}  // namespace

void write_report_table(std::ostream& out, const EvalReport& r) {
  out << std::left << std::setw(14) << "mAP@IoU(%)";
  for (double t : r.thresholds) out << std::right << std::setw(8) << threshold_label(t);
  for (const ThresholdRange& range : r.ranges) out << std::setw(15) << range.name;
  out << '\n';
  out << std::fixed << std::setprecision(1);
  for (int c : r.evaluated_classes) {
    out << std::left << std::setw(14) << r.class_names[c] << std::right;
    double s = 0.0;
    for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
      out << std::setw(8) << 100.0 * r.ap(c, static_cast<Index>(i));
      s += r.ap(c, static_cast<Index>(i));
    }
    for (const ThresholdRange& range : r.ranges) {
      double rs = 0.0;
      int n = 0;
      for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
        if (r.thresholds[i] >= range.low - 1e-9 && r.thresholds[i] <= range.high + 1e-9) {
          rs += r.ap(c, static_cast<Index>(i));
          ++n;
        }
      }
      out << std::setw(15) << (n ? 100.0 * rs / n : 0.0);
    }
    out << '\n';
  }
  out << std::left << std::setw(14) << "mAP" << std::right;
  for (double m : r.map) out << std::setw(8) << 100.0 * m;
  for (double m : r.range_map) out << std::setw(15) << 100.0 * m;
  out << '\n';
  out.unsetf(std::ios::fixed);
}

void write_report_csv(std::ostream& out, const EvalReport& r) {
  out << "row";
  for (double t : r.thresholds) out << ',' << threshold_label(t);
  for (const ThresholdRange& range : r.ranges) out << ',' << range.name;
  out << '\n';
  out << std::fixed << std::setprecision(6);
  out << "mAP";
  for (double m : r.map) out << ',' << m;
  for (double m : r.range_map) out << ',' << m;
  out << '\n';
  for (int c : r.evaluated_classes) {
    out << r.class_names[c];
    for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
      out << ',' << r.ap(c, static_cast<Index>(i));
    }
    for (const ThresholdRange& range : r.ranges) {
      double rs = 0.0;
      int n = 0;
      for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
        if (r.thresholds[i] >= range.low - 1e-9 && r.thresholds[i] <= range.high + 1e-9) {
          rs += r.ap(c, static_cast<Index>(i));
          ++n;
        }
      }
      out << ',' << (n ? rs / n : 0.0);
    }
    out << '\n';
  }
  out.unsetf(std::ios::fixed);
}

void write_proposals(std::ostream& out, std::span<const ActionProposal> proposals,
                     const std::vector<std::string>& class_names) {
  out << std::fixed << std::setprecision(6);
  for (const ActionProposal& p : proposals) {
    out << p.video_id << ' ' << class_names.at(p.class_index) << ' ' << p.start << ' '
        << p.end << ' ' << p.confidence << '\n';
  }
  out.unsetf(std::ios::fixed);
}

std::vector<ActionProposal> read_proposals(const std::filesystem::path& path,
                                           const std::vector<std::string>& class_names) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string() + ": cannot open proposals");
  std::vector<ActionProposal> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string video;
    std::string cls;
    ActionProposal p;
    if (!(ls >> video)) continue;
    if (!(ls >> cls >> p.start >> p.end >> p.confidence)) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": malformed proposal");
    }
    auto it = std::find(class_names.begin(), class_names.end(), cls);
    if (it == class_names.end()) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": unknown class '" +
                      cls + "'");
    }
    p.class_index = static_cast<int>(it - class_names.begin());
    p.video_id = video;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace wstal
