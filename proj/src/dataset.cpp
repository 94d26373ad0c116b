#include "wstal/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "wstal/errors.hpp"

namespace wstal {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'I', 'S', 'S', 'F'};
constexpr const char* kManifestHeader = "wstal-manifest";
constexpr int kManifestVersion = 1;

template <typename T>
void put(std::string& buf, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T get(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

double parse_double(const std::string& token, const fs::path& file, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw LoadError(file.string() + ":" + std::to_string(line) +
                    ": expected a number, got '" + token + "'");
  }
}

long long parse_int(const std::string& token, const fs::path& file, int line) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw LoadError(file.string() + ":" + std::to_string(line) +
                    ": expected an integer, got '" + token + "'");
  }
}

}  // namespace

std::vector<int> VideoRecord::label_classes() const {
  std::vector<int> out;
  for (std::size_t c = 0; c < label.size(); ++c) {
    if (label[c]) out.push_back(static_cast<int>(c));
  }
  return out;
}

int Dataset::class_index(const std::string& name) const {
  auto it = std::find(class_names.begin(), class_names.end(), name);
  return it == class_names.end() ? -1
                                 : static_cast<int>(it - class_names.begin());
}

Dataset Dataset::subset(const std::string& which) const {
  Dataset out;
  out.class_names = class_names;
  out.feature_dim = feature_dim;
  for (const VideoRecord& v : videos) {
    if (v.split == which) out.videos.push_back(v);
  }
  return out;
}

const VideoRecord* Dataset::find(const std::string& id) const {
  for (const VideoRecord& v : videos) {
    if (v.id == id) return &v;
  }
  return nullptr;
}

void validate(const Dataset& dataset) {
  const auto C = static_cast<std::size_t>(dataset.num_classes());
  std::set<std::string> ids;
  for (const VideoRecord& v : dataset.videos) {
    const std::string who = "video '" + v.id + "'";
    if (!ids.insert(v.id).second) throw ArgumentError("duplicate " + who);
    if (v.features.rows() < 2) throw ArgumentError(who + " has fewer than 2 snippets");
    if (v.features.cols() != dataset.feature_dim) {
      throw ArgumentError(who + " feature dimension differs from dataset");
    }
    if (!v.features.allFinite()) throw ArgumentError(who + " has non-finite features");
    if (v.label.size() != C) throw ArgumentError(who + " label width differs from C");
    if (v.split == "train" && v.label_classes().empty()) {
      throw ArgumentError(who + " is a training video without a positive label");
    }
    if (!(v.seconds_per_snippet > 0)) {
      throw ArgumentError(who + " needs a positive seconds_per_snippet");
    }
    for (const GtSegment& g : v.gt_segments) {
      if (g.class_index < 0 || static_cast<std::size_t>(g.class_index) >= C) {
        throw ArgumentError(who + " has a segment with an unknown class");
      }
      if (!(g.start >= 0 && g.start < g.end)) {
        throw ArgumentError(who + " has a segment with start >= end");
      }
    }
  }
}

// ---- binary features --------------------------------------------------------

void write_features(const fs::path& path, const FeatureMatrix& features) {
  std::string buf;
  buf.reserve(16 + static_cast<std::size_t>(features.size()) * 4);
  buf.append(kMagic, 4);
  put<std::uint16_t>(buf, kFeatureFormatVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(features.rows()));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(features.cols()));
  put<std::uint16_t>(buf, 0);
  buf.append(reinterpret_cast<const char*>(features.data()),
             static_cast<std::size_t>(features.size()) * sizeof(float));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("write failed for " + path.string());
}

FeatureMatrix read_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string() + ": cannot open feature file");
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 16) throw LoadError(path.string() + ": truncated header");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw LoadError(path.string() + ": bad magic");
  }
  const auto version = get<std::uint16_t>(buf.data() + 4);
  if (version != kFeatureFormatVersion) {
    throw LoadError(path.string() + ": unsupported version " +
                    std::to_string(version));
  }
  const auto T = get<std::uint32_t>(buf.data() + 6);
  const auto D = get<std::uint32_t>(buf.data() + 10);
  const std::size_t expected = 16 + std::size_t{T} * D * sizeof(float);
  if (buf.size() != expected) {
    throw LoadError(path.string() + ": payload holds " +
                    std::to_string(buf.size() - 16) + " bytes, header declares " +
                    std::to_string(T) + "x" + std::to_string(D));
  }
  FeatureMatrix f(T, D);
  std::memcpy(f.data(), buf.data() + 16, std::size_t{T} * D * sizeof(float));
  return f;
}

// ---- manifest ---------------------------------------------------------------

void write_ground_truth(const fs::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const VideoRecord& v : dataset.videos) {
    for (const GtSegment& g : v.gt_segments) {
      out << v.id << ' ' << dataset.class_names.at(g.class_index) << ' '
          << format_double(g.start) << ' ' << format_double(g.end) << '\n';
    }
  }
  if (!out) throw Error("write failed for " + path.string());
}

fs::path write_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "features");
  const fs::path manifest = dir / "manifest.txt";
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw Error("cannot open " + manifest.string() + " for writing");

  out << kManifestHeader << ' ' << kManifestVersion << '\n';
  out << "feature_dim " << dataset.feature_dim << '\n';
  for (const std::string& name : dataset.class_names) {
    out << "class " << name << '\n';
  }
  out << "ground_truth ground_truth.txt\n";
  for (const VideoRecord& v : dataset.videos) {
    const std::string rel = "features/" + v.id + ".bin";
    write_features(dir / rel, v.features);
    std::string labels;
    for (int c : v.label_classes()) {
      if (!labels.empty()) labels += ',';
      labels += dataset.class_names[c];
    }
    if (labels.empty()) labels = "-";
    out << "video " << v.id << ' ' << v.split << ' ' << v.num_snippets() << ' '
        << format_double(v.seconds_per_snippet) << ' ' << labels << ' ' << rel
        << '\n';
  }
  if (!out) throw Error("write failed for " + manifest.string());
  write_ground_truth(dir / "ground_truth.txt", dataset);
  return manifest;
}

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw LoadError(manifest_path.string() + ": cannot open manifest");
  const fs::path base = manifest_path.parent_path();

  Dataset ds;
  bool have_dim = false;
  bool have_header = false;
  fs::path gt_path;
  std::string line;
  int lineno = 0;

  auto fail = [&](const std::string& msg) -> LoadError {
    return LoadError(manifest_path.string() + ":" + std::to_string(lineno) +
                     ": " + msg);
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string& key = tok[0];

    if (!have_header) {
      if (key != kManifestHeader || tok.size() != 2 ||
          parse_int(tok[1], manifest_path, lineno) != kManifestVersion) {
        throw fail("expected '" + std::string(kManifestHeader) + " " +
                   std::to_string(kManifestVersion) + "'");
      }
      have_header = true;
    } else if (key == "feature_dim" && tok.size() == 2) {
      const long long d = parse_int(tok[1], manifest_path, lineno);
      if (d <= 0) throw fail("feature_dim must be positive");
      ds.feature_dim = d;
      have_dim = true;
    } else if (key == "class" && tok.size() == 2) {
      if (ds.class_index(tok[1]) >= 0) throw fail("duplicate class " + tok[1]);
      ds.class_names.push_back(tok[1]);
    } else if (key == "ground_truth" && tok.size() == 2) {
      gt_path = base / tok[1];
    } else if (key == "video" && (tok.size() == 7 || tok.size() == 8)) {
      if (!have_dim) throw fail("video before feature_dim");
      VideoRecord v;
      v.id = tok[1];
      v.split = tok[2];
      const long long T = parse_int(tok[3], manifest_path, lineno);
      v.seconds_per_snippet = parse_double(tok[4], manifest_path, lineno);
      v.label.assign(ds.class_names.size(), 0);
      if (tok[5] != "-") {
        for (const std::string& name : split(tok[5], ',')) {
          const int c = ds.class_index(name);
          if (c < 0) throw fail("unknown class name '" + name + "'");
          v.label[c] = 1;
        }
      }
      FeatureMatrix f = read_features(base / tok[6]);
      if (tok.size() == 8) {
        // Two streams (e.g. RGB and flow) fused by column concatenation.
        FeatureMatrix g = read_features(base / tok[7]);
        if (g.rows() != f.rows()) {
          throw LoadError((base / tok[7]).string() +
                          ": snippet count differs from " + tok[6]);
        }
        FeatureMatrix fused(f.rows(), f.cols() + g.cols());
        fused << f, g;
        f = std::move(fused);
      }
      if (f.rows() != T) {
        throw LoadError((base / tok[6]).string() + ": holds " +
                        std::to_string(f.rows()) + " snippets, manifest declares " +
                        std::to_string(T));
      }
      if (f.cols() != ds.feature_dim) {
        throw LoadError((base / tok[6]).string() + ": feature dimension " +
                        std::to_string(f.cols()) + " differs from manifest " +
                        std::to_string(ds.feature_dim));
      }
      v.features = std::move(f);
      ds.videos.push_back(std::move(v));
    } else {
      throw fail("unrecognised line");
    }
  }
  if (!have_header) throw LoadError(manifest_path.string() + ": empty manifest");
  if (!have_dim) throw LoadError(manifest_path.string() + ": missing feature_dim");

  if (!gt_path.empty()) {
    std::ifstream gin(gt_path);
    if (!gin) throw LoadError(gt_path.string() + ": cannot open ground truth");
    int gl = 0;
    while (std::getline(gin, line)) {
      ++gl;
      std::istringstream ls(line);
      std::vector<std::string> tok;
      for (std::string t; ls >> t;) tok.push_back(t);
      if (tok.empty() || tok[0][0] == '#') continue;
      if (tok.size() != 4) {
        throw LoadError(gt_path.string() + ":" + std::to_string(gl) +
                        ": expected 'video class start end'");
      }
      auto vit = std::find_if(ds.videos.begin(), ds.videos.end(),
                              [&](const VideoRecord& v) { return v.id == tok[0]; });
      if (vit == ds.videos.end()) {
        throw LoadError(gt_path.string() + ":" + std::to_string(gl) +
                        ": unknown video '" + tok[0] + "'");
      }
      const int c = ds.class_index(tok[1]);
      if (c < 0) {
        throw LoadError(gt_path.string() + ":" + std::to_string(gl) +
                        ": unknown class name '" + tok[1] + "'");
      }
      vit->gt_segments.push_back(GtSegment{c, parse_double(tok[2], gt_path, gl),
                                           parse_double(tok[3], gt_path, gl)});
    }
  }

  try {
    validate(ds);
  } catch (const ArgumentError& e) {
    throw LoadError(manifest_path.string() + ": " + e.what());
  }
  return ds;
}

// ---- synthetic --------------------------------------------------------------

void validate(const SyntheticSpec& s) {
  if (s.num_classes < 1) throw ArgumentError("num_classes must be >= 1");
  if (s.feature_dim < 1) throw ArgumentError("feature_dim must be >= 1");
  if (s.train_videos_per_class < 0 || s.test_videos_per_class < 0) {
    throw ArgumentError("videos per class must be >= 0");
  }
  if (s.min_snippets < 2 || s.max_snippets < s.min_snippets) {
    throw ArgumentError("snippet range must satisfy 2 <= min <= max");
  }
  if (s.min_segments < 1 || s.max_segments < s.min_segments) {
    throw ArgumentError("segment range must satisfy 1 <= min <= max");
  }
  if (s.min_action_length < 1 || s.min_background_length < 1) {
    throw ArgumentError("minimum segment lengths must be >= 1");
  }
  // Worst case: max segments, each action and every inner background at its
  // minimum length, plus one snippet of background at both ends.
  const Index needed = s.max_segments * s.min_action_length +
                       (s.max_segments - 1) * s.min_background_length + 2;
  if (needed > s.min_snippets) {
    throw ArgumentError("segments cannot fit: need " + std::to_string(needed) +
                        " snippets, min_snippets is " +
                        std::to_string(s.min_snippets));
  }
  if (!(s.boundary_contrast >= 0)) throw ArgumentError("boundary_contrast must be >= 0");
  if (!(s.noise_sigma >= 0)) throw ArgumentError("noise_sigma must be >= 0");
  if (!(s.class_share >= 0 && s.class_share <= 1)) {
    throw ArgumentError("class_share must lie in [0, 1]");
  }
  if (!(s.instance_jitter >= 0)) throw ArgumentError("instance_jitter must be >= 0");
  if (!(s.context_background >= 0 && s.context_background <= 1)) {
    throw ArgumentError("context_background must lie in [0, 1]");
  }
  if (s.background_types < 1) throw ArgumentError("background_types must be >= 1");
  if (s.max_classes_per_video < 1 || s.max_classes_per_video > s.num_classes) {
    throw ArgumentError("max_classes_per_video must lie in [1, num_classes]");
  }
  if (!(s.seconds_per_snippet > 0)) {
    throw ArgumentError("seconds_per_snippet must be positive");
  }
}

namespace {

using RowVec = Eigen::RowVectorXd;

RowVec gaussian_row(Index d, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  RowVec v(d);
  for (Index i = 0; i < d; ++i) v(i) = sigma * n(rng);
  return v;
}

// Random unit row scaled so the expected per-dimension magnitude is `scale`.
RowVec direction(Index d, double scale, std::mt19937_64& rng) {
  RowVec v = gaussian_row(d, 1.0, rng);
  return v * (scale * std::sqrt(static_cast<double>(d)) / v.norm());
}

// Pushes `proto` away from `prev` until they are at least `min_dist` apart.
void separate(RowVec& proto, const RowVec& prev, double min_dist,
              std::mt19937_64& rng) {
  if (min_dist <= 0) return;
  RowVec delta = proto - prev;
  double n = delta.norm();
  while (n < 1e-9) {
    delta = gaussian_row(proto.size(), 1.0, rng);
    n = delta.norm();
  }
  if (n < min_dist) proto = prev + delta * (min_dist / n);
}

struct Layout {
  std::vector<Index> lengths;  // alternating bg, action, bg, ..., bg
};

Layout draw_layout(Index T, int segments, const SyntheticSpec& s,
                   std::mt19937_64& rng) {
  Layout l;
  const int parts = 2 * segments + 1;
  l.lengths.assign(parts, 0);
  for (int i = 0; i < parts; ++i) {
    const bool action = i % 2 == 1;
    const bool edge = i == 0 || i == parts - 1;
    l.lengths[i] = action ? s.min_action_length : (edge ? 1 : s.min_background_length);
  }
  Index used = 0;
  for (Index n : l.lengths) used += n;
  // Spread the remaining snippets; actions get roughly 40% of the slack.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> weights(parts);
  for (int i = 0; i < parts; ++i) {
    weights[i] = (i % 2 == 1 ? 1.6 : 1.0) * (0.25 + u(rng));
  }
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  for (Index left = T - used; left > 0; --left) ++l.lengths[pick(rng)];
  return l;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& s) {
  validate(s);
  std::mt19937_64 rng(s.seed);
  const Index D = s.feature_dim;
  const double min_dist = s.boundary_contrast * std::sqrt(static_cast<double>(D));

  Dataset ds;
  ds.feature_dim = D;
  for (int c = 0; c < s.num_classes; ++c) {
    ds.class_names.push_back("class" + std::to_string(c));
  }

  // Global prototypes: one per class, one shared action direction, one
  // background centre. Each has per-dimension magnitude ~boundary_contrast.
  std::vector<RowVec> class_dir;
  for (int c = 0; c < s.num_classes; ++c) {
    class_dir.push_back(direction(D, s.boundary_contrast, rng));
  }
  const RowVec shared_action = direction(D, s.boundary_contrast, rng);
  std::vector<RowVec> background;
  for (int b = 0; b < s.background_types; ++b) {
    background.push_back(direction(D, s.boundary_contrast, rng));
  }
  std::vector<RowVec> context;
  for (int c = 0; c < s.num_classes; ++c) {
    context.push_back(direction(D, s.boundary_contrast, rng));
  }

  auto make_video = [&](int cls, const std::string& split, int serial) {
    VideoRecord v;
    v.id = split + "_" + ds.class_names[cls] + "_" + std::to_string(serial);
    v.split = split;
    v.seconds_per_snippet = s.seconds_per_snippet;
    v.label.assign(s.num_classes, 0);

    std::uniform_int_distribution<Index> t_dist(s.min_snippets, s.max_snippets);
    std::uniform_int_distribution<int> seg_dist(s.min_segments, s.max_segments);
    const Index T = t_dist(rng);
    const int segments = seg_dist(rng);
    const Layout layout = draw_layout(T, segments, s, rng);

    // The first action segment carries the video's own class.
    std::vector<int> pool{cls};
    std::uniform_int_distribution<int> class_dist(0, s.num_classes - 1);
    while (static_cast<int>(pool.size()) < s.max_classes_per_video) {
      const int extra = class_dist(rng);
      if (std::find(pool.begin(), pool.end(), extra) == pool.end()) pool.push_back(extra);
    }
    std::uniform_int_distribution<std::size_t> pool_dist(0, pool.size() - 1);
    std::uniform_int_distribution<int> bg_dist(0, s.background_types - 1);
    std::bernoulli_distribution context_dist(s.context_background);

    Matrix feats(T, D);
    RowVec prev;
    Index t = 0;
    for (std::size_t part = 0; part < layout.lengths.size(); ++part) {
      const bool action = part % 2 == 1;
      const int seg_class = part == 1 ? cls : pool[pool_dist(rng)];
      RowVec proto;
      if (action) {
        proto = s.class_share * class_dir[seg_class] +
                (1.0 - s.class_share) * shared_action;
        v.label[seg_class] = 1;
      } else {
        proto = context_dist(rng) ? context[cls] : background[bg_dist(rng)];
      }
      proto += gaussian_row(D, s.instance_jitter * s.boundary_contrast, rng);
      if (part > 0) separate(proto, prev, min_dist, rng);
      const Index len = layout.lengths[part];
      for (Index i = 0; i < len; ++i, ++t) {
        feats.row(t) = proto + gaussian_row(D, s.noise_sigma, rng);
      }
      if (action) {
        const Index start = t - len;
        v.gt_segments.push_back(
            GtSegment{seg_class, static_cast<double>(start) * s.seconds_per_snippet,
                      static_cast<double>(t) * s.seconds_per_snippet});
      }
      prev = proto;
    }
    v.features = feats.cast<float>();
    return v;
  };

  for (int c = 0; c < s.num_classes; ++c) {
    for (int i = 0; i < s.train_videos_per_class; ++i) {
      ds.videos.push_back(make_video(c, "train", i));
    }
  }
  for (int c = 0; c < s.num_classes; ++c) {
    for (int i = 0; i < s.test_videos_per_class; ++i) {
      ds.videos.push_back(make_video(c, "test", i));
    }
  }
  return ds;
}

std::vector<Index> planted_transitions(const VideoRecord& video) {
  std::set<Index> out;
  const Index T = video.num_snippets();
  for (const GtSegment& g : video.gt_segments) {
    const auto start = static_cast<Index>(std::lround(g.start / video.seconds_per_snippet));
    const auto end = static_cast<Index>(std::lround(g.end / video.seconds_per_snippet));
    if (start > 0 && start < T) out.insert(start);
    if (end > 0 && end < T) out.insert(end);
  }
  return {out.begin(), out.end()};
}

}  // namespace wstal
