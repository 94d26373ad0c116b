#include "wstal/config.hpp"

#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include "wstal/errors.hpp"

namespace wstal {

ModuleSet parse_module_set(std::string_view name) {
  if (name == "base") return ModuleSet::kBase;
  if (name == "base+brm") return ModuleSet::kBaseBrm;
  if (name == "base+brm+dem") return ModuleSet::kBaseBrmDem;
  throw ConfigError("unknown module set '" + std::string(name) + "'");
}

std::string_view to_string(ModuleSet modules) {
  switch (modules) {
    case ModuleSet::kBase:
      return "base";
    case ModuleSet::kBaseBrm:
      return "base+brm";
    case ModuleSet::kBaseBrmDem:
      return "base+brm+dem";
  }
  return "?";
}

InferenceBranch parse_inference_branch(std::string_view name) {
  if (name == "base") return InferenceBranch::kBase;
  if (name == "fused") return InferenceBranch::kFused;
  throw ConfigError("unknown inference_branch '" + std::string(name) + "'");
}

std::string_view to_string(InferenceBranch branch) {
  return branch == InferenceBranch::kBase ? "base" : "fused";
}

SaliencyStrategy SaliencyStrategy::parse(std::string_view name) {
  if (name == "random") return {Kind::kRandom, DiffMetric::kL1};
  if (name == "classification") return {Kind::kClassification, DiffMetric::kL1};
  return {Kind::kDifference, parse_diff_metric(name)};
}

std::string SaliencyStrategy::name() const {
  switch (kind) {
    case Kind::kRandom:
      return "random";
    case Kind::kClassification:
      return "classification";
    case Kind::kDifference:
      return std::string(to_string(metric));
  }
  return "?";
}

ProposalConfig RunConfig::proposal_config() const {
  return ProposalConfig{proposal_thresholds, class_score_threshold, outer_ratio, nms_iou};
}

std::vector<double> RunConfig::eval_thresholds() const {
  return eval_protocol == "activitynet" ? activitynet_thresholds() : thumos_thresholds();
}

std::vector<ThresholdRange> RunConfig::eval_ranges() const {
  return eval_protocol == "activitynet" ? activitynet_ranges() : thumos_ranges();
}

// ---- key/value plumbing -----------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long d = std::stoull(v, &used);
    if (used != v.size() || (!v.empty() && v[0] == '-')) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + key + "' expects true/false, got '" + v + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::istringstream is(v);
  for (std::string tok; std::getline(is, tok, ',');) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(to_double(key, tok));
  }
  return out;
}

std::string from_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += fmt(v[i]);
  }
  return s;
}

template <typename T>
struct Field {
  std::string key;
  std::function<std::string(const T&)> get;
  std::function<void(T&, const std::string&)> set;
};

#define WSTAL_DOUBLE(T, name)                                              \
  Field<T> {                                                               \
    #name, [](const T& c) { return fmt(c.name); },                         \
        [](T& c, const std::string& v) { c.name = to_double(#name, v); }   \
  }
#define WSTAL_INT(T, name)                                                              \
  Field<T> {                                                                            \
    #name, [](const T& c) { return std::to_string(c.name); },                           \
        [](T& c, const std::string& v) {                                                \
          c.name = static_cast<decltype(c.name)>(to_int(#name, v));                     \
        }                                                                               \
  }
#define WSTAL_BOOL(T, name)                                               \
  Field<T> {                                                              \
    #name, [](const T& c) { return std::string(c.name ? "true" : "false"); }, \
        [](T& c, const std::string& v) { c.name = to_bool(#name, v); }    \
  }
#define WSTAL_ENUM(T, name, parse)                                             \
  Field<T> {                                                                   \
    #name, [](const T& c) { return std::string(to_string(c.name)); },          \
        [](T& c, const std::string& v) { c.name = parse(v); }                  \
  }

const std::vector<Field<RunConfig>>& run_fields() {
  using C = RunConfig;
  static const std::vector<Field<C>> fields = {
      {"seed", [](const C& c) { return std::to_string(c.seed); },
       [](C& c, const std::string& v) { c.seed = to_u64("seed", v); }},
      WSTAL_INT(C, epochs),
      WSTAL_DOUBLE(C, warmup_fraction),
      WSTAL_DOUBLE(C, lr),
      WSTAL_INT(C, batch_size),
      WSTAL_DOUBLE(C, beta1),
      WSTAL_DOUBLE(C, beta2),
      WSTAL_DOUBLE(C, adam_eps),
      WSTAL_ENUM(C, modules, parse_module_set),
      WSTAL_INT(C, reduction),
      WSTAL_INT(C, pool_divisor),
      WSTAL_BOOL(C, shared_head),
      {"diff", [](const C& c) { return c.saliency.name(); },
       [](C& c, const std::string& v) { c.saliency = SaliencyStrategy::parse(v); }},
      WSTAL_ENUM(C, pair_mark, parse_pair_mark),
      WSTAL_DOUBLE(C, salient_ratio),
      WSTAL_DOUBLE(C, sigma),
      WSTAL_ENUM(C, fusion_mode, parse_fusion_mode),
      WSTAL_BOOL(C, scaled_attention),
      WSTAL_ENUM(C, memory_mode, parse_memory_mode),
      WSTAL_INT(C, memory_slots),
      WSTAL_DOUBLE(C, eta0),
      WSTAL_DOUBLE(C, memory_class_threshold),
      WSTAL_DOUBLE(C, lambda_att),
      WSTAL_DOUBLE(C, theta_mil),
      WSTAL_ENUM(C, pseudo_target, parse_pseudo_target),
      WSTAL_ENUM(C, inference_branch, parse_inference_branch),
      WSTAL_DOUBLE(C, class_score_threshold),
      {"proposal_thresholds", [](const C& c) { return from_list(c.proposal_thresholds); },
       [](C& c, const std::string& v) {
         c.proposal_thresholds = to_list("proposal_thresholds", v);
       }},
      WSTAL_DOUBLE(C, outer_ratio),
      WSTAL_DOUBLE(C, nms_iou),
      {"eval_protocol", [](const C& c) { return c.eval_protocol; },
       [](C& c, const std::string& v) { c.eval_protocol = v; }},
      WSTAL_BOOL(C, include_empty_classes),
  };
  return fields;
}

const std::vector<Field<SyntheticSpec>>& synthetic_fields() {
  using S = SyntheticSpec;
  static const std::vector<Field<S>> fields = {
      WSTAL_INT(S, num_classes),
      WSTAL_INT(S, feature_dim),
      WSTAL_INT(S, train_videos_per_class),
      WSTAL_INT(S, test_videos_per_class),
      WSTAL_INT(S, min_snippets),
      WSTAL_INT(S, max_snippets),
      WSTAL_INT(S, min_segments),
      WSTAL_INT(S, max_segments),
      WSTAL_INT(S, min_action_length),
      WSTAL_INT(S, min_background_length),
      WSTAL_DOUBLE(S, boundary_contrast),
      WSTAL_DOUBLE(S, noise_sigma),
      WSTAL_DOUBLE(S, class_share),
      WSTAL_DOUBLE(S, instance_jitter),
      WSTAL_INT(S, background_types),
      WSTAL_INT(S, max_classes_per_video),
      WSTAL_DOUBLE(S, context_background),
      WSTAL_DOUBLE(S, seconds_per_snippet),
      {"seed", [](const S& s) { return std::to_string(s.seed); },
       [](S& s, const std::string& v) { s.seed = to_u64("seed", v); }},
  };
  return fields;
}

#undef WSTAL_DOUBLE
#undef WSTAL_INT
#undef WSTAL_BOOL
#undef WSTAL_ENUM

template <typename T>
std::string serialize_fields(const T& value, const std::vector<Field<T>>& fields) {
  std::string out;
  for (const Field<T>& f : fields) out += f.key + " = " + f.get(value) + "\n";
  return out;
}

template <typename T>
void apply(T& value, const std::vector<Field<T>>& fields, const std::string& key,
           const std::string& v) {
  for (const Field<T>& f : fields) {
    if (f.key == key) {
      f.set(value, v);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    out.emplace_back(trim(std::string_view(line).substr(0, eq)),
                     trim(std::string_view(line).substr(eq + 1)));
  }
  return out;
}

void validate(const RunConfig& c) {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(c.epochs >= 0, "epochs must be >= 0");
  need(c.warmup_fraction >= 0 && c.warmup_fraction <= 1, "warmup_fraction must lie in [0, 1]");
  need(c.lr > 0, "lr must be positive");
  need(c.batch_size >= 1, "batch_size must be >= 1");
  need(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1, "betas must lie in [0, 1)");
  need(c.adam_eps > 0, "adam_eps must be positive");
  need(c.reduction >= 1, "reduction must be >= 1");
  need(c.pool_divisor >= 1, "pool_divisor must be >= 1");
  need(c.salient_ratio > 0 && c.salient_ratio <= 1, "salient_ratio must lie in (0, 1]");
  need(c.sigma >= 0 && c.sigma <= 1, "sigma must lie in [0, 1]");
  need(c.memory_slots >= 1, "memory_slots must be >= 1");
  need(c.eta0 > 0 && c.eta0 < 1, "eta0 must lie in (0, 1)");
  need(c.lambda_att >= 0 && c.theta_mil >= 0, "loss weights must be >= 0");
  need(!c.proposal_thresholds.empty(), "proposal_thresholds must not be empty");
  for (double t : c.proposal_thresholds) {
    need(t >= 0 && t < 1, "proposal thresholds must lie in [0, 1)");
  }
  need(c.outer_ratio >= 0, "outer_ratio must be >= 0");
  need(c.nms_iou > 0 && c.nms_iou <= 1, "nms_iou must lie in (0, 1]");
  need(c.eval_protocol == "thumos" || c.eval_protocol == "activitynet",
       "eval_protocol must be thumos or activitynet");
}

std::string serialize(const RunConfig& config) { return serialize_fields(config, run_fields()); }

RunConfig parse_run_config(std::string_view text) {
  RunConfig c;
  std::set<std::string> seen;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (!seen.insert(k).second) throw ConfigError("duplicate config key '" + k + "'");
    apply(c, run_fields(), k, v);
  }
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text(path));
}

void set_option(RunConfig& config, const std::string& key, const std::string& value) {
  apply(config, run_fields(), key, value);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const RunConfig& config) { return fnv1a(serialize(config)); }

std::string hex_hash(std::uint64_t hash) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << hash;
  return os.str();
}

std::string serialize(const SyntheticSpec& spec) {
  return serialize_fields(spec, synthetic_fields());
}

SyntheticSpec parse_synthetic_spec(std::string_view text) {
  SyntheticSpec s;
  for (const auto& [k, v] : parse_key_values(text)) apply(s, synthetic_fields(), k, v);
  try {
    validate(s);
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  return s;
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  return parse_synthetic_spec(read_text(path));
}

}  // namespace wstal
