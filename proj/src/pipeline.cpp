#include "wstal/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "wstal/boundary_refine.hpp"
#include "wstal/errors.hpp"

namespace wstal {

using ad::Var;

namespace {

const std::string kPseudoPrefix = "pseudo.";
const std::string kSalientUnit = "brm.salient.";
const std::string kNonSalientUnit = "brm.non_salient.";

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(a ^ splitmix(b)); }

Matrix to_double(const FeatureMatrix& f) { return f.cast<double>(); }

// Per-snippet class probabilities for the C action classes.
Matrix class_probs(const Matrix& tcam_logits) {
  ad::Tape scratch;
  Matrix p = ad::softmax(scratch.constant(tcam_logits), 1).value();
  return p.leftCols(p.cols() - 1);
}

std::string head_prefix(const RunConfig& c) { return c.shared_head ? "" : kPseudoPrefix; }

}  // namespace

// ---- model setup ------------------------------------------------------------

Checkpoint initialize_model(const ModelDims& dims, const RunConfig& config,
                            const std::vector<std::string>& class_names) {
  validate(config);
  if (static_cast<Index>(class_names.size()) != dims.num_classes) {
    throw ArgumentError("class name count differs from model classes");
  }
  Checkpoint ck;
  ck.config = config;
  ck.class_names = class_names;
  ck.dims = dims;
  std::mt19937_64 rng(mix(config.seed, 0x5eed));
  init_base_branch(ck.params, dims, rng);
  if (config.modules != ModuleSet::kBase) {
    init_interaction_unit(ck.params, dims, rng, kSalientUnit);
    init_interaction_unit(ck.params, dims, rng, kNonSalientUnit);
    if (!config.shared_head) init_classifier_head(ck.params, dims, rng, kPseudoPrefix);
  }
  return ck;
}

// ---- forward ----------------------------------------------------------------

SaliencyPartition select_salient(const Matrix& embedded, const Matrix& class_scores,
                                 const RunConfig& config, std::uint64_t random_stream) {
  switch (config.saliency.kind) {
    case SaliencyStrategy::Kind::kDifference: {
      const Eigen::VectorXd tau = diff_values(embedded, config.saliency.metric);
      return assign_labels(std::span<const double>(tau.data(), tau.size()),
                           config.salient_ratio, config.pair_mark);
    }
    case SaliencyStrategy::Kind::kRandom: {
      std::mt19937_64 rng(random_stream);
      return random_partition(embedded.rows(), config.salient_ratio, rng);
    }
    case SaliencyStrategy::Kind::kClassification: {
      const Eigen::VectorXd best = class_scores.rowwise().maxCoeff();
      return partition_by_score(std::span<const double>(best.data(), best.size()),
                                config.salient_ratio);
    }
  }
  throw ConfigError("unknown saliency strategy");
}

ForwardResult forward_video(const BoundParameters& p, const RunConfig& config,
                            const Matrix& features, const std::vector<std::uint8_t>& label,
                            const MemoryBank* memory, const ForwardOptions& options) {
  ad::Tape& tape = p.tape();
  const ClsWeights weights{config.theta_mil};
  ForwardResult r;

  Var x = tape.constant(features);
  r.embedded = embed(p, x);
  r.base = classify(p, r.embedded, config.pool_divisor);
  r.loss_cls = loss_cls(r.base.scores, label, weights);
  r.loss_att = loss_att(r.base.attention);
  r.loss_kd = tape.scalar(0.0);

  if (options.joint && config.modules != ModuleSet::kBase) {
    const std::string prefix = head_prefix(config);
    r.partition = select_salient(r.embedded.value(), class_probs(r.base.tcam.value()),
                                 config, options.random_stream);
    const RefineConfig refine{config.sigma, config.fusion_mode, config.scaled_attention};
    Var refined = refine_boundaries(r.embedded, r.partition,
                                    InteractionUnit::bind(p, kSalientUnit),
                                    InteractionUnit::bind(p, kNonSalientUnit), refine);
    r.refined = classify(p, refined, config.pool_divisor, prefix);
    r.loss_cls = ad::add(r.loss_cls, loss_cls(r.refined.scores, label, weights));

    Var enhanced_tcam;
    if (config.modules == ModuleSet::kBaseBrmDem && memory != nullptr &&
        memory->num_classes() > 0) {
      const std::vector<int> classes = [&] {
        std::vector<int> out;
        for (std::size_t c = 0; c < label.size(); ++c) {
          if (label[c]) out.push_back(static_cast<int>(c));
        }
        return out;
      }();
      Var enhanced = memory_interact(refined, *memory, classes, config.scaled_attention);
      r.enhanced = classify(p, enhanced, config.pool_divisor, prefix);
      r.loss_cls = ad::add(r.loss_cls, loss_cls(r.enhanced.scores, label, weights));
      enhanced_tcam = r.enhanced.tcam;
    }
    auto log_probs = [](const HeadOutput& h) {
      return h.tcam.valid() ? attention_log_probs(h.tcam, h.attention_logit) : ad::Var{};
    };
    const bool by_tcam = config.pseudo_target == PseudoTarget::kTcam;
    if (options.fixed_pseudo_labels != nullptr) {
      r.pseudo_labels = *options.fixed_pseudo_labels;
    } else if (by_tcam) {
      r.pseudo_labels = pseudo_tcams(r.refined.tcam, enhanced_tcam);
    } else {
      r.pseudo_labels = pseudo_from_log_probs(log_probs(r.refined), log_probs(r.enhanced));
    }
    r.loss_kd = by_tcam ? loss_kd(r.base.tcam, r.pseudo_labels)
                        : loss_kd_log_probs(log_probs(r.base), r.pseudo_labels);
  }
  r.total = total_loss(r.loss_cls, r.loss_kd, r.loss_att, config.lambda_att);
  return r;
}

// ---- training ---------------------------------------------------------------

namespace {

struct VideoStep {
  ParameterSet grads;
  LossParts parts;
  double total = 0.0;
  // Memory candidates gathered from this video.
  std::vector<MemoryCandidate> candidates;
  std::vector<MemoryCandidate> all_snippets;
};

// Salient snippets of a video as candidates for each labelled class, scored
// by the class probability of the base TCAM.
void collect_candidates(const VideoRecord& v, const Matrix& embedded, const Matrix& probs,
                        const SaliencyPartition& partition,
                        std::vector<MemoryCandidate>& salient,
                        std::vector<MemoryCandidate>* everything) {
  for (int c : v.label_classes()) {
    for (Index t = 0; t < embedded.rows(); ++t) {
      MemoryCandidate cand{c, probs(t, c), v.id, t, embedded.row(t)};
      if (partition.labels[t]) salient.push_back(cand);
      if (everything) everything->push_back(std::move(cand));
    }
  }
}

VideoStep run_video(const Checkpoint& model, const VideoRecord& v, const MemoryBank* memory,
                    bool joint, std::uint64_t stream, bool want_candidates) {
  ad::Tape tape;
  BoundParameters bound(tape, model.params);
  ForwardOptions opts{joint, stream};
  ForwardResult r = forward_video(bound, model.config, to_double(v.features), v.label,
                                  memory, opts);
  tape.backward(r.total);
  VideoStep s;
  s.grads = bound.gradients();
  s.parts = LossParts{r.loss_cls.scalar(), r.loss_kd.scalar(), r.loss_att.scalar()};
  s.total = r.total.scalar();
  if (want_candidates) {
    const Matrix probs = class_probs(r.base.tcam.value());
    SaliencyPartition part = r.partition.size() == v.num_snippets()
                                 ? r.partition
                                 : select_salient(r.embedded.value(), probs, model.config,
                                                  stream);
    collect_candidates(v, r.embedded.value(), probs, part, s.candidates,
                       model.config.memory_mode == MemoryMode::kMomentumAll
                           ? &s.all_snippets
                           : nullptr);
  }
  return s;
}

MemoryBank build_memory(const Checkpoint& model, const Dataset& data, std::uint64_t epoch_seed) {
  std::vector<MemoryCandidate> cands;
  for (std::size_t i = 0; i < data.videos.size(); ++i) {
    const VideoRecord& v = data.videos[i];
    ad::Tape tape;
    BoundParameters bound(tape, model.params);
    Var e = embed(bound, tape.constant(to_double(v.features)));
    HeadOutput h = classify(bound, e, model.config.pool_divisor);
    const Matrix probs = class_probs(h.tcam.value());
    const SaliencyPartition part =
        select_salient(e.value(), probs, model.config, mix(epoch_seed, i));
    collect_candidates(v, e.value(), probs, part, cands, nullptr);
  }
  return init_memory(model.dims.num_classes, model.config.memory_slots, model.dims.feature_dim,
                     std::move(cands));
}

void update_bank(MemoryBank& bank, const RunConfig& config, std::vector<MemoryCandidate> salient,
                 std::vector<MemoryCandidate> everything, double eta, std::mt19937_64& rng) {
  const Index N = bank.slots_per_class();
  for (int c = 0; c < bank.num_classes(); ++c) {
    std::vector<MemoryCandidate> pool;
    if (config.memory_mode == MemoryMode::kMomentumAll) {
      for (MemoryCandidate& m : everything) {
        if (m.class_index == c) pool.push_back(m);
      }
      // Selection ignores confidence: a seeded draw of N snippets.
      for (Index i = 0; i < std::min<Index>(N, pool.size()); ++i) {
        const auto span = static_cast<std::uint64_t>(pool.size() - i);
        std::swap(pool[i], pool[i + static_cast<Index>(rng() % span)]);
      }
      pool.resize(std::min<std::size_t>(pool.size(), static_cast<std::size_t>(N)));
      std::stable_sort(pool.begin(), pool.end(),
                       [](const MemoryCandidate& a, const MemoryCandidate& b) {
                         return a.score > b.score;
                       });
    } else {
      for (MemoryCandidate& m : salient) {
        if (m.class_index == c) pool.push_back(m);
      }
      sort_candidates(pool);
      pool.resize(std::min<std::size_t>(pool.size(), static_cast<std::size_t>(N)));
    }
    if (pool.empty()) continue;
    Matrix feats(static_cast<Index>(pool.size()), bank.feature_dim());
    std::vector<double> scores;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      feats.row(static_cast<Index>(i)) = pool[i].feature;
      scores.push_back(pool[i].score);
    }
    const double step = config.memory_mode == MemoryMode::kDirect ? 1.0 : eta;
    update_memory(bank, c, feats, scores, step);
  }
}

}  // namespace

Checkpoint train(const Dataset& train_set, const RunConfig& config, const TrainOptions& options) {
  validate(config);
  validate(train_set);
  ModelDims dims{train_set.feature_dim, train_set.num_classes(), config.reduction};
  Checkpoint model = initialize_model(dims, config, train_set.class_names);
  if (config.epochs == 0 || train_set.videos.empty()) return model;

  const bool use_memory = config.modules == ModuleSet::kBaseBrmDem;
  const int warmup = config.modules == ModuleSet::kBase
                         ? config.epochs
                         : static_cast<int>(std::lround(config.warmup_fraction * config.epochs));
  const AdamConfig adam{config.lr, config.beta1, config.beta2, config.adam_eps};
  AdamState state;
  std::mt19937_64 order_rng(mix(config.seed, 0x0dde7));
  std::mt19937_64 memory_rng(mix(config.seed, 0x3e3));
  const auto n = static_cast<Index>(train_set.videos.size());
  const int threads = std::max(1, options.threads);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const bool joint = epoch >= warmup && config.modules != ModuleSet::kBase;
    if (joint && use_memory && model.memory.num_classes() == 0) {
      model.memory = build_memory(model, train_set, mix(config.seed, epoch));
    }
    const double eta = momentum_eta(config.eta0, epoch, config.epochs);

    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[i] = i;
    for (Index i = n - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<Index>(order_rng() % static_cast<std::uint64_t>(i + 1))]);
    }

    EpochLog log;
    log.epoch = epoch;
    log.eta = eta;
    log.joint = joint;
    int batches = 0;
    for (Index start = 0; start < n; start += config.batch_size) {
      const Index end = std::min<Index>(n, start + config.batch_size);
      const Index count = end - start;
      std::vector<VideoStep> steps(static_cast<std::size_t>(count));
      const MemoryBank* mem = joint && use_memory ? &model.memory : nullptr;
      auto work = [&](Index i) {
        const Index vi = order[start + i];
        steps[i] = run_video(model, train_set.videos[vi], mem, joint,
                             mix(mix(config.seed, epoch), vi), mem != nullptr);
      };
      if (threads == 1 || count == 1) {
        for (Index i = 0; i < count; ++i) work(i);
      } else {
        std::vector<std::thread> pool;
        const Index per = (count + threads - 1) / threads;
        for (Index lo = 0; lo < count; lo += per) {
          pool.emplace_back([&, lo] {
            for (Index i = lo; i < std::min(count, lo + per); ++i) work(i);
          });
        }
        for (std::thread& t : pool) t.join();
      }

      // Ordered reduction keeps results independent of the thread count.
      ParameterSet grads = steps[0].grads;
      LossParts parts = steps[0].parts;
      for (Index i = 1; i < count; ++i) {
        for (auto& [name, g] : grads) g += steps[i].grads.at(name);
        parts.cls += steps[i].parts.cls;
        parts.kd += steps[i].parts.kd;
        parts.att += steps[i].parts.att;
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& [name, g] : grads) g *= inv;
      parts.cls *= inv;
      parts.kd *= inv;
      parts.att *= inv;
      double total = 0.0;
      try {
        total = total_loss(parts, config.lambda_att);
        adam_step(model.params, grads, state, adam);
      } catch (const Error& e) {
        throw TrainingError("diverged at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batches) + ": " + e.what());
      }

      if (mem != nullptr) {
        std::vector<MemoryCandidate> salient;
        std::vector<MemoryCandidate> everything;
        for (VideoStep& s : steps) {
          std::move(s.candidates.begin(), s.candidates.end(), std::back_inserter(salient));
          std::move(s.all_snippets.begin(), s.all_snippets.end(), std::back_inserter(everything));
        }
        update_bank(model.memory, config, std::move(salient), std::move(everything), eta,
                    memory_rng);
      }

      log.loss_cls += parts.cls;
      log.loss_kd += parts.kd;
      log.loss_att += parts.att;
      log.total += total;
      ++batches;
    }
    log.loss_cls /= batches;
    log.loss_kd /= batches;
    log.loss_att /= batches;
    log.total /= batches;
    log.att_weighted = config.lambda_att * log.loss_att;
    if (options.on_epoch) options.on_epoch(log);
  }
  return model;
}

// ---- inference --------------------------------------------------------------

namespace {

// Per-snippet class evidence of one head, T x C, weighted by its attention.
Matrix head_activation(const HeadOutput& h, PseudoTarget target, Index C) {
  if (target == PseudoTarget::kAttention) {
    return attention_log_probs(h.tcam, h.attention_logit).value().leftCols(C).array().exp();
  }
  const Matrix probs = ad::softmax(h.tcam, 1).value();
  return probs.leftCols(C).array().colwise() * h.attention.value().col(0).array();
}

}  // namespace

VideoInference infer(const Checkpoint& ck, const VideoRecord& video) {
  if (video.features.cols() != ck.dims.feature_dim) {
    throw DimensionError("video '" + video.id + "' feature width differs from the model");
  }
  const RunConfig& cfg = ck.config;
  const Index C = ck.dims.num_classes;
  ad::Tape tape;
  BoundParameters bound(tape, ck.params);
  const Matrix features = to_double(video.features);
  Var e = embed(bound, tape.constant(features));
  HeadOutput h = classify(bound, e, cfg.pool_divisor);

  VideoInference out;
  out.tcam_probs = ad::softmax(h.tcam, 1).value();
  out.attention = h.attention.value().col(0);
  const Matrix ca = h.scores.ca.value();
  out.class_scores.assign(ca.data(), ca.data() + C);
  out.activation = head_activation(h, cfg.pseudo_target, C);
  if (cfg.inference_branch == InferenceBranch::kBase || cfg.modules == ModuleSet::kBase) {
    return out;
  }

  // Test-time labels are unknown: the memory classes are the predicted ones.
  std::vector<std::uint8_t> predicted(static_cast<std::size_t>(C), 0);
  for (Index c = 0; c < C; ++c) {
    predicted[c] = out.class_scores[c] >= cfg.memory_class_threshold ? 1 : 0;
  }
  if (std::find(predicted.begin(), predicted.end(), 1) == predicted.end()) {
    predicted[std::max_element(out.class_scores.begin(), out.class_scores.end()) -
              out.class_scores.begin()] = 1;
  }
  ForwardOptions opts;
  opts.joint = true;
  const ForwardResult r = forward_video(bound, cfg, features, predicted,
                                        ck.memory.num_classes() > 0 ? &ck.memory : nullptr,
                                        opts);
  int branches = 1;
  Eigen::VectorXd attention = out.attention;
  std::vector<double> scores = out.class_scores;
  for (const HeadOutput* b : {&r.refined, &r.enhanced}) {
    if (!b->tcam.valid()) continue;
    ++branches;
    out.activation += head_activation(*b, cfg.pseudo_target, C);
    attention += b->attention.value().col(0);
    const Matrix bs = b->scores.ca.value();
    for (Index c = 0; c < C; ++c) scores[c] += bs(0, c);
  }
  out.activation /= branches;
  out.attention = attention / branches;
  for (double& sc : scores) sc /= branches;
  out.class_scores = std::move(scores);
  return out;
}

std::vector<ActionProposal> localize(const Checkpoint& ck, const VideoRecord& video) {
  const VideoInference inf = infer(ck, video);
  return nms(generate_proposals(inf.activation, inf.class_scores, video.seconds_per_snippet,
                                ck.config.proposal_config(), video.id),
             ck.config.nms_iou);
}

Evaluation evaluate(const Checkpoint& ck, const Dataset& test_set) {
  Evaluation ev;
  for (const VideoRecord& v : test_set.videos) {
    std::vector<ActionProposal> p = localize(ck, v);
    ev.proposals.insert(ev.proposals.end(), p.begin(), p.end());
  }
  const std::vector<GroundTruth> gt = ground_truth_of(test_set);
  ev.report = mean_average_precision(ev.proposals, gt, test_set.class_names,
                                     ck.config.eval_thresholds(), ck.config.eval_ranges(),
                                     ck.config.include_empty_classes);
  return ev;
}

// ---- checkpoint I/O ---------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'W', 'S', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
void put(std::string& b, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  b.append(raw, sizeof(T));
}

template <typename T>
T take(std::string_view in, std::size_t& off) {
  if (off + sizeof(T) > in.size()) throw LoadError("checkpoint: truncated");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

std::string take_str(std::string_view in, std::size_t& off, std::size_t n) {
  if (off + n > in.size()) throw LoadError("checkpoint: truncated");
  std::string s(in.substr(off, n));
  off += n;
  return s;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string b;
  b.append(kCheckpointMagic, 4);
  put<std::uint16_t>(b, kCheckpointVersion);
  put<std::uint16_t>(b, 0);
  put<std::uint64_t>(b, ck.config_hash());
  const std::string cfg = serialize(ck.config);
  put<std::uint32_t>(b, static_cast<std::uint32_t>(cfg.size()));
  b += cfg;
  put<std::uint32_t>(b, static_cast<std::uint32_t>(ck.class_names.size()));
  for (const std::string& name : ck.class_names) {
    put<std::uint16_t>(b, static_cast<std::uint16_t>(name.size()));
    b += name;
  }
  put<std::uint32_t>(b, static_cast<std::uint32_t>(ck.dims.feature_dim));
  put<std::uint32_t>(b, static_cast<std::uint32_t>(ck.dims.reduction));
  put<std::uint32_t>(b, static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& [name, m] : ck.params) {
    put<std::uint16_t>(b, static_cast<std::uint16_t>(name.size()));
    b += name;
    put<std::uint32_t>(b, static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(b, static_cast<std::uint32_t>(m.cols()));
    b.append(reinterpret_cast<const char*>(m.data()),
             static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  write_memory(b, ck.memory);
  return b;
}

Checkpoint deserialize_checkpoint(std::string_view in) {
  std::size_t off = 0;
  if (in.size() < 4 || std::memcmp(in.data(), kCheckpointMagic, 4) != 0) {
    throw LoadError("checkpoint: bad magic");
  }
  off = 4;
  if (take<std::uint16_t>(in, off) != kCheckpointVersion) {
    throw LoadError("checkpoint: unsupported version");
  }
  take<std::uint16_t>(in, off);
  const auto hash = take<std::uint64_t>(in, off);
  Checkpoint ck;
  const auto cfg_len = take<std::uint32_t>(in, off);
  try {
    ck.config = parse_run_config(take_str(in, off, cfg_len));
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint: bad config: ") + e.what());
  }
  if (ck.config_hash() != hash) throw LoadError("checkpoint: config hash mismatch");
  const auto C = take<std::uint32_t>(in, off);
  for (std::uint32_t i = 0; i < C; ++i) {
    const auto len = take<std::uint16_t>(in, off);
    ck.class_names.push_back(take_str(in, off, len));
  }
  ck.dims.num_classes = C;
  ck.dims.feature_dim = take<std::uint32_t>(in, off);
  ck.dims.reduction = take<std::uint32_t>(in, off);
  const auto count = take<std::uint32_t>(in, off);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = take<std::uint16_t>(in, off);
    std::string name = take_str(in, off, len);
    const auto rows = take<std::uint32_t>(in, off);
    const auto cols = take<std::uint32_t>(in, off);
    Matrix m(rows, cols);
    const std::size_t bytes = std::size_t{rows} * cols * sizeof(double);
    if (off + bytes > in.size()) throw LoadError("checkpoint: truncated parameter " + name);
    std::memcpy(m.data(), in.data() + off, bytes);
    off += bytes;
    ck.params.emplace(std::move(name), std::move(m));
  }
  ck.memory = read_memory(in, off);
  if (off != in.size()) throw LoadError("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string() + ": cannot open checkpoint");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace wstal
