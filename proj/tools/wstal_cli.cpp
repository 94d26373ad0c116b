// Command-line front end: synth, train, eval, ablate, export-diff.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "wstal/ablation.hpp"
#include "wstal/config.hpp"
#include "wstal/dataset.hpp"
#include "wstal/errors.hpp"
#include "wstal/localization.hpp"
#include "wstal/pipeline.hpp"
#include "wstal/saliency.hpp"

namespace fs = std::filesystem;
using namespace wstal;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
  std::vector<std::string> overrides;  // key=value
};

RunConfig resolve_run_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  for (const std::string& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_option(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) cfg.seed = *g.seed;
  validate(cfg);
  return cfg;
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(g.out);
  return g.out;
}

int cmd_synth(const Globals& g) {
  SyntheticSpec spec = g.config.empty() ? SyntheticSpec{} : load_synthetic_spec(g.config);
  if (g.seed) spec.seed = *g.seed;
  try {
    validate(spec);
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  const fs::path out = require_out(g);
  const Dataset ds = generate_synthetic(spec);
  const fs::path manifest = write_dataset(ds, out);
  std::ofstream(out / "synthetic_spec.txt") << serialize(spec);
  std::cout << manifest.string() << '\n';
  return 0;
}

int cmd_train(const Globals& g, const std::string& data, const std::string& split) {
  const RunConfig cfg = resolve_run_config(g);
  const fs::path out = require_out(g);
  const Dataset all = load_dataset(data);
  const Dataset train_set = all.subset(split);
  const std::string hash = hex_hash(config_hash(cfg));

  const fs::path log_path = out / "train_log.csv";
  const bool fresh = !fs::exists(log_path);
  std::ofstream log(log_path, std::ios::app);
  if (fresh) log << "config_hash,epoch,loss_cls,loss_kd,loss_att,att_weighted,total,eta,phase\n";
  log << std::setprecision(17);

  TrainOptions opts;
  opts.threads = g.threads;
  opts.on_epoch = [&](const EpochLog& e) {
    log << hash << ',' << e.epoch << ',' << e.loss_cls << ',' << e.loss_kd << ','
        << e.loss_att << ',' << e.att_weighted << ',' << e.total << ',' << e.eta << ','
        << (e.joint ? "joint" : "warmup") << '\n';
  };
  std::cout << "training " << train_set.videos.size() << " videos, config " << hash << '\n';
  const Checkpoint ck = train(train_set, cfg, opts);
  save_checkpoint(out / "checkpoint.bin", ck);
  std::ofstream(out / "config.txt") << "# config_hash " << hash << '\n' << serialize(cfg);
  std::cout << "checkpoint " << (out / "checkpoint.bin").string() << '\n';
  return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& data,
             const std::string& split, const std::string& proposals_file) {
  const fs::path out = require_out(g);
  const Dataset all = load_dataset(data);
  const Dataset test_set = all.subset(split);

  RunConfig cfg;
  std::vector<ActionProposal> proposals;
  EvalReport report;
  if (!proposals_file.empty()) {
    cfg = resolve_run_config(g);
    proposals = read_proposals(proposals_file, test_set.class_names);
    report = mean_average_precision(proposals, ground_truth_of(test_set), test_set.class_names,
                                    cfg.eval_thresholds(), cfg.eval_ranges(),
                                    cfg.include_empty_classes);
  } else {
    if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint or --proposals");
    const Checkpoint ck = load_checkpoint(checkpoint);
    if (ck.class_names != test_set.class_names) {
      throw Error("checkpoint classes differ from the dataset");
    }
    cfg = ck.config;
    Evaluation ev = evaluate(ck, test_set);
    proposals = std::move(ev.proposals);
    report = std::move(ev.report);
  }
  const std::string hash = hex_hash(config_hash(cfg));

  std::ofstream prop_out(out / "proposals.txt");
  write_proposals(prop_out, proposals, test_set.class_names);
  std::ofstream table(out / "report.txt");
  table << "# config_hash " << hash << '\n';
  write_report_table(table, report);
  std::ofstream csv(out / "report.csv");
  write_report_csv(csv, report);

  std::cout << "config " << hash << '\n';
  write_report_table(std::cout, report);
  return 0;
}

int cmd_ablate(const Globals& g, const std::string& grid_file, int table,
               const std::string& data, bool dry_run) {
  const RunConfig base = resolve_run_config(g);
  AblationGrid grid;
  if (table != 0) {
    grid = table_grid(table);
  } else if (!grid_file.empty()) {
    grid = load_grid(grid_file);
  } else {
    throw ConfigError("ablate needs --grid or --table");
  }
  std::cout << "grid cells: " << grid.size() << '\n';
  const fs::path out = require_out(g);
  if (dry_run) {
    std::ofstream summary(out / "summary.csv");
    write_ablation_summary(summary, {});
    return 0;
  }
  std::vector<AblationRow> rows;
  if (grid.size() > 0) {
    const Dataset all = load_dataset(data);
    AblationOptions opts;
    opts.threads = g.threads;
    opts.out_dir = out;
    opts.on_row = [](const AblationRow& r) {
      std::cout << std::fixed << std::setprecision(1) << r.label << ": AVG(0.1:0.7) "
                << 100.0 * r.report.average("AVG(0.1:0.7)") << '\n';
      std::cout.unsetf(std::ios::fixed);
    };
    rows = run_ablation(grid, base, all.subset("train"), all.subset("test"), opts);
  }
  std::ofstream summary(out / "summary.csv");
  write_ablation_summary(summary, rows);
  write_ablation_summary(std::cout, rows);
  return 0;
}

int cmd_export_diff(const Globals& g, const std::string& data, const std::string& checkpoint,
                    const std::string& video_id) {
  const RunConfig cfg = resolve_run_config(g);
  const Dataset all = load_dataset(data);
  const VideoRecord* v = all.find(video_id);
  if (v == nullptr) throw ConfigError("no video '" + video_id + "' in " + data);

  std::optional<VideoInference> inf;
  if (!checkpoint.empty()) inf = infer(load_checkpoint(checkpoint), *v);
  const DiffMetric metric = cfg.saliency.kind == SaliencyStrategy::Kind::kDifference
                                ? cfg.saliency.metric
                                : DiffMetric::kL1;
  const Eigen::VectorXd tau = diff_values(v->features.cast<double>(), metric);

  std::vector<std::uint8_t> gt(static_cast<std::size_t>(v->num_snippets()), 0);
  for (const GtSegment& s : v->gt_segments) {
    for (Index t = 0; t < v->num_snippets(); ++t) {
      const double mid = (static_cast<double>(t) + 0.5) * v->seconds_per_snippet;
      if (mid >= s.start && mid < s.end) gt[t] = 1;
    }
  }

  std::ostringstream csv;
  csv << "pair_index,tau,snippet_index,action_score,gt_flag\n" << std::setprecision(9);
  for (Index i = 0; i < tau.size(); ++i) {
    const Index t = i + 1;
    csv << i << ',' << tau(i) << ',' << t << ',';
    if (inf) csv << inf->activation.row(t).maxCoeff();
    csv << ',' << int{gt[t]} << '\n';
  }
  if (g.out.empty()) {
    std::cout << csv.str();
  } else {
    fs::path path(g.out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream(path) << "# config_hash " << hex_hash(config_hash(cfg)) << '\n' << csv.str();
    std::cout << path.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly-supervised temporal action localization from snippet features"};
  app.require_subcommand(0, 1);
  Globals g;
  bool print_defaults = false;
  app.add_option("--config", g.config, "config file (run config, or synthetic spec for synth)");
  app.add_option("--seed", g.seed, "override the seed");
  app.add_option("--out", g.out, "output directory (file for export-diff)");
  app.add_option("--threads", g.threads, "worker threads for per-video work")
      ->check(CLI::PositiveNumber);
  app.add_option("--set", g.overrides, "override a config key: key=value (repeatable)");
  app.add_flag("--print-defaults", print_defaults, "print default run config and synthetic spec");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->fallthrough();

  std::string data;
  std::string split = "train";
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--data", data, "dataset manifest")->required();
  train_cmd->add_option("--split", split, "split to train on");
  train_cmd->fallthrough();

  std::string checkpoint;
  std::string eval_split = "test";
  std::string proposals_file;
  auto* eval_cmd = app.add_subcommand("eval", "localize and score a split");
  eval_cmd->add_option("--checkpoint", checkpoint, "trained checkpoint");
  eval_cmd->add_option("--data", data, "dataset manifest")->required();
  eval_cmd->add_option("--split", eval_split, "split to evaluate");
  eval_cmd->add_option("--proposals", proposals_file, "score an existing proposals file");
  eval_cmd->fallthrough();

  std::string grid_file;
  int table = 0;
  bool dry_run = false;
  auto* ablate = app.add_subcommand("ablate", "sweep a parameter grid");
  ablate->add_option("--grid", grid_file, "grid file: key = v1, v2, ...");
  ablate->add_option("--table", table, "preset row structure (3, 4, 5 or 6)");
  ablate->add_option("--data", data, "dataset manifest");
  ablate->add_flag("--dry-run", dry_run, "report the grid size and stop");
  ablate->fallthrough();

  std::string video_id;
  auto* export_diff = app.add_subcommand("export-diff", "per-pair differences and action scores");
  export_diff->add_option("--data", data, "dataset manifest")->required();
  export_diff->add_option("--video", video_id, "video id")->required();
  export_diff->add_option("--checkpoint", checkpoint, "checkpoint for action scores");
  export_diff->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (print_defaults) {
      std::cout << "# run config\n" << serialize(RunConfig{}) << "\n# synthetic spec\n"
                << serialize(SyntheticSpec{});
      return 0;
    }
    if (*synth) return cmd_synth(g);
    if (*train_cmd) return cmd_train(g, data, split);
    if (*eval_cmd) return cmd_eval(g, checkpoint, data, eval_split, proposals_file);
    if (*ablate) {
      if (!dry_run && data.empty() && table == 0 && grid_file.empty()) {
        throw ConfigError("ablate needs --data");
      }
      return cmd_ablate(g, grid_file, table, data, dry_run);
    }
    if (*export_diff) return cmd_export_diff(g, data, checkpoint, video_id);
    std::cout << app.help();
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
