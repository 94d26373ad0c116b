#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wstal/config.hpp"
#include "wstal/dataset.hpp"
#include "wstal/errors.hpp"
#include "wstal/pipeline.hpp"

namespace wstal {
namespace {

namespace fs = std::filesystem;

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.num_classes = 2;
  s.feature_dim = 16;
  s.train_videos_per_class = 4;
  s.test_videos_per_class = 2;
  return s;
}

RunConfig small_run(ModuleSet modules = ModuleSet::kBaseBrmDem) {
  RunConfig c;
  c.epochs = 4;
  c.warmup_fraction = 0.5;
  c.lr = 1e-3;
  c.batch_size = 3;
  c.memory_slots = 2;
  c.modules = modules;
  return c;
}

const Dataset& small_data() {
  static const Dataset ds = generate_synthetic(small_spec());
  return ds;
}

TEST(Train, ZeroEpochsReturnsInitialisation) {
  RunConfig c = small_run();
  c.epochs = 0;
  const Dataset train_set = small_data().subset("train");
  const Checkpoint ck = train(train_set, c);
  const Checkpoint init = initialize_model(
      ModelDims{train_set.feature_dim, train_set.num_classes(), c.reduction}, c,
      train_set.class_names);
  EXPECT_EQ(serialize_checkpoint(ck), serialize_checkpoint(init));
  EXPECT_EQ(ck.memory.num_classes(), 0);
}

TEST(Train, LogDecomposesAndPhasesSwitch) {
  const RunConfig c = small_run();
  std::vector<EpochLog> logs;
  TrainOptions opts;
  opts.on_epoch = [&](const EpochLog& e) { logs.push_back(e); };
  const Checkpoint ck = train(small_data().subset("train"), c, opts);
  ASSERT_EQ(logs.size(), 4u);
  for (const EpochLog& e : logs) {
    EXPECT_EQ(e.joint, e.epoch >= 2) << e.epoch;
    EXPECT_NEAR(e.att_weighted, c.lambda_att * e.loss_att, 1e-12);
    EXPECT_NEAR(e.total, e.loss_cls + e.loss_kd + e.att_weighted, 1e-12);
    EXPECT_TRUE(std::isfinite(e.total));
    if (!e.joint) EXPECT_EQ(e.loss_kd, 0.0);
  }
  EXPECT_EQ(ck.memory.num_classes(), 2);
  EXPECT_EQ(ck.memory.slots_per_class(), 2);
}

TEST(Train, BaseOnlyLossDecreases) {
  RunConfig c = small_run(ModuleSet::kBase);
  c.epochs = 30;
  std::vector<double> totals;
  TrainOptions opts;
  opts.on_epoch = [&](const EpochLog& e) { totals.push_back(e.total); };
  train(small_data().subset("train"), c, opts);
  EXPECT_LT(totals.back(), totals.front());
}

TEST(Train, DeterministicAcrossRunsAndThreadCounts) {
  const RunConfig c = small_run();
  const Dataset train_set = small_data().subset("train");
  const std::string a = serialize_checkpoint(train(train_set, c));
  const std::string b = serialize_checkpoint(train(train_set, c));
  TrainOptions threaded;
  threaded.threads = 3;
  const std::string d = serialize_checkpoint(train(train_set, c, threaded));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, d);
  RunConfig other = c;
  other.seed = 1;
  EXPECT_NE(a, serialize_checkpoint(train(train_set, other)));
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const Checkpoint ck = train(small_data().subset("train"), small_run());
  const std::string bytes = serialize_checkpoint(ck);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.config_hash(), ck.config_hash());
  EXPECT_EQ(back.memory, ck.memory);

  const fs::path path = fs::temp_directory_path() / "wstal_test_checkpoint.bin";
  save_checkpoint(path, ck);
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(path)), bytes);

  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), LoadError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), LoadError);
  EXPECT_THROW(load_checkpoint("/nonexistent/checkpoint.bin"), LoadError);
}

TEST(Train, PseudoLabelsRecoverPlantedClassesWithoutNoise) {
  SyntheticSpec spec = small_spec();
  spec.noise_sigma = 0.0;
  const Dataset train_set = generate_synthetic(spec).subset("train");
  RunConfig c = small_run();
  c.epochs = 30;
  const Checkpoint ck = train(train_set, c);
  int hits = 0;
  int total = 0;
  for (const VideoRecord& v : train_set.videos) {
    ad::Tape tape;
    BoundParameters bound(tape, ck.params);
    const ForwardResult r = forward_video(bound, ck.config, v.features.cast<double>(), v.label,
                                          &ck.memory, ForwardOptions{});
    ASSERT_EQ(r.pseudo_labels.rows(), v.num_snippets());
    for (const GtSegment& g : v.gt_segments) {
      for (Index t = 0; t < v.num_snippets(); ++t) {
        const double mid = (static_cast<double>(t) + 0.5) * v.seconds_per_snippet;
        if (mid < g.start || mid >= g.end) continue;
        Index best = 0;
        r.pseudo_labels.row(t).maxCoeff(&best);
        hits += best == g.class_index ? 1 : 0;
        ++total;
      }
    }
  }
  ASSERT_GT(total, 0);
  EXPECT_GE(static_cast<double>(hits) / total, 0.9) << hits << " / " << total;
}

TEST(Inference, ShapesAndDistributions) {
  const Checkpoint ck = train(small_data().subset("train"), small_run());
  for (InferenceBranch branch : {InferenceBranch::kBase, InferenceBranch::kFused}) {
    Checkpoint model = ck;
    model.config.inference_branch = branch;
    const VideoRecord& v = small_data().subset("test").videos.front();
    const VideoInference inf = infer(model, v);
    const Index T = v.num_snippets();
    EXPECT_EQ(inf.tcam_probs.rows(), T);
    EXPECT_EQ(inf.tcam_probs.cols(), 3);
    EXPECT_LT((inf.tcam_probs.rowwise().sum().array() - 1).abs().maxCoeff(), 1e-9);
    EXPECT_EQ(inf.attention.size(), T);
    EXPECT_EQ(inf.class_scores.size(), 2u);
    EXPECT_EQ(inf.activation.rows(), T);
    EXPECT_EQ(inf.activation.cols(), 2);
  }
  const Evaluation ev = evaluate(ck, small_data().subset("test"));
  for (double m : ev.report.map) {
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 1.0);
  }
}

// ---- command line ---------------------------------------------------------

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const char* cli = std::getenv("WSTAL_CLI");
    if (cli == nullptr) GTEST_SKIP() << "WSTAL_CLI not set";
    cli_ = cli;
    dir_ = fs::temp_directory_path() / "wstal_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  int run(const std::string& args) {
    const std::string cmd = "\"" + cli_ + "\" " + args + " > \"" +
                            (dir_ / "stdout.txt").string() + "\" 2> \"" +
                            (dir_ / "stderr.txt").string() + "\"";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string read(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path synth() {
    std::ofstream(dir_ / "spec.txt") << serialize(small_spec());
    EXPECT_EQ(run("--config " + (dir_ / "spec.txt").string() + " --out " +
                  (dir_ / "data").string() + " synth"),
              0);
    return dir_ / "data" / "manifest.txt";
  }

  std::string cli_;
  fs::path dir_;
};

TEST_F(Cli, PrintDefaultsAndUsageErrors) {
  EXPECT_EQ(run("--print-defaults"), 0);
  const std::string out = read(dir_ / "stdout.txt");
  EXPECT_NE(out.find("sigma = 0.88"), std::string::npos);
  EXPECT_NE(out.find("# synthetic spec"), std::string::npos);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("--set colour=red --out " + (dir_ / "x").string() + " ablate --table 4 --dry-run"),
            1);
}

TEST_F(Cli, InvalidSpecExitsOne) {
  std::ofstream(dir_ / "bad_spec.txt") << "min_snippets = 50\nmax_snippets = 40\n";
  EXPECT_EQ(run("--config " + (dir_ / "bad_spec.txt").string() + " --out " +
                (dir_ / "d").string() + " synth"),
            1);
  EXPECT_NE(read(dir_ / "stderr.txt").find("error:"), std::string::npos);
}

TEST_F(Cli, MissingCheckpointExitsTwo) {
  const fs::path manifest = synth();
  EXPECT_EQ(run("--out " + (dir_ / "eval").string() + " eval --checkpoint " +
                (dir_ / "none.bin").string() + " --data " + manifest.string()),
            2);
}

TEST_F(Cli, OracleProposalsScorePerfectly) {
  const fs::path manifest = synth();
  const Dataset test_set = load_dataset(manifest).subset("test");
  {
    std::ofstream out(dir_ / "oracle.txt");
    for (const VideoRecord& v : test_set.videos) {
      for (const GtSegment& g : v.gt_segments) {
        out << v.id << ' ' << test_set.class_names[g.class_index] << ' ' << g.start << ' '
            << g.end << " 1.0\n";
      }
    }
  }
  ASSERT_EQ(run("--out " + (dir_ / "eval").string() + " eval --proposals " +
                (dir_ / "oracle.txt").string() + " --data " + manifest.string()),
            0);
  std::istringstream csv(read(dir_ / "eval" / "report.csv"));
  std::string header, map_row;
  std::getline(csv, header);
  std::getline(csv, map_row);
  EXPECT_EQ(map_row,
            "mAP,1.000000,1.000000,1.000000,1.000000,1.000000,1.000000,1.000000,1.000000,"
            "1.000000,1.000000");
}

TEST_F(Cli, TrainEvalAndExportDiff) {
  const fs::path manifest = synth();
  const std::string train_args = "--set epochs=2 --set batch_size=4 --out " +
                                 (dir_ / "run").string() + " train --data " +
                                 manifest.string();
  ASSERT_EQ(run(train_args), 0);
  const std::string log = read(dir_ / "run" / "train_log.csv");
  EXPECT_EQ(log.substr(0, log.find('\n')),
            "config_hash,epoch,loss_cls,loss_kd,loss_att,att_weighted,total,eta,phase");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);

  ASSERT_EQ(run("--out " + (dir_ / "eval").string() + " eval --checkpoint " +
                (dir_ / "run" / "checkpoint.bin").string() + " --data " + manifest.string()),
            0);
  EXPECT_TRUE(fs::exists(dir_ / "eval" / "proposals.txt"));
  EXPECT_EQ(read(dir_ / "eval" / "report.txt").rfind("# config_hash ", 0), 0u);

  const Dataset ds = load_dataset(manifest);
  const VideoRecord& v = ds.videos.front();
  ASSERT_EQ(run("--out " + (dir_ / "diff.csv").string() + " export-diff --data " +
                manifest.string() + " --video " + v.id + " --checkpoint " +
                (dir_ / "run" / "checkpoint.bin").string()),
            0);
  std::istringstream diff(read(dir_ / "diff.csv"));
  std::string line;
  std::getline(diff, line);
  EXPECT_EQ(line.rfind("# config_hash ", 0), 0u);
  std::getline(diff, line);
  EXPECT_EQ(line, "pair_index,tau,snippet_index,action_score,gt_flag");
  Index rows = 0;
  while (std::getline(diff, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);
    ++rows;
  }
  EXPECT_EQ(rows, v.num_snippets() - 1);
  EXPECT_EQ(run("export-diff --data " + manifest.string() + " --video nope"), 1);
}

TEST_F(Cli, DryRunWithEmptyGridWritesHeaderOnly) {
  std::ofstream(dir_ / "grid.txt") << "# empty\n";
  ASSERT_EQ(run("--out " + (dir_ / "abl").string() + " ablate --grid " +
                (dir_ / "grid.txt").string() + " --dry-run"),
            0);
  EXPECT_NE(read(dir_ / "stdout.txt").find("grid cells: 0"), std::string::npos);
  EXPECT_EQ(read(dir_ / "abl" / "summary.csv"), "method,0.1,0.3,0.5,0.7,AVG\n");
  ASSERT_EQ(run("--out " + (dir_ / "abl").string() + " ablate --table 5 --dry-run"), 0);
  EXPECT_NE(read(dir_ / "stdout.txt").find("grid cells: 6"), std::string::npos);
}

}  // namespace
}  // namespace wstal
