// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "stgd/cli.hpp"
#include "stgd/dataset.hpp"
#include "stgd/io.hpp"

namespace stgd::cli {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("stgd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  std::string dir(const std::string& name) const { return (root_ / name).string(); }

  /// Short training config for a tiny model.
  std::string tiny_train_config() const {
    const std::string path = dir("tiny.cfg");
    io::write_file_atomic(path,
                          "epochs=2\ndiffusion_steps=5\ndataset_count=2\ndataset_dancers=2\n"
                          "dataset_frames=12\nmodel.d_model=8\nmodel.heads=2\nmodel.decoder_layers=2\n"
                          "model.gcn_layers=1\nmodel.window=4\nmodel.film_dim=4\nmodel.time_dim=4\n");
    return path;
  }

  fs::path root_;
};

TEST_F(CliTest, GenDataShortPresetShape) {
  const Outcome r = invoke({"gen-data", "--preset", "short", "--style", "circle", "--seed", "7", "--out", dir("a")});
  ASSERT_EQ(r.code, kOk) << r.err;
  const data::MotionSample s = data::load_motion(dir("a") + "/motion.stgd");
  EXPECT_EQ(s.n_dancers(), 3u);
  EXPECT_EQ(s.length(), 120u);
  EXPECT_NE(r.out.find("clearance"), std::string::npos);
}

TEST_F(CliTest, GenDataIsReproducible) {
  for (const char* d : {"a", "b"})
    ASSERT_EQ(invoke({"gen-data", "--preset", "short", "--seed", "7", "--out", dir(d)}).code, kOk);
  EXPECT_EQ(io::read_file(dir("a") + "/motion.stgd"), io::read_file(dir("b") + "/motion.stgd"));
  EXPECT_EQ(io::read_file(dir("a") + "/manifest.txt"), io::read_file(dir("b") + "/manifest.txt"));
}

TEST_F(CliTest, UnknownStyleIsUsageError) {
  const Outcome r = invoke({"gen-data", "--style", "waltz", "--out", dir("a")});
  EXPECT_EQ(r.code, kUsage);
  for (const std::string& name : data::style_names()) EXPECT_NE(r.err.find(name), std::string::npos) << r.err;
}

TEST_F(CliTest, UnknownKeyAndUnknownFlagAreUsageErrors) {
  EXPECT_EQ(invoke({"gen-data", "--set", "dancerz=3", "--out", dir("a")}).code, kUsage);
  EXPECT_EQ(invoke({"gen-data", "--bogus"}).code, kUsage);
  EXPECT_EQ(invoke({"no-such-command"}).code, kUsage);
}

TEST_F(CliTest, MissingConfigFileIsIoError) {
  EXPECT_EQ(invoke({"gen-data", "--config", dir("missing.cfg"), "--out", dir("a")}).code, kIo);
}

TEST_F(CliTest, TrainManifestReproducesConfig) {
  const Outcome r = invoke({"train", "--config", tiny_train_config(), "--seed", "3", "--out", dir("a")});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("ratio"), std::string::npos);
  const std::string manifest = io::read_file(dir("a") + "/manifest.txt");
  ASSERT_EQ(invoke({"train", "--config", dir("a") + "/manifest.txt", "--out", dir("b")}).code, kOk);
  EXPECT_EQ(io::read_file(dir("b") + "/manifest.txt"), manifest);
  EXPECT_EQ(io::read_file(dir("b") + "/model.ckpt"), io::read_file(dir("a") + "/model.ckpt"));
  EXPECT_EQ(io::read_file(dir("b") + "/loss.csv"), io::read_file(dir("a") + "/loss.csv"));
}

TEST_F(CliTest, ResumeContinuesStepCounter) {
  const std::string cfg = tiny_train_config();
  ASSERT_EQ(invoke({"train", "--config", cfg, "--out", dir("a")}).code, kOk);
  const Outcome r = invoke({"train", "--config", cfg, "--epochs", "4", "--resume", dir("a") + "/model.ckpt", "--out", dir("b")});
  ASSERT_EQ(r.code, kOk) << r.err;
  const std::string csv = io::read_file(dir("b") + "/loss.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  ASSERT_EQ(invoke({"train", "--config", cfg, "--epochs", "4", "--out", dir("c")}).code, kOk);
  EXPECT_EQ(io::read_file(dir("c") + "/model.ckpt"), io::read_file(dir("b") + "/model.ckpt"));
}

TEST_F(CliTest, ResumeWithDifferentModelIsArtifactMismatch) {
  const std::string cfg = tiny_train_config();
  ASSERT_EQ(invoke({"train", "--config", cfg, "--out", dir("a")}).code, kOk);
  EXPECT_EQ(invoke({"train", "--config", cfg, "--set", "model.d_model=16", "--epochs", "4", "--resume",
                    dir("a") + "/model.ckpt", "--out", dir("b")})
                .code,
            kArtifactMismatch);
}

TEST_F(CliTest, DivergenceExitCode) {
  const Outcome r = invoke({"train", "--config", tiny_train_config(), "--lr", "1e300", "--out", dir("a")});
  EXPECT_EQ(r.code, kDivergence);
  EXPECT_NE(r.err.find("step"), std::string::npos) << r.err;
}

TEST_F(CliTest, GenerateShapesSeedsAndMetrics) {
  ASSERT_EQ(invoke({"train", "--config", tiny_train_config(), "--out", dir("m")}).code, kOk);
  const std::string ckpt = dir("m") + "/model.ckpt";
  const Outcome r = invoke({"generate", "--checkpoint", ckpt, "--frames", "40", "--dancers", "3", "--samples", "2",
                        "--metrics", "--out", dir("g")});
  ASSERT_EQ(r.code, kOk) << r.err;
  const data::MotionSample s = data::load_motion(dir("g") + "/motion.stgd");
  EXPECT_EQ(s.n_dancers(), 3u);
  EXPECT_EQ(s.length(), 40u);
  const std::string report = io::read_file(dir("g") + "/metrics.json");
  EXPECT_NE(report.find("diversity"), std::string::npos);

  for (const char* steps : {"5", "50"}) {
    const std::string out = dir(std::string("s") + steps);
    ASSERT_EQ(invoke({"generate", "--checkpoint", ckpt, "--frames", "16", "--steps", steps, "--out", out}).code, kOk);
    EXPECT_EQ(data::load_motion(out + "/motion.stgd").length(), 16u);
  }
  ASSERT_EQ(invoke({"generate", "--checkpoint", ckpt, "--frames", "40", "--dancers", "3", "--samples", "2",
                    "--metrics", "--out", dir("h")})
                .code,
            kOk);
  EXPECT_EQ(io::read_file(dir("h") + "/motion.stgd"), io::read_file(dir("g") + "/motion.stgd"));
}

TEST_F(CliTest, GenerateMismatchAndMissingCheckpoint) {
  ASSERT_EQ(invoke({"train", "--config", tiny_train_config(), "--out", dir("m")}).code, kOk);
  EXPECT_EQ(invoke({"generate", "--checkpoint", dir("m") + "/model.ckpt", "--dancers", "99", "--out", dir("g")}).code,
            kArtifactMismatch);
  EXPECT_EQ(invoke({"generate", "--checkpoint", dir("nope.ckpt"), "--out", dir("g")}).code, kIo);
}

TEST_F(CliTest, MetricsReportsProxy) {
  ASSERT_EQ(invoke({"gen-data", "--style", "crossover", "--out", dir("a")}).code, kOk);
  const Outcome r = invoke({"metrics", "--input", dir("a") + "/motion.stgd", "--out", dir("b")});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("proxy"), std::string::npos);
}

TEST_F(CliTest, ValidatePassesAndNamesPerturbedBlock) {
  const Outcome ok = invoke({"validate", "--out", dir("a")});
  EXPECT_EQ(ok.code, kOk) << ok.out << ok.err;
  EXPECT_NE(ok.out.find("gradcheck/coverage"), std::string::npos);
  EXPECT_NE(ok.out.find("gradcheck/end_to_end"), std::string::npos);
  const Outcome bad = invoke({"validate", "--perturb-block", "film", "--out", dir("b")});
  EXPECT_EQ(bad.code, kValidationFailed);
  EXPECT_NE(bad.err.find("film"), std::string::npos) << bad.err;
}

TEST_F(CliTest, BenchRejectsTooFewRepetitions) {
  EXPECT_NE(invoke({"bench", "--kernel", "ldt", "--grid", "8,16,32,64", "--reps", "2", "--out", dir("a")}).code, kOk);
}

}  // namespace
}  // namespace stgd::cli
