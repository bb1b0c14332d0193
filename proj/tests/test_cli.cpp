// The avsal binary: exit codes, output layout and replay.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "avsal_test_cli";
const std::string kTiny =
    " --config " AVSAL_CONFIG_DIR "/ci.cfg --set data.train_samples=2 --set data.val_samples=2"
    " --set data.frames=4 --set model.base_channels=4 --set model.fused_channels=4"
    " --set model.audio_dim=8 --set model.decoder_min_channels=2 --set train.epochs=1 --set train.patience=1";

int run(const std::string& args) {
  const std::string cmd = std::string(AVSAL_CLI) + " " + args + " > " + (kRoot / "last.log").string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string out(const std::string& name) { return (kRoot / name).string(); }

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

}  // namespace

TEST_F(Cli, UsageErrorsExitWithConfigCode) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("train"), 2);
  EXPECT_EQ(run("train" + kTiny + " --precision f16"), 2);
  EXPECT_EQ(run("train" + kTiny + " --set model.decoder=hourglass"), 2);
  EXPECT_EQ(run("train" + kTiny + " --set bogus"), 2);
  EXPECT_EQ(run("ablate" + kTiny + " --axis colour"), 2);
  EXPECT_EQ(run("gradcheck --filter no_such_case"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, MissingOrCorruptFilesExitWithIoCode) {
  EXPECT_EQ(run("train --config " + out("absent.cfg")), 4);
  std::ofstream(out("junk.bin")) << "junk";
  EXPECT_EQ(run("eval --checkpoint " + out("junk.bin")), 4);
  EXPECT_EQ(run("replay --manifest " + out("absent.json")), 4);
}

TEST_F(Cli, TrainEvalPredictAndReplay) {
  ASSERT_EQ(run("train" + kTiny + " --out-dir " + out("tr")), 0) << slurp(out("last.log"));
  for (const char* f : {"checkpoint.bin", "history.json", "history.csv", "config.cfg", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(kRoot / "tr" / f)) << f;
  }
  const auto m = nlohmann::json::parse(slurp(kRoot / "tr" / "manifest.json"));
  EXPECT_EQ(m["command"], "train");
  EXPECT_EQ(m["precision"], "f64");
  EXPECT_FALSE(m["config"].get<std::string>().empty());
  EXPECT_TRUE(m.contains("code_version"));

  ASSERT_EQ(run("eval --checkpoint " + out("tr/checkpoint.bin") + " --out-dir " + out("ev")), 0);
  const auto metrics = nlohmann::json::parse(slurp(kRoot / "ev" / "metrics.json"));
  EXPECT_TRUE(metrics.contains("mean"));
  EXPECT_TRUE(fs::exists(kRoot / "ev" / "metrics.csv"));
  EXPECT_EQ(run("eval --checkpoint " + out("tr/checkpoint.bin") + " --predictor psychic --out-dir " + out("ev2")), 2);

  ASSERT_EQ(run("generate" + kTiny + " --split val --out-dir " + out("corpus")), 0);
  const auto clip = out("corpus/val/sample_0000");
  ASSERT_EQ(run("predict --checkpoint " + out("tr/checkpoint.bin") + " --clip " + clip + " --audio " + clip +
                "/audio.wav --format png --overlay --out-dir " + out("pr")),
            0)
      << slurp(out("last.log"));
  EXPECT_TRUE(fs::exists(kRoot / "pr" / "saliency.png"));
  EXPECT_TRUE(fs::exists(kRoot / "pr" / "overlay.png"));
  EXPECT_EQ(run("predict --checkpoint " + out("tr/checkpoint.bin") + " --clip " + clip + " --out-dir " + out("p2")), 2);
  EXPECT_EQ(run("predict --checkpoint " + out("tr/checkpoint.bin") + " --clip " + out("tr") + " --no-audio"), 4);
  ASSERT_EQ(run("eval --checkpoint " + out("tr/checkpoint.bin") + " --data " + out("corpus/val") + " --out-dir " +
                out("ev3")),
            0);

  ASSERT_EQ(run("replay --manifest " + out("tr/manifest.json") + " --out-dir " + out("tr_replay")), 0)
      << slurp(out("last.log"));
  EXPECT_EQ(slurp(kRoot / "tr" / "checkpoint.bin"), slurp(kRoot / "tr_replay" / "checkpoint.bin"));
  EXPECT_EQ(run("replay --manifest " + out("pr/manifest.json") + " --out-dir " + out("pr_replay")), 0);

  // A tampered output is reported as a mismatch.
  std::ofstream(kRoot / "ev" / "metrics.csv", std::ios::app) << "x";
  EXPECT_EQ(run("replay --manifest " + out("ev/manifest.json") + " --out-dir " + out("ev_replay")), 3);
}

TEST_F(Cli, OutputRootComesFromTheEnvironment) {
  const auto root = kRoot / "env_root";
  ASSERT_EQ(setenv("AVSAL_OUTPUT_ROOT", root.c_str(), 1), 0);
  EXPECT_EQ(run("gradcheck --filter loss_cc --seeds 1"), 0);
  unsetenv("AVSAL_OUTPUT_ROOT");
  bool found = false;
  for (const auto& e : fs::recursive_directory_iterator(root)) found = found || e.path().filename() == "gradcheck.json";
  EXPECT_TRUE(found);
}

TEST_F(Cli, DivergedTrainingExitsWithNumericCode) {
  EXPECT_EQ(run("train" + kTiny + " --precision f32 --set train.lr=1e30 --set train.epochs=2 --out-dir " + out("nan")), 3)
      << slurp(out("last.log"));
}
