#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dfcn/tensor.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "dfcn_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result run(const std::string& args) {
  const auto log = work_dir() / "last_output.txt";
  const std::string cmd = std::string(DFCN_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinyConfig = R"({
  "network": {"kernels_per_layer": 4, "num_dilated_layers": 3, "head_widths": [8]},
  "stop": {"max_epochs": 2},
  "seed": 5
})";

fs::path tiny_dataset() {
  const auto dir = work_dir() / "data";
  if (!fs::exists(dir / "manifest.json")) {
    const auto r = run("synth --seed 3 --count 4 --size 20 --regions 4 --out " + dir.string());
    EXPECT_EQ(r.code, 0) << r.output;
  }
  return dir / "manifest.json";
}

TEST(Cli, InspectReportsDefaultArchitecture) {
  const auto r = run("inspect");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("receptive field:      287 x 287"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("trainable parameters: 129736"), std::string::npos) << r.output;
}

TEST(Cli, InspectTable2) {
  const auto r = run("inspect --table2");
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* row : {"Proposed", "w/o concatenation", "64 kernels/layer", "Exponential dilation"}) {
    EXPECT_NE(r.output.find(row), std::string::npos) << row;
  }
}

TEST(Cli, UnknownSchemaKeyExitsTwoNamingTheKey) {
  const auto cfg = work_dir() / "bad.json";
  write_text(cfg, R"({"network": {"bogus_key": 1}})");
  const auto r = run("inspect --config " + cfg.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("bogus_key"), std::string::npos) << r.output;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("train --fold 0").code, 2);
}

TEST(Cli, MissingDataExitsThree) {
  const auto bad = work_dir() / "broken_manifest.json";
  write_text(bad, "{ this is not json");
  const auto split = work_dir() / "split_for_broken.json";
  EXPECT_EQ(run("split --manifest " + bad.string() + " --out " + split.string()).code, 3);
}

TEST(Cli, GradcheckPasses) {
  const auto r = run("gradcheck");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("PASS"), std::string::npos);
}

TEST(Cli, SynthSplitTrainPredict) {
  const auto manifest = tiny_dataset();
  const auto split = work_dir() / "split.json";
  auto r = run("split --manifest " + manifest.string() + " --folds 2 --iters 20 --seed 1 --out " + split.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto sj = nlohmann::json::parse(std::ifstream(split));
  EXPECT_EQ(sj.at("folds").get<int>(), 2);

  const auto cfg = work_dir() / "tiny.json";
  write_text(cfg, kTinyConfig);
  const auto out = work_dir() / "run";
  r = run("--threads 1 train --config " + cfg.string() + " --manifest " + manifest.string() + " --split " +
          split.string() + " --fold 0 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(out / "report.json"));
  EXPECT_TRUE(fs::exists(out / "best.dfck"));
  EXPECT_TRUE(fs::exists(out / "runlog.jsonl"));

  const auto pred = work_dir() / "pred";
  const auto image = fs::path(manifest).parent_path() / "case-0000.image.tsr";
  ASSERT_TRUE(fs::exists(image));
  r = run("predict --checkpoint " + (out / "best.dfck").string() + " --image " + image.string() + " --out " +
          pred.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto labels = dfcn::read_label_file(pred / "labels.tsr");
  EXPECT_EQ(labels.shape(), (dfcn::Shape{20, 20}));
  const auto pj = nlohmann::json::parse(std::ifstream(pred / "prediction.json"));
  EXPECT_LE(pj.at("max_channel_sum_deviation").get<double>(), 1e-5);

  std::ifstream ppm(pred / "overlay.ppm", std::ios::binary);
  std::string magic;
  ppm >> magic;
  EXPECT_EQ(magic, "P6");
}

TEST(Cli, CrossValidationSweepWritesCurves) {
  const auto manifest = tiny_dataset();
  const auto cfg = work_dir() / "tiny_cv.json";
  write_text(cfg, R"({"network": {"kernels_per_layer": 4, "num_dilated_layers": 2, "head_widths": [6]},
                      "stop": {"max_epochs": 1}, "seed": 2})");
  const auto out = work_dir() / "sweep";
  const auto r = run("cv --config " + cfg.string() + " --manifest " + manifest.string() +
                     " --folds 2 --split-iters 10 --sweep-alpha 0,0.1 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream csv(out / "curves.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header.rfind("alpha,epoch,fold,bacc,best_bacc", 0), 0u) << header;
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, 2 * 2);
  EXPECT_TRUE(fs::exists(out / "sweep_report.json"));
}

TEST(Cli, NonFiniteTrainingExitsFourWithContext) {
  const auto manifest = tiny_dataset();
  const auto split = work_dir() / "split_nan.json";
  ASSERT_EQ(run("split --manifest " + manifest.string() + " --folds 2 --iters 5 --out " + split.string()).code, 0);
  const auto cfg = work_dir() / "explode.json";
  write_text(cfg, R"({"network": {"kernels_per_layer": 4, "num_dilated_layers": 3, "head_widths": [8]},
                      "optimizer": {"learning_rate": 1e30}, "stop": {"max_epochs": 3}})");
  const auto r = run("train --config " + cfg.string() + " --manifest " + manifest.string() + " --split " +
                     split.string() + " --fold 1 --out " + (work_dir() / "nan").string());
  EXPECT_EQ(r.code, 4) << r.output;
  EXPECT_NE(r.output.find("epoch"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("step"), std::string::npos) << r.output;
}

}  // namespace
