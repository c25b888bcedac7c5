#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssrc/harness.hpp"
#include "ssrc/metrics.hpp"

namespace fs = std::filesystem;
using namespace ssrc;

namespace {

struct Run {
  int code;
  std::string err;
};

const fs::path& work() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("ssrc_cli_test_" + std::to_string(getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run cli(const std::string& args) {
  const auto err = work() / "stderr.txt";
  const std::string cmd = std::string(SSRC_CLI) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  std::ifstream f(err);
  std::stringstream ss;
  ss << f.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::size_t count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

fs::path write_file(const std::string& name, const std::string& text) {
  const auto p = work() / name;
  std::ofstream(p) << text;
  return p;
}

const char* kTinyConfig = R"({
  "image_size": 16, "train_scenes": 4, "test_scenes": 0, "batch_size": 2,
  "patches": 8, "embed_dim": 8, "scc_pixels": 32,
  "gen_base_width": 4, "gen_max_width": 8, "gen_residual_blocks": 1,
  "disc_stages": 2, "disc_base_width": 4, "disc_max_width": 8,
  "seed": 5, "log_wall_time": false, "steps": STEPS
})";

std::string tiny_config(int steps, const std::string& extra = "") {
  std::string s = kTinyConfig;
  s.replace(s.find("STEPS"), 5, std::to_string(steps) + extra);
  return s;
}

}  // namespace

TEST(CliGenData, WritesImagesLabelsAndManifest) {
  const auto spec = write_file("spec.json", "{\"name\": \"source\"}");
  const auto out = work() / "gen10";
  ASSERT_EQ(cli("gen-data --spec " + spec.string() + " --out " + out.string() + " --count 10 --seed 7").code, 0);
  EXPECT_EQ(count_files(out / "images"), 10u);
  EXPECT_EQ(count_files(out / "labels"), 10u);
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  EXPECT_EQ(count_files(out), 3u);
}

TEST(CliGenData, SameSeedGivesIdenticalBytes) {
  const auto spec = write_file("spec.json", "{\"name\": \"source\"}");
  const auto a = work() / "genA", b = work() / "genB";
  ASSERT_EQ(cli("gen-data --spec " + spec.string() + " --out " + a.string() + " --count 3 --seed 1").code, 0);
  ASSERT_EQ(cli("gen-data --spec " + spec.string() + " --out " + b.string() + " --count 3 --seed 1").code, 0);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
  }
}

TEST(CliGenData, InvalidFrequencySumExitsTwoNamingField) {
  const auto spec = write_file("bad_spec.json", "{\n  \"name\": \"x\",\n  \"frequencies\": [0.5, 0.5, 0.5, 0.1, 0.1]\n}");
  const auto r = cli("gen-data --spec " + spec.string() + " --out " + (work() / "bad").string() +
                     " --count 1 --seed 0");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("frequencies"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("bad_spec.json:3"), std::string::npos) << r.err;
}

TEST(CliErrors, NonexistentPathsExitTwo) {
  const auto missing = (work() / "missing").string();
  EXPECT_EQ(cli("gen-data --spec " + missing + " --out x --count 1 --seed 0").code, 2);
  EXPECT_EQ(cli("train --config " + missing + " --out " + missing).code, 2);
  EXPECT_EQ(cli("refine --ckpt " + missing + " --in " + missing + " --out " + missing).code, 2);
  EXPECT_EQ(cli("eval --ckpt " + missing + " --data " + missing + " --report " + missing).code, 2);
  EXPECT_EQ(cli("plot --log " + missing + " --out " + missing).code, 2);
  EXPECT_EQ(cli("gen-data --out x").code, 2);
  EXPECT_EQ(cli("no-such-command").code, 2);
}

TEST(CliWorkflow, TrainRefineEvalPlot) {
  const auto cfg = write_file("train.json", tiny_config(3));
  const auto run = work() / "run";
  ASSERT_EQ(cli("train --config " + cfg.string() + " --out " + run.string()).code, 0);
  ASSERT_TRUE(fs::exists(run / "checkpoint.ckpt"));
  EXPECT_EQ(RunLog::read_csv(run / "runlog.csv").rows.size(), 3u);

  const auto spec = write_file("spec.json", "{\"name\": \"source\"}");
  const auto data = work() / "evaldata";
  ASSERT_EQ(cli("gen-data --spec " + spec.string() + " --out " + data.string() + " --count 4 --seed 100").code, 0);

  const auto refined = work() / "refined";
  ASSERT_EQ(cli("refine --ckpt " + (run / "checkpoint.ckpt").string() + " --in " + (data / "images").string() +
                " --out " + refined.string())
                .code,
            0);
  ASSERT_EQ(count_files(refined), 4u);
  for (const auto& e : fs::directory_iterator(data / "images")) EXPECT_TRUE(fs::exists(refined / e.path().filename()));

  const auto report = work() / "report";
  ASSERT_EQ(cli("eval --ckpt " + (run / "checkpoint.ckpt").string() + " --data " + data.string() + " --report " +
                report.string())
                .code,
            0);
  const auto rep = MetricReport::from_json(slurp(work() / "report.json"));
  const auto again = MetricReport::from_confusion(rep.n_classes, rep.confusion);
  EXPECT_EQ(rep.mean_iou, again.mean_iou);
  EXPECT_TRUE(fs::exists(work() / "report.csv"));
}

TEST(CliTrain, ResumeMatchesStraightRun) {
  const auto cfg4 = write_file("train4.json", tiny_config(4));
  const auto cfg2 = write_file("train2.json", tiny_config(2));
  const auto straight = work() / "straight", part = work() / "part", rest = work() / "rest";
  ASSERT_EQ(cli("train --config " + cfg4.string() + " --out " + straight.string()).code, 0);
  ASSERT_EQ(cli("train --config " + cfg2.string() + " --out " + part.string()).code, 0);
  ASSERT_EQ(cli("train --config " + cfg4.string() + " --out " + rest.string() + " --resume " +
                (part / "checkpoint.ckpt").string())
                .code,
            0);
  const auto a = Checkpoint::load(straight / "checkpoint.ckpt");
  const auto b = Checkpoint::load(rest / "checkpoint.ckpt");
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    const auto x = a.tensors[i].tensor.data(), y = b.tensors[i].tensor.data();
    ASSERT_EQ(x.size(), y.size());
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << a.tensors[i].name;
  }
  EXPECT_EQ(slurp(straight / "runlog.csv"), slurp(rest / "runlog.csv"));
}

TEST(CliTrain, NonFiniteAbortExitsThreeWithStep) {
  const auto cfg = write_file("explode.json", tiny_config(50, ", \"lr_g\": 1e300, \"lr_d\": 1e300"));
  const auto r = cli("train --config " + cfg.string() + " --out " + (work() / "explode").string());
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("step "), std::string::npos) << r.err;
}

TEST(CliTrain, BadConfigExitsTwo) {
  const auto cfg = write_file("badcfg.json", "{\n  \"batch_size\": 0\n}");
  const auto r = cli("train --config " + cfg.string() + " --out " + (work() / "bad").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("batch_size"), std::string::npos) << r.err;
}

TEST(CliPlot, HundredRowLogGivesSixPolylines) {
  RunLog log;
  for (int i = 1; i <= 100; ++i) {
    const double t = i / 100.0;
    log.append({i, 0.01 * t, -0.1 * t, 5 - t, 0.7, 1.4 - t, 6 - t, 1.0});
  }
  log.write_csv(work() / "plotlog.csv");
  const auto svg_path = work() / "curves.svg";
  ASSERT_EQ(cli("plot --log " + (work() / "plotlog.csv").string() + " --out " + svg_path.string()).code, 0);
  const auto svg = slurp(svg_path);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  std::size_t n = 0;
  for (auto at = svg.find("<polyline"); at != std::string::npos; at = svg.find("<polyline", at + 1)) ++n;
  EXPECT_EQ(n, 6u);
  // each polyline carries one point per row
  const auto first = svg.find("points=\"");
  const auto end = svg.find('"', first + 8);
  const auto pts = svg.substr(first + 8, end - first - 8);
  EXPECT_EQ(std::count(pts.begin(), pts.end(), ','), 100);
}

TEST(CliConfigs, ShippedConfigParses) {
  const auto c = load_train_config(fs::path(SSRC_CONFIG_DIR) / "toy_train.json");
  EXPECT_EQ(c.target_spec.name, "target");
  EXPECT_EQ(c.target_spec.palette, DomainSpec::target().palette);
  EXPECT_EQ(c.source_spec.palette, DomainSpec::source().palette);
  EXPECT_EQ(c.steps, 5000);
}
