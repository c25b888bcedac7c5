#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssrc/error.hpp"
#include "ssrc/harness.hpp"

namespace fs = std::filesystem;
using namespace ssrc;

namespace {

TrainConfig tiny_config(std::uint64_t seed = 3) {
  TrainConfig c;
  c.image_size = 16;
  c.train_scenes = 6;
  c.test_scenes = 2;
  c.batch_size = 2;
  c.patches = 8;
  c.embed_dim = 8;
  c.scc.pixels = 32;
  c.generator.base_width = 4;
  c.generator.max_width = 8;
  c.generator.residual_blocks = 1;
  c.discriminator.stages = 2;
  c.discriminator.base_width = 4;
  c.discriminator.max_width = 8;
  c.seed = seed;
  c.log_wall_time = false;
  return c;
}

std::shared_ptr<const TrainingData> tiny_data() {
  static auto data = std::make_shared<const TrainingData>(build_training_data(tiny_config()));
  return data;
}

std::vector<Scalar> flat_values(const ParameterList& params) {
  std::vector<Scalar> out;
  for (const auto& p : params) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

std::vector<Scalar> all_values(Trainer& t) {
  auto v = flat_values(t.generator_side_parameters());
  auto d = flat_values(t.discriminator().parameters());
  v.insert(v.end(), d.begin(), d.end());
  return v;
}

bool bytes_equal(const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(Scalar)) == 0;
}

std::string log_text(const RunLog& log) {
  std::ostringstream os;
  for (const auto& r : log.rows) os << RunLog::format(r) << "\n";
  return os.str();
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("ssrc_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double abs_sum(std::span<const Scalar> s) {
  double a = 0;
  for (auto v : s) a += std::abs(static_cast<double>(v));
  return a;
}

}  // namespace

TEST(Adam, FirstStepMovesEachWeightByLearningRate) {
  Tensor w = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  Adam opt({{"w", w}}, 0.1, 0.5, 0.999, 1e-12);
  // gradient of sum(w * c)
  w.impl().grad_buffer() = {4.0, -0.001, 0.0};
  opt.step();
  EXPECT_NEAR(w.data()[0], 0.9, 1e-9);
  EXPECT_NEAR(w.data()[1], -1.9, 1e-9);
  EXPECT_NEAR(w.data()[2], 0.5, 1e-9);
  EXPECT_EQ(opt.steps_taken(), 1);
}

TEST(Adam, SkipsParametersWithoutGradient) {
  Tensor a = Tensor::from_data({1}, {1.0}, true);
  Tensor b = Tensor::from_data({1}, {1.0}, true);
  Adam opt({{"a", a}, {"b", b}}, 0.1, 0.9, 0.999, 1e-8);
  a.impl().grad_buffer() = {1.0};
  opt.step();
  EXPECT_NE(a.data()[0], 1.0);
  EXPECT_EQ(b.data()[0], 1.0);
}

TEST(StepRng, DependsOnSeedStepAndStream) {
  auto draw = [](std::uint64_t seed, std::int64_t step, std::uint32_t stream) {
    return step_rng(seed, step, stream)();
  };
  EXPECT_EQ(draw(1, 2, 3), draw(1, 2, 3));
  EXPECT_NE(draw(1, 2, 3), draw(2, 2, 3));
  EXPECT_NE(draw(1, 2, 3), draw(1, 3, 3));
  EXPECT_NE(draw(1, 2, 3), draw(1, 2, 4));
}

TEST(Trainer, FixedSeedRunsAreBitwiseReproducible) {
  Trainer a(tiny_config(), tiny_data());
  Trainer b(tiny_config(), tiny_data());
  a.train(4);
  b.train(4);
  EXPECT_EQ(log_text(a.log()), log_text(b.log()));
  EXPECT_TRUE(bytes_equal(all_values(a), all_values(b)));
}

TEST(Trainer, DifferentSeedsDiverge) {
  Trainer a(tiny_config(3), tiny_data());
  Trainer b(tiny_config(4), tiny_data());
  a.train(2);
  b.train(2);
  EXPECT_FALSE(bytes_equal(all_values(a), all_values(b)));
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  const auto dir = scratch_dir("resume");
  Trainer full(tiny_config(), tiny_data());
  full.train(6);

  Trainer first(tiny_config(), tiny_data());
  first.train(3);
  first.save(dir / "k.ckpt");
  Trainer resumed = Trainer::resume(dir / "k.ckpt", tiny_data());
  EXPECT_EQ(resumed.step(), 3);
  resumed.train(6);

  EXPECT_TRUE(bytes_equal(all_values(full), all_values(resumed)));
  EXPECT_EQ(log_text(full.log()), log_text(resumed.log()));
  fs::remove_all(dir);
}

TEST(Trainer, LogHasOneRowPerStep) {
  Trainer t(tiny_config(), tiny_data());
  t.train(5);
  ASSERT_EQ(t.log().rows.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(t.log().rows[i].step, static_cast<std::int64_t>(i + 1));
    EXPECT_EQ(t.log().rows[i].wall_ms, 0.0);
  }
}

TEST(Trainer, TotalIsWeightedSumOfTerms) {
  TrainConfig c = tiny_config();
  c.weights.lambda_src = 0.3;
  c.weights.lambda_scc = 0.7;
  c.weights.lambda_hdce = 1.1;
  c.weights.lambda_gan = 0.9;
  Trainer t(c, tiny_data());
  t.train(3);
  for (const auto& r : t.log().rows) {
    const double expect = 0.3 * r.src + 0.7 * r.scc + 1.1 * r.hdce + 0.9 * r.gan_g;
    EXPECT_NEAR(r.total, expect, 1e-6);
    EXPECT_TRUE(std::isfinite(r.gan_d));
  }
}

TEST(Trainer, EveryGeneratorSideParameterReceivesGradientAtFirstStep) {
  Trainer t(tiny_config(), tiny_data());
  bool called = false;
  t.after_backward = [&](const Trainer& tr) {
    called = true;
    for (const auto& p : tr.generator_side_parameters()) {
      ASSERT_TRUE(p.tensor.has_grad()) << p.name;
      EXPECT_GT(abs_sum(p.tensor.grad()), 0.0) << p.name;
    }
  };
  t.train_step();
  EXPECT_TRUE(called);
}

TEST(Trainer, DiscriminatorUpdatesButGetsNoGradientFromGeneratorLoss) {
  Trainer t(tiny_config(), tiny_data());
  const auto before = flat_values(t.discriminator().parameters());
  t.after_backward = [](const Trainer& tr) {
    auto& self = const_cast<Trainer&>(tr);
    for (const auto& p : self.discriminator().parameters()) {
      EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
      if (p.tensor.has_grad()) EXPECT_EQ(abs_sum(p.tensor.grad()), 0.0) << p.name;
    }
  };
  t.train_step();
  EXPECT_FALSE(bytes_equal(before, flat_values(t.discriminator().parameters())));
  for (const auto& p : t.discriminator().parameters()) EXPECT_TRUE(p.tensor.requires_grad());
}

TEST(Trainer, ZeroContrastiveWeightsLeaveHeadsWithoutGradient) {
  TrainConfig c = tiny_config();
  c.weights.lambda_src = 0;
  c.weights.lambda_hdce = 0;
  Trainer t(c, tiny_data());
  std::vector<Scalar> heads_before = flat_values(t.heads().parameters());
  t.after_backward = [](const Trainer& tr) {
    auto& self = const_cast<Trainer&>(tr);
    for (const auto& p : self.heads().parameters()) {
      if (p.tensor.has_grad()) EXPECT_EQ(abs_sum(p.tensor.grad()), 0.0) << p.name;
    }
  };
  const auto row = t.train_step();
  // terms are still logged
  EXPECT_GT(row.hdce, 0.0);
  EXPECT_TRUE(bytes_equal(heads_before, flat_values(t.heads().parameters())));
}

TEST(Trainer, NonFiniteLossNamesStep) {
  Trainer t(tiny_config(), tiny_data());
  t.train_step();
  for (auto& p : t.generator().parameters()) p.tensor.mutable_data()[0] = std::nan("");
  try {
    t.train_step();
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
}

TEST(Trainer, CheckpointCadenceWritesFiles) {
  const auto dir = scratch_dir("cadence");
  TrainConfig c = tiny_config();
  c.checkpoint_every = 2;
  Trainer t(c, tiny_data());
  t.train(2, dir);
  EXPECT_TRUE(fs::exists(dir / "checkpoint.ckpt"));
  EXPECT_EQ(RunLog::read_csv(dir / "runlog.csv").rows.size(), 2u);
  fs::remove_all(dir);
}

TEST(Trainer, CorruptCheckpointIsRejected) {
  const auto dir = scratch_dir("corrupt");
  Trainer t(tiny_config(), tiny_data());
  t.train_step();
  t.save(dir / "c.ckpt");
  {
    std::fstream f(dir / "c.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x5a');
  }
  EXPECT_THROW(Trainer::resume(dir / "c.ckpt", tiny_data()), CheckpointError);
  EXPECT_THROW(load_generator(dir / "c.ckpt"), CheckpointError);
  fs::remove_all(dir);
}

TEST(Trainer, LoadGeneratorReproducesOutputs) {
  const auto dir = scratch_dir("loadgen");
  Trainer t(tiny_config(), tiny_data());
  t.train(2);
  t.save(dir / "g.ckpt");
  TrainConfig cfg;
  auto g = load_generator(dir / "g.ckpt", &cfg);
  EXPECT_EQ(cfg.seed, tiny_config().seed);
  const Tensor x = stack_images({tiny_data()->source[0]});
  NoGradGuard no_grad;
  const auto a = t.generator().generate(x).image;
  const auto b = g->generate(x).image;
  EXPECT_TRUE(bytes_equal({a.data().begin(), a.data().end()}, {b.data().begin(), b.data().end()}));
  fs::remove_all(dir);
}

TEST(RunLogCsv, RoundTrip) {
  const auto dir = scratch_dir("runlog");
  RunLog log;
  log.append({1, 0.1, -0.2, 3.5, 0.69, 1.38, 4.0, 12.5});
  log.append({2, 1e-17, 0, 0, 0, 0, 0, 0});
  log.write_csv(dir / "log.csv");
  const auto back = RunLog::read_csv(dir / "log.csv");
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[0].hdce, 3.5);
  EXPECT_EQ(back.rows[1].src, 1e-17);
  std::ofstream(dir / "bad.csv") << "nope\n";
  EXPECT_THROW(RunLog::read_csv(dir / "bad.csv"), IngestionError);
  fs::remove_all(dir);
}

TEST(TrainingDataBuild, SplitsBySeedRange) {
  TrainConfig c = tiny_config();
  const auto d = build_training_data(c);
  ASSERT_EQ(d.source.size(), 6u);
  ASSERT_EQ(d.target.size(), 6u);
  ASSERT_EQ(d.held_out.size(), 2u);
  const auto first_test = generate_scene(c.source_spec, 6, 16, 16);
  EXPECT_EQ(d.held_out[0].labels, first_test.labels);
}

TEST(ConfigParse, ReadsFlatKeys) {
  const auto c = parse_train_config(R"({
  "lambda_src": 0.1,
  "tau": 0.2,
  "gen_tap_layers": [0, 1],
  "target_spec": {"noise": 0.01},
  "seed": 9,
  "log_wall_time": false
})");
  EXPECT_EQ(c.weights.lambda_src, 0.1);
  EXPECT_EQ(c.weights.tau, 0.2);
  EXPECT_EQ(c.generator.tap_layers, (std::vector<std::int64_t>{0, 1}));
  EXPECT_EQ(c.target_spec.noise, 0.01);
  EXPECT_EQ(c.target_spec.name, "target");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_FALSE(c.log_wall_time);
}

TEST(ConfigParse, RoundTripsThroughJson) {
  TrainConfig c = tiny_config(11);
  c.weights.beta = 0.25;
  const auto back = parse_train_config(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(ConfigParse, ErrorsNameKeyAndLine) {
  auto message = [](const std::string& text) {
    try {
      parse_train_config(text, "run.json");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  const auto unknown = message("{\n  \"seed\": 1,\n  \"lamda_src\": 0.1\n}");
  EXPECT_NE(unknown.find("run.json:3"), std::string::npos) << unknown;
  EXPECT_NE(unknown.find("lamda_src"), std::string::npos) << unknown;

  const auto type = message("{\n  \"batch_size\": \"four\"\n}");
  EXPECT_NE(type.find("run.json:2"), std::string::npos) << type;

  const auto range = message("{\n  \"steps\": 10,\n  \"lr_g\": -1\n}");
  EXPECT_NE(range.find("run.json:3"), std::string::npos) << range;
  EXPECT_NE(range.find("lr_g"), std::string::npos) << range;

  EXPECT_NE(message("{ not json").find("invalid JSON"), std::string::npos);
  EXPECT_THROW(load_train_config("/nonexistent/run.json"), ConfigError);
}
