#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ssrc/checkpoint.hpp"
#include "ssrc/losses.hpp"
#include "ssrc/nets.hpp"
#include "ssrc/rsmi.hpp"
#include "ssrc/scene.hpp"

namespace ssrc {

struct TrainConfig {
  LossWeights weights;
  double lr_g = 2e-4, lr_d = 2e-4;
  double adam_beta1 = 0.5, adam_beta2 = 0.999, adam_eps = 1e-8;
  std::int64_t batch_size = 4;
  std::int64_t steps = 5000;
  std::int64_t d_steps = 1;  // discriminator updates per generator update
  std::int64_t patches = 64;
  std::int64_t embed_dim = 64;
  SccParams scc;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  // Data: toy domains generated in memory, or image folders when set.
  DomainSpec source_spec = DomainSpec::source();
  DomainSpec target_spec = DomainSpec::target();
  std::string source_dir, target_dir;
  std::int64_t image_size = 64;
  std::int64_t train_scenes = 500;  // scene seeds [0, train_scenes)
  std::int64_t test_scenes = 125;   // scene seeds [train_scenes, train_scenes + test_scenes)

  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  bool log_wall_time = true;          // false writes 0 so logs compare byte for byte

  void validate() const;
  std::string to_json() const;
};

// Flat JSON keys mirroring TrainConfig; source_spec / target_spec take a path
// or an inline object. Unknown keys and bad values raise ConfigError naming
// the key and its line.
TrainConfig parse_train_config(const std::string& json_text, const std::string& origin = "<config>",
                               const std::filesystem::path& base_dir = {});
TrainConfig load_train_config(const std::filesystem::path& path);

class Adam {
 public:
  Adam() = default;
  Adam(ParameterList params, double lr, double beta1, double beta2, double eps);

  void step();  // uses the current gradients; parameters without a gradient are skipped
  void zero_grad();
  std::int64_t steps_taken() const { return t_; }

  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);

 private:
  ParameterList params_;
  std::vector<Tensor> m_, v_;
  double lr_ = 0, beta1_ = 0, beta2_ = 0, eps_ = 0;
  std::int64_t t_ = 0;
};

struct RunLogRow {
  std::int64_t step = 0;
  double src = 0, scc = 0, hdce = 0, gan_g = 0, gan_d = 0, total = 0;
  double wall_ms = 0;
};

struct RunLog {
  std::vector<RunLogRow> rows;

  static const char* header();  // step,src,scc,hdce,gan_g,gan_d,total,wall_ms
  static std::string format(const RunLogRow& row);
  void append(const RunLogRow& row) { rows.push_back(row); }
  void write_csv(const std::filesystem::path& path) const;
  static RunLog read_csv(const std::filesystem::path& path);
};

// Per-step random stream derived from (seed, step, stream id), so a resumed
// run needs no saved generator state.
std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step, std::uint32_t stream);

struct TrainingData {
  std::vector<Tensor> source, target;        // (3, H, W)
  std::vector<ToyScene> held_out;            // labelled source scenes for evaluation (toy data only)
};

TrainingData build_training_data(const TrainConfig& config);

class Trainer {
 public:
  explicit Trainer(TrainConfig config);
  Trainer(TrainConfig config, std::shared_ptr<const TrainingData> data);

  // One D update (d_steps times) followed by one G update. Throws
  // NonFiniteLoss naming the term and step.
  RunLogRow train_step();
  // Runs until `steps` total steps are done; writes checkpoints every
  // checkpoint_every steps when out_dir is given.
  void train(std::int64_t steps, const std::optional<std::filesystem::path>& out_dir = {});

  Checkpoint checkpoint() const;
  void save(const std::filesystem::path& path) const;
  static Trainer resume(const std::filesystem::path& path, std::shared_ptr<const TrainingData> data = nullptr);

  const TrainConfig& config() const { return config_; }
  std::int64_t step() const { return step_; }
  const RunLog& log() const { return log_; }
  const TrainingData& data() const { return *data_; }
  Generator& generator() { return *g_; }
  const Generator& generator() const { return *g_; }
  ProjectionHeads& heads() { return *heads_; }
  Discriminator& discriminator() { return *d_; }

  ParameterList generator_side_parameters() const;  // G and projection heads

  // Called after each step's G backward, before the optimizer update.
  std::function<void(const Trainer&)> after_backward;

 private:
  Tensor batch(const std::vector<Tensor>& pool, std::mt19937_64& rng) const;

  TrainConfig config_;
  std::shared_ptr<const TrainingData> data_;
  std::unique_ptr<Generator> g_;
  std::unique_ptr<ProjectionHeads> heads_;
  std::unique_ptr<Discriminator> d_;
  Adam opt_g_, opt_d_;
  std::int64_t step_ = 0;
  RunLog log_;
};

// Loads generator weights from a checkpoint written by Trainer.
std::unique_ptr<Generator> load_generator(const std::filesystem::path& path, TrainConfig* config = nullptr);

}  // namespace ssrc
