#include "ssrc/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "ssrc/image_io.hpp"
#include "ssrc/ops.hpp"
#include "ssrc/patches.hpp"

namespace ssrc {

using nlohmann::json;

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  weights.validate();
  if (!(lr_g > 0) || !(lr_d > 0)) throw ConfigError("lr_g/lr_d: learning rates must be > 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw ConfigError("adam_beta1/adam_beta2: must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ConfigError("adam_eps: must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (steps < 0) throw ConfigError("steps: must be >= 0");
  if (d_steps < 1) throw ConfigError("d_steps: must be >= 1");
  if (patches < 2) throw ConfigError("patches: must be >= 2");
  if (embed_dim < 1) throw ConfigError("embed_dim: must be >= 1");
  if (scc.pixels < 1) throw ConfigError("scc_pixels: must be >= 1");
  scc.rulsif.validate();
  generator.validate();
  discriminator.validate();
  if (image_size < 16) throw ConfigError("image_size: must be >= 16");
  if (image_size % (std::int64_t{1} << generator.downsampling) != 0) {
    throw ConfigError("image_size: must be divisible by 2^gen_downsampling");
  }
  if (scc.pixels > image_size * image_size) throw ConfigError("scc_pixels: exceeds pixels per image");
  if (source_dir.empty() != target_dir.empty()) throw ConfigError("source_dir/target_dir: set both or neither");
  if (source_dir.empty()) {
    source_spec.validate();
    target_spec.validate();
    if (train_scenes < 1) throw ConfigError("train_scenes: must be >= 1");
    if (test_scenes < 0) throw ConfigError("test_scenes: must be >= 0");
  }
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every: must be >= 0");
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["lambda_src"] = weights.lambda_src;
  j["lambda_scc"] = weights.lambda_scc;
  j["lambda_hdce"] = weights.lambda_hdce;
  j["lambda_gan"] = weights.lambda_gan;
  j["tau"] = weights.tau;
  j["beta"] = weights.beta;
  j["lr_g"] = lr_g;
  j["lr_d"] = lr_d;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_eps"] = adam_eps;
  j["batch_size"] = batch_size;
  j["steps"] = steps;
  j["d_steps"] = d_steps;
  j["patches"] = patches;
  j["embed_dim"] = embed_dim;
  j["scc_pixels"] = scc.pixels;
  j["rsmi_alpha"] = scc.rulsif.alpha;
  j["rsmi_max_centers"] = scc.rulsif.max_centers;
  j["rsmi_ridge"] = scc.rulsif.ridge;
  j["rsmi_sigma"] = scc.rulsif.sigma;
  j["gen_base_width"] = generator.base_width;
  j["gen_max_width"] = generator.max_width;
  j["gen_residual_blocks"] = generator.residual_blocks;
  j["gen_downsampling"] = generator.downsampling;
  j["gen_tap_layers"] = generator.tap_layers;
  j["disc_stages"] = discriminator.stages;
  j["disc_base_width"] = discriminator.base_width;
  j["disc_max_width"] = discriminator.max_width;
  j["disc_slope"] = discriminator.slope;
  j["source_spec"] = nlohmann::ordered_json::parse(domain_spec_to_json(source_spec));
  j["target_spec"] = nlohmann::ordered_json::parse(domain_spec_to_json(target_spec));
  j["source_dir"] = source_dir;
  j["target_dir"] = target_dir;
  j["image_size"] = image_size;
  j["train_scenes"] = train_scenes;
  j["test_scenes"] = test_scenes;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["log_wall_time"] = log_wall_time;
  return j.dump(2);
}

namespace {

std::string line_suffix(const std::string& text, const std::string& key) {
  const auto at = text.find("\"" + key + "\"");
  if (at == std::string::npos) return "";
  return ":" + std::to_string(1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(at), '\n'));
}

DomainSpec spec_value(const json& v, const DomainSpec& base, const std::filesystem::path& base_dir) {
  if (v.is_string()) {
    std::filesystem::path p = v.get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    return load_domain_spec(p, base);
  }
  if (v.is_object()) return parse_domain_spec(v.dump(), base, "inline spec");
  throw ConfigError("expected a spec file path or an inline object");
}

}  // namespace

TrainConfig parse_train_config(const std::string& text, const std::string& origin,
                               const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(origin + ": expected a JSON object");
  TrainConfig c;
  std::string key;
  try {
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      key = it.key();
      const json& v = it.value();
      if (key == "lambda_src") c.weights.lambda_src = v.get<double>();
      else if (key == "lambda_scc") c.weights.lambda_scc = v.get<double>();
      else if (key == "lambda_hdce") c.weights.lambda_hdce = v.get<double>();
      else if (key == "lambda_gan") c.weights.lambda_gan = v.get<double>();
      else if (key == "tau") c.weights.tau = v.get<double>();
      else if (key == "beta") c.weights.beta = v.get<double>();
      else if (key == "lr_g") c.lr_g = v.get<double>();
      else if (key == "lr_d") c.lr_d = v.get<double>();
      else if (key == "adam_beta1") c.adam_beta1 = v.get<double>();
      else if (key == "adam_beta2") c.adam_beta2 = v.get<double>();
      else if (key == "adam_eps") c.adam_eps = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<std::int64_t>();
      else if (key == "steps") c.steps = v.get<std::int64_t>();
      else if (key == "d_steps") c.d_steps = v.get<std::int64_t>();
      else if (key == "patches") c.patches = v.get<std::int64_t>();
      else if (key == "embed_dim") c.embed_dim = v.get<std::int64_t>();
      else if (key == "scc_pixels") c.scc.pixels = v.get<std::int64_t>();
      else if (key == "rsmi_alpha") c.scc.rulsif.alpha = v.get<double>();
      else if (key == "rsmi_max_centers") c.scc.rulsif.max_centers = v.get<std::int64_t>();
      else if (key == "rsmi_ridge") c.scc.rulsif.ridge = v.get<double>();
      else if (key == "rsmi_sigma") c.scc.rulsif.sigma = v.get<double>();
      else if (key == "gen_base_width") c.generator.base_width = v.get<std::int64_t>();
      else if (key == "gen_max_width") c.generator.max_width = v.get<std::int64_t>();
      else if (key == "gen_residual_blocks") c.generator.residual_blocks = v.get<std::int64_t>();
      else if (key == "gen_downsampling") c.generator.downsampling = v.get<std::int64_t>();
      else if (key == "gen_tap_layers") c.generator.tap_layers = v.get<std::vector<std::int64_t>>();
      else if (key == "disc_stages") c.discriminator.stages = v.get<std::int64_t>();
      else if (key == "disc_base_width") c.discriminator.base_width = v.get<std::int64_t>();
      else if (key == "disc_max_width") c.discriminator.max_width = v.get<std::int64_t>();
      else if (key == "disc_slope") c.discriminator.slope = v.get<double>();
      else if (key == "source_spec") c.source_spec = spec_value(v, DomainSpec::source(), base_dir);
      else if (key == "target_spec") c.target_spec = spec_value(v, DomainSpec::target(), base_dir);
      else if (key == "source_dir") c.source_dir = v.get<std::string>();
      else if (key == "target_dir") c.target_dir = v.get<std::string>();
      else if (key == "image_size") c.image_size = v.get<std::int64_t>();
      else if (key == "train_scenes") c.train_scenes = v.get<std::int64_t>();
      else if (key == "test_scenes") c.test_scenes = v.get<std::int64_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "checkpoint_every") c.checkpoint_every = v.get<std::int64_t>();
      else if (key == "log_wall_time") c.log_wall_time = v.get<bool>();
      else throw ConfigError("unknown key");
    }
    key.clear();
    c.validate();
  } catch (const json::exception& e) {
    throw ConfigError(origin + line_suffix(text, key) + ": " + key + ": " + e.what());
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (!key.empty()) throw ConfigError(origin + line_suffix(text, key) + ": " + key + ": " + msg);
    const std::string field = msg.substr(0, msg.find_first_of(":/"));
    throw ConfigError(origin + line_suffix(text, field) + ": " + msg);
  }
  if (!base_dir.empty()) {
    if (!c.source_dir.empty() && std::filesystem::path(c.source_dir).is_relative())
      c.source_dir = (base_dir / c.source_dir).string();
    if (!c.target_dir.empty() && std::filesystem::path(c.target_dir).is_relative())
      c.target_dir = (base_dir / c.target_dir).string();
  }
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str(), path.string(), path.parent_path());
}

// ---------------------------------------------------------------- optimizer

Adam::Adam(ParameterList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.tensor.shape()));
    v_.push_back(Tensor::zeros(p.tensor.shape()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].tensor;
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto m = m_[k].mutable_data();
    auto v = v_[k].mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = static_cast<Scalar>(beta1_ * m[i] + (1 - beta1_) * gi);
      v[i] = static_cast<Scalar>(beta2_ * v[i] + (1 - beta2_) * gi * gi);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] = static_cast<Scalar>(w[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

void Adam::zero_grad() { ssrc::zero_grad(params_); }

void Adam::save(Checkpoint& ck, const std::string& prefix) const {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ck.tensors.push_back({prefix + "m." + params_[k].name, m_[k]});
    ck.tensors.push_back({prefix + "v." + params_[k].name, v_[k]});
  }
  ck.metadata[prefix + "t"] = std::to_string(t_);
}

void Adam::load(const Checkpoint& ck, const std::string& prefix) {
  ParameterList m, v;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    m.push_back({params_[k].name, m_[k]});
    v.push_back({params_[k].name, v_[k]});
  }
  ck.restore(prefix + "m.", m);
  ck.restore(prefix + "v.", v);
  const auto it = ck.metadata.find(prefix + "t");
  if (it == ck.metadata.end()) throw CheckpointError("checkpoint lacks optimizer step count '" + prefix + "t'");
  t_ = std::stoll(it->second);
}

// ---------------------------------------------------------------- run log

const char* RunLog::header() { return "step,src,scc,hdce,gan_g,gan_d,total,wall_ms"; }

std::string RunLog::format(const RunLogRow& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.step << "," << r.src << "," << r.scc << "," << r.hdce << "," << r.gan_g << ","
     << r.gan_d << "," << r.total << "," << std::setprecision(6) << r.wall_ms;
  return os.str();
}

void RunLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << header() << "\n";
  for (const auto& r : rows) out << format(r) << "\n";
}

RunLog RunLog::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError(path.string() + ": cannot open run log");
  std::string line;
  if (!std::getline(in, line) || line != header()) {
    throw IngestionError(path.string() + ":1: expected header '" + std::string(header()) + "'");
  }
  RunLog log;
  std::int64_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        v.push_back(std::nan(""));
      }
    }
    if (v.size() != 8) {
      throw IngestionError(path.string() + ":" + std::to_string(lineno) + ": expected 8 columns, got " +
                           std::to_string(v.size()));
    }
    log.append({static_cast<std::int64_t>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6], v[7]});
  }
  return log;
}

// ---------------------------------------------------------------- data

std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step, std::uint32_t stream) {
  const auto s = static_cast<std::uint64_t>(step);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32), stream};
  return std::mt19937_64(seq);
}

TrainingData build_training_data(const TrainConfig& c) {
  TrainingData d;
  if (!c.source_dir.empty()) {
    d.source = load_image_folder(c.source_dir, c.image_size).images;
    d.target = load_image_folder(c.target_dir, c.image_size).images;
    if (d.source.empty() || d.target.empty()) {
      throw IngestionError("training folders must contain at least one PNG each (" + c.source_dir + ", " +
                           c.target_dir + ")");
    }
    return d;
  }
  // source and target draw from disjoint seed ranges so scenes are unpaired
  constexpr std::uint64_t kTargetOffset = std::uint64_t{1} << 32;
  for (std::int64_t i = 0; i < c.train_scenes; ++i) {
    d.source.push_back(generate_scene(c.source_spec, static_cast<std::uint64_t>(i), c.image_size, c.image_size).image);
    d.target.push_back(
        generate_scene(c.target_spec, kTargetOffset + static_cast<std::uint64_t>(i), c.image_size, c.image_size).image);
  }
  for (std::int64_t i = 0; i < c.test_scenes; ++i) {
    d.held_out.push_back(
        generate_scene(c.source_spec, static_cast<std::uint64_t>(c.train_scenes + i), c.image_size, c.image_size));
  }
  return d;
}

// ---------------------------------------------------------------- trainer

namespace {

enum Stream : std::uint32_t { kSourceBatch = 1, kTargetBatch = 2, kPatchPlan = 3, kScc = 4 };

double value(const Tensor& t) { return static_cast<double>(t.item()); }

}  // namespace

Trainer::Trainer(TrainConfig config) : Trainer(config, nullptr) {}

Trainer::Trainer(TrainConfig config, std::shared_ptr<const TrainingData> data) : config_(std::move(config)) {
  config_.validate();
  data_ = data ? std::move(data) : std::make_shared<const TrainingData>(build_training_data(config_));
  std::mt19937_64 init(config_.seed);
  g_ = std::make_unique<Generator>(config_.generator, init);
  heads_ = std::make_unique<ProjectionHeads>(g_->tap_channels(), config_.embed_dim, init);
  d_ = std::make_unique<Discriminator>(config_.discriminator, init);
  opt_g_ = Adam(generator_side_parameters(), config_.lr_g, config_.adam_beta1, config_.adam_beta2, config_.adam_eps);
  opt_d_ = Adam(d_->parameters(), config_.lr_d, config_.adam_beta1, config_.adam_beta2, config_.adam_eps);
}

ParameterList Trainer::generator_side_parameters() const {
  ParameterList p = g_->parameters();
  for (auto& h : heads_->parameters()) p.push_back(h);
  return p;
}

Tensor Trainer::batch(const std::vector<Tensor>& pool, std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<Tensor> items;
  for (std::int64_t b = 0; b < config_.batch_size; ++b) items.push_back(pool[pick(rng)]);
  return stack_images(items);
}

RunLogRow Trainer::train_step() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::int64_t step = step_ + 1;
  const auto& w = config_.weights;
  RunLogRow row;
  row.step = step;

  auto src_rng = step_rng(config_.seed, step, kSourceBatch);
  auto tgt_rng = step_rng(config_.seed, step, kTargetBatch);
  const Tensor x = batch(data_->source, src_rng);

  // discriminator update(s); the generator runs without a graph
  const auto g_params = generator_side_parameters();
  const auto d_params = d_->parameters();
  zero_grad(g_params);
  Tensor fake;
  {
    NoGradGuard no_grad;
    fake = g_->generate(x).image;
  }
  for (std::int64_t k = 0; k < config_.d_steps; ++k) {
    const Tensor y = batch(data_->target, tgt_rng);
    opt_d_.zero_grad();
    Tensor loss_d = gan_loss_d(*d_, y, fake);
    row.gan_d = value(loss_d);
    if (!std::isfinite(row.gan_d)) throw NonFiniteLoss("gan_d", step);
    loss_d.backward();
    opt_d_.step();
  }

  // generator update; D is frozen so none of its parameters collect gradient
  zero_grad(d_params);
  set_requires_grad(d_params, false);
  struct Restore {
    const ParameterList& p;
    ~Restore() { set_requires_grad(p, true); }
  } restore{d_params};

  opt_g_.zero_grad();
  const auto out = g_->generate(x);
  const auto taps_y = g_->encode_taps(out.image);
  const auto plan = sample_plan(g_->tap_spatial_sizes(x.size(2), x.size(3)), config_.patches,
                                step_rng(config_.seed, step, kPatchPlan)());
  auto scc_rng = step_rng(config_.seed, step, kScc);

  // zero-weighted terms are still evaluated for the log, outside the graph
  auto term = [](double lambda, auto&& compute) {
    if (lambda > 0) return compute();
    NoGradGuard no_grad;
    return compute().detach();
  };
  LossTerms terms;
  const bool contrastive = w.lambda_src > 0 || w.lambda_hdce > 0;
  std::optional<PatchEmbeddingSet> pairs;
  if (contrastive) pairs = build_pairs(plan, out.taps, taps_y, *heads_);
  auto logged_pairs = [&]() -> PatchEmbeddingSet {
    if (pairs) return *pairs;
    NoGradGuard no_grad;
    return build_pairs(plan, out.taps, taps_y, *heads_);
  };
  terms.src = term(w.lambda_src, [&] { return src_loss(logged_pairs()); });
  terms.hdce = term(w.lambda_hdce, [&] { return hdce_loss(logged_pairs(), w.tau, w.beta); });
  terms.scc = term(w.lambda_scc, [&] { return scc_loss(x, out.image, config_.scc, scc_rng); });
  terms.gan_g = term(w.lambda_gan, [&] { return gan_loss_g(*d_, out.image); });

  const Tensor total = total_loss(terms, w, step);
  row.src = value(terms.src);
  row.scc = value(terms.scc);
  row.hdce = value(terms.hdce);
  row.gan_g = value(terms.gan_g);
  row.total = value(total);
  if (total.requires_grad()) total.backward();
  if (after_backward) after_backward(*this);
  opt_g_.step();

  step_ = step;
  if (config_.log_wall_time) {
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  log_.append(row);
  return row;
}

void Trainer::train(std::int64_t steps, const std::optional<std::filesystem::path>& out_dir) {
  while (step_ < steps) {
    train_step();
    if (out_dir && config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0) {
      save(*out_dir / "checkpoint.ckpt");
      log_.write_csv(*out_dir / "runlog.csv");
    }
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.metadata["format"] = "ssrc-trainer";
  ck.metadata["step"] = std::to_string(step_);
  ck.metadata["config"] = config_.to_json();
  std::ostringstream log;
  for (const auto& r : log_.rows) log << RunLog::format(r) << "\n";
  ck.metadata["runlog"] = log.str();
  ck.add("G.", g_->parameters());
  ck.add("H.", heads_->parameters());
  ck.add("D.", d_->parameters());
  opt_g_.save(ck, "adam_g.");
  opt_d_.save(ck, "adam_d.");
  return ck;
}

void Trainer::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  checkpoint().save(path);
}

Trainer Trainer::resume(const std::filesystem::path& path, std::shared_ptr<const TrainingData> data) {
  const Checkpoint ck = Checkpoint::load(path);
  const auto fmt = ck.metadata.find("format");
  if (fmt == ck.metadata.end() || fmt->second != "ssrc-trainer") {
    throw CheckpointError("checkpoint " + path.string() + " was not written by the trainer");
  }
  Trainer t(parse_train_config(ck.metadata.at("config"), path.string() + " (embedded config)"), std::move(data));
  ck.restore("G.", t.g_->parameters());
  ck.restore("H.", t.heads_->parameters());
  ck.restore("D.", t.d_->parameters());
  t.opt_g_.load(ck, "adam_g.");
  t.opt_d_.load(ck, "adam_d.");
  t.step_ = std::stoll(ck.metadata.at("step"));
  std::stringstream rows(ck.metadata.at("runlog"));
  std::string line;
  while (std::getline(rows, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() == 8) t.log_.append({static_cast<std::int64_t>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6], v[7]});
  }
  return t;
}

std::unique_ptr<Generator> load_generator(const std::filesystem::path& path, TrainConfig* config) {
  const Checkpoint ck = Checkpoint::load(path);
  const auto it = ck.metadata.find("config");
  if (it == ck.metadata.end()) throw CheckpointError("checkpoint " + path.string() + " has no embedded config");
  TrainConfig c = parse_train_config(it->second, path.string() + " (embedded config)");
  std::mt19937_64 rng(c.seed);
  auto g = std::make_unique<Generator>(c.generator, rng);
  ck.restore("G.", g->parameters());
  if (config) *config = c;
  return g;
}

}  // namespace ssrc
