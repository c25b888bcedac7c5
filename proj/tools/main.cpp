#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssrc/error.hpp"
#include "ssrc/harness.hpp"
#include "ssrc/image_io.hpp"
#include "ssrc/metrics.hpp"

namespace fs = std::filesystem;
using namespace ssrc;

namespace {

constexpr int kUserError = 2;
constexpr int kNumericalError = 3;
constexpr std::int64_t kSceneSize = 64;

// Input paths are checked up front so a typo gives exit 2 before any work.
void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw IngestionError(std::string(what) + " does not exist: " + p.string());
}

std::string scene_name(std::int64_t i) {
  std::ostringstream os;
  os << "scene_" << std::setw(5) << std::setfill('0') << i << ".png";
  return os.str();
}

int gen_data(const fs::path& spec_path, const fs::path& out, std::int64_t count, std::uint64_t seed) {
  require_exists(spec_path, "spec file");
  if (count < 0) throw ConfigError("--count must be >= 0");
  const DomainSpec spec = load_domain_spec(spec_path);
  nlohmann::ordered_json manifest;
  manifest["domain"] = nlohmann::ordered_json::parse(domain_spec_to_json(spec));
  manifest["seed"] = seed;
  manifest["count"] = count;
  manifest["height"] = kSceneSize;
  manifest["width"] = kSceneSize;
  auto files = nlohmann::ordered_json::array();
  for (std::int64_t i = 0; i < count; ++i) {
    const auto scene = generate_scene(spec, seed + static_cast<std::uint64_t>(i), kSceneSize, kSceneSize);
    const auto name = scene_name(i);
    save_image(scene.image, out / "images" / name);
    save_label_map(scene.labels, scene.height, scene.width, out / "labels" / name);
    files.push_back({{"image", "images/" + name}, {"labels", "labels/" + name}, {"seed", seed + i}});
  }
  manifest["files"] = files;
  fs::create_directories(out);
  std::ofstream(out / "manifest.json") << manifest.dump(2) << "\n";
  std::cout << "wrote " << count << " scenes to " << out.string() << "\n";
  return 0;
}

int train(const fs::path& config_path, const fs::path& out, const std::string& resume) {
  require_exists(config_path, "config file");
  const TrainConfig config = load_train_config(config_path);
  std::optional<Trainer> trainer;
  if (!resume.empty()) {
    require_exists(resume, "checkpoint");
    trainer.emplace(Trainer::resume(resume));
  } else {
    trainer.emplace(config);
  }
  fs::create_directories(out);
  try {
    trainer->train(config.steps, out);
  } catch (const NonFiniteLoss&) {
    trainer->log().write_csv(out / "runlog.csv");
    throw;
  }
  trainer->save(out / "checkpoint.ckpt");
  trainer->log().write_csv(out / "runlog.csv");
  std::cout << "trained to step " << trainer->step() << "; wrote " << (out / "checkpoint.ckpt").string() << "\n";
  return 0;
}

int refine(const fs::path& ckpt, const fs::path& in, const fs::path& out) {
  require_exists(ckpt, "checkpoint");
  require_exists(in, "input directory");
  const auto g = load_generator(ckpt);
  const auto ds = load_image_folder(in, 0);
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor y = g->generate(stack_images({ds.images[i]})).image;
    save_image(batch_item(y, 0), out / ds.files[i].filename());
  }
  fs::create_directories(out);
  std::cout << "refined " << ds.size() << " images into " << out.string() << "\n";
  return 0;
}

int eval(const fs::path& ckpt, const fs::path& data, const fs::path& report_path) {
  require_exists(ckpt, "checkpoint");
  require_exists(data / "images", "image directory");
  require_exists(data / "labels", "label directory");
  TrainConfig config;
  const auto g = load_generator(ckpt, &config);
  const auto ds = load_image_folder(data / "images", 0);
  std::vector<ToyScene> scenes;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ToyScene s;
    s.image = ds.images[i];
    s.height = s.image.size(1);
    s.width = s.image.size(2);
    std::int64_t h = 0, w = 0;
    s.labels = load_label_map(data / "labels" / ds.files[i].filename(), &h, &w);
    if (h != s.height || w != s.width) {
      throw IngestionError(ds.files[i].filename().string() + ": label map size differs from its image");
    }
    scenes.push_back(std::move(s));
  }
  if (scenes.empty()) throw IngestionError("no PNG images in " + (data / "images").string());
  const auto report =
      evaluate_refiner([&](const Tensor& x) { return g->generate(x).image; }, scenes, config.target_spec);
  report.write(report_path);
  std::cout << report.csv_header() << "\n" << report.csv_row() << "\n";
  return 0;
}

// Six panels, one polyline each, every term scaled to its own range.
int plot(const fs::path& log_path, const fs::path& out) {
  require_exists(log_path, "log file");
  const RunLog log = RunLog::read_csv(log_path);
  if (log.rows.empty()) throw IngestionError(log_path.string() + ": log has no rows");
  const char* names[6] = {"src", "scc", "hdce", "gan_g", "gan_d", "total"};
  const char* colors[6] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#333333"};
  auto pick = [](const RunLogRow& r, int k) {
    const double v[6] = {r.src, r.scc, r.hdce, r.gan_g, r.gan_d, r.total};
    return v[k];
  };
  constexpr double pw = 300, ph = 180, margin = 30;
  std::ostringstream svg;
  svg << std::setprecision(6);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 3 * (pw + margin) + margin << "\" height=\""
      << 2 * (ph + 2 * margin) + margin << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const double s0 = static_cast<double>(log.rows.front().step), s1 = static_cast<double>(log.rows.back().step);
  for (int k = 0; k < 6; ++k) {
    const double ox = margin + (k % 3) * (pw + margin), oy = 2 * margin + (k / 3) * (ph + 2 * margin);
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& r : log.rows)
      if (std::isfinite(pick(r, k))) lo = std::min(lo, pick(r, k)), hi = std::max(hi, pick(r, k));
    if (!std::isfinite(lo)) lo = hi = 0;
    const double span = hi > lo ? hi - lo : 1.0;
    svg << "<rect x=\"" << ox << "\" y=\"" << oy << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"#999\"/>\n";
    svg << "<text x=\"" << ox << "\" y=\"" << oy - 8 << "\" font-family=\"sans-serif\" font-size=\"13\">" << names[k]
        << " [" << lo << ", " << hi << "]</text>\n";
    svg << "<polyline fill=\"none\" stroke=\"" << colors[k] << "\" stroke-width=\"1.2\" points=\"";
    for (const auto& r : log.rows) {
      const double v = std::isfinite(pick(r, k)) ? pick(r, k) : lo;
      const double x = ox + (s1 > s0 ? (r.step - s0) / (s1 - s0) : 0.5) * pw;
      const double y = oy + ph - (v - lo) / span * ph;
      svg << x << "," << y << " ";
    }
    svg << "\"/>\n";
  }
  svg << "</svg>\n";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out);
  if (!f) throw IngestionError("cannot write " + out.string());
  f << svg.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssrc: structure-consistent contrastive refinement of synthetic images"};
  app.require_subcommand(1);

  std::string spec, out, config, ckpt, in, data, report, log, resume;
  std::int64_t count = 0;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate labelled toy scenes");
  gen->add_option("--spec", spec, "Domain spec JSON")->required();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--count", count, "Number of scenes")->required();
  gen->add_option("--seed", seed, "First scene seed")->required();

  auto* tr = app.add_subcommand("train", "Train a refiner");
  tr->add_option("--config", config, "Training config JSON")->required();
  tr->add_option("--out", out, "Output directory")->required();
  tr->add_option("--resume", resume, "Continue from a checkpoint");

  auto* rf = app.add_subcommand("refine", "Refine every PNG in a folder");
  rf->add_option("--ckpt", ckpt, "Checkpoint")->required();
  rf->add_option("--in", in, "Input directory")->required();
  rf->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Segmentation scores of refined scenes");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--data", data, "Directory written by gen-data")->required();
  ev->add_option("--report", report, "Report path (writes .csv and .json)")->required();

  auto* pl = app.add_subcommand("plot", "Loss curves as SVG");
  pl->add_option("--log", log, "runlog.csv")->required();
  pl->add_option("--out", out, "SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUserError;
  }

  try {
    if (*gen) return gen_data(spec, out, count, seed);
    if (*tr) return train(config, out, resume);
    if (*rf) return refine(ckpt, in, out);
    if (*ev) return eval(ckpt, data, report);
    if (*pl) return plot(log, out);
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  }
  return kUserError;
}
