#include "ssrc/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "ssrc/error.hpp"

namespace ssrc {

namespace {

const char* const kClassNames[kNumClasses] = {"sky", "building", "road", "vegetation", "car"};

double color_distance(const Color& a, const Color& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

// Indices of the k smallest scores among `pool`; ties broken by index.
std::vector<std::int64_t> lowest(const std::vector<std::int64_t>& pool, const std::vector<double>& score,
                                 std::int64_t k) {
  std::vector<std::int64_t> order = pool;
  auto cmp = [&](std::int64_t a, std::int64_t b) { return score[a] != score[b] ? score[a] < score[b] : a < b; };
  k = std::min<std::int64_t>(k, static_cast<std::int64_t>(order.size()));
  std::partial_sort(order.begin(), order.begin() + k, order.end(), cmp);
  order.resize(static_cast<std::size_t>(k));
  return order;
}

std::vector<std::int64_t> unassigned(const std::vector<std::uint8_t>& label, std::uint8_t none) {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < label.size(); ++i)
    if (label[i] == none) out.push_back(static_cast<std::int64_t>(i));
  return out;
}

// One layout attempt; returns false if the structural checks fail.
bool paint_layout(const std::array<std::int64_t, kNumClasses>& counts, std::int64_t h, std::int64_t w,
                  std::mt19937_64& rng, std::vector<std::uint8_t>& label) {
  constexpr std::uint8_t kNone = 255;
  const std::int64_t n = h * w;
  label.assign(static_cast<std::size_t>(n), kNone);
  std::vector<double> score(static_cast<std::size_t>(n));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto U = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto pick = [&](const std::vector<std::int64_t>& pool) {
    return pool[static_cast<std::size_t>(std::min<double>(unit(rng) * pool.size(), pool.size() - 1))];
  };
  std::vector<std::int64_t> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);

  // road band: lowest rows under a tilted horizon
  const double slope = U(-0.15, 0.15);
  for (std::int64_t i = 0; i < n; ++i) score[i] = -(static_cast<double>(i / w) + slope * (i % w - w / 2.0));
  const auto band = lowest(all, score, counts[2] + counts[4]);

  // cars: boxes grown around centers inside the band
  if (counts[4] > 0) {
    const int cars = 1 + static_cast<int>(U(0, 3));
    std::vector<std::array<double, 3>> boxes;
    for (int c = 0; c < cars; ++c) {
      const auto at = pick(band);
      boxes.push_back({static_cast<double>(at % w), static_cast<double>(at / w), U(1.5, 2.5)});
    }
    for (auto i : band) {
      double best = 1e300;
      for (const auto& b : boxes)
        best = std::min(best, std::max(std::abs(i % w - b[0]) / b[2], std::abs(i / w - b[1])));
      score[i] = best;
    }
    for (auto i : lowest(band, score, counts[4])) label[i] = 4;
  }
  for (auto i : band)
    if (label[i] == kNone) label[i] = 2;

  // sky above a skyline of building tops
  auto rest = unassigned(label, kNone);
  {
    std::vector<double> top(static_cast<std::size_t>(w));
    std::int64_t x = 0;
    while (x < w) {
      const auto run = std::max<std::int64_t>(2, static_cast<std::int64_t>(U(0.12, 0.35) * w));
      const double t = U(0.0, 0.45 * h);
      for (std::int64_t k = x; k < std::min(w, x + run); ++k) top[k] = t;
      x += run;
    }
    // the top row always goes first so a feasible sky share covers it
    for (auto i : rest) score[i] = i < w ? -1e9 : static_cast<double>(i / w) - top[i % w];
    for (auto i : lowest(rest, score, counts[0])) label[i] = 0;
  }

  // vegetation blobs near the ground line, in front of the buildings
  rest = unassigned(label, kNone);
  if (counts[3] > 0 && !rest.empty()) {
    std::int64_t deepest = 0;
    for (auto i : rest) deepest = std::max(deepest, i / w);
    std::vector<std::int64_t> ground;
    for (auto i : rest)
      if (i / w >= deepest - std::max<std::int64_t>(1, h / 8)) ground.push_back(i);
    const int blobs = 2 + static_cast<int>(U(0, 3));
    std::vector<std::array<double, 3>> centers;
    for (int b = 0; b < blobs; ++b) {
      const auto at = pick(ground);
      centers.push_back({static_cast<double>(at % w), static_cast<double>(at / w), U(0.7, 1.3)});
    }
    for (auto i : rest) {
      double best = 1e300;
      for (const auto& c : centers) best = std::min(best, std::hypot(i % w - c[0], i / w - c[1]) / c[2]);
      score[i] = best;
    }
    for (auto i : lowest(rest, score, counts[3])) label[i] = 3;
  }
  for (auto& l : label)
    if (l == kNone) l = 1;

  for (std::int64_t x = 0; x < w; ++x) {
    if (label[x] != 0) return false;
    const auto bottom = label[(h - 1) * w + x];
    if (bottom != 2 && bottom != 4) return false;
  }
  return true;
}

ToyScene make_scene(const DomainSpec& spec, std::uint64_t seed, std::int64_t h, std::int64_t w, bool noisy) {
  spec.validate();
  if (h < 16 || w < 16) throw ContractError("generate_scene: height and width must be >= 16");
  const auto counts = class_counts(spec, h * w);
  ToyScene scene;
  scene.height = h;
  scene.width = w;
  scene.domain = spec.name;
  bool ok = false;
  for (int attempt = 0; attempt < spec.retries && !ok; ++attempt) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(attempt)};
    std::mt19937_64 rng(seq);
    ok = paint_layout(counts, h, w, rng, scene.labels);
  }
  if (!ok) {
    std::ostringstream os;
    os << "generate_scene: no valid layout for domain '" << spec.name << "' at " << h << "x" << w << " after "
       << spec.retries << " attempts (sky needs >= one full row, road+car >= one full row)";
    throw GenerationError(os.str());
  }

  const auto proto = spec.prototypes();
  std::vector<Scalar> img(static_cast<std::size_t>(3 * h * w));
  std::seed_seq noise_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x6e6f6973u};
  std::mt19937_64 noise_rng(noise_seq);
  std::normal_distribution<double> gauss(0.0, spec.noise > 0 ? spec.noise : 1.0);
  const auto hw = h * w;
  for (std::int64_t i = 0; i < hw; ++i) {
    for (int c = 0; c < 3; ++c) {
      double v = proto[scene.labels[i]][c];
      if (noisy && spec.noise > 0) v += gauss(noise_rng);
      img[static_cast<std::size_t>(c * hw + i)] = static_cast<Scalar>(std::clamp(v, -1.0, 1.0));
    }
  }
  scene.image = Tensor::from_data({3, h, w}, std::move(img));
  return scene;
}

std::string line_of(const std::string& text, const std::string& key) {
  const auto at = text.find("\"" + key + "\"");
  if (at == std::string::npos) return "";
  return ":" + std::to_string(1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(at), '\n'));
}

}  // namespace

const char* class_name(int c) {
  if (c < 0 || c >= kNumClasses) throw IndexError("class_name: class " + std::to_string(c) + " out of range");
  return kClassNames[c];
}

DomainSpec DomainSpec::source() { return DomainSpec{}; }

DomainSpec DomainSpec::target() {
  DomainSpec s;
  s.name = "target";
  s.frequencies = {0.15, 0.25, 0.25, 0.25, 0.10};
  s.palette = {{
      {185, 200, 215},  // sky
      {110, 110, 120},  // building
      {160, 65, 150},   // road
      {105, 140, 40},   // vegetation
      {30, 55, 145},    // car
  }};
  return s;
}

void DomainSpec::validate() const {
  double sum = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (!(frequencies[c] >= 0 && frequencies[c] <= 1)) {
      throw ConfigError("frequencies: entry '" + std::string(kClassNames[c]) + "' must lie in [0, 1]");
    }
    sum += frequencies[c];
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    std::ostringstream os;
    os << "frequencies: must sum to 1, got " << sum;
    throw ConfigError(os.str());
  }
  for (int c = 0; c < kNumClasses; ++c)
    for (double v : palette[c])
      if (!(v >= 0 && v <= 255)) throw ConfigError("palette: '" + std::string(kClassNames[c]) + "' outside 0..255");
  for (int a = 0; a < kNumClasses; ++a)
    for (int b = a + 1; b < kNumClasses; ++b) {
      const double d = color_distance(palette[a], palette[b]);
      if (d < min_palette_distance) {
        std::ostringstream os;
        os << "palette: '" << kClassNames[a] << "' and '" << kClassNames[b] << "' are " << d
           << " apart, below min_palette_distance " << min_palette_distance;
        throw ConfigError(os.str());
      }
    }
  if (!(noise >= 0)) throw ConfigError("noise: must be >= 0");
  if (!(min_palette_distance >= 0)) throw ConfigError("min_palette_distance: must be >= 0");
  if (retries < 1) throw ConfigError("retries: must be >= 1");
}

std::array<Color, kNumClasses> DomainSpec::prototypes() const {
  std::array<Color, kNumClasses> p{};
  for (int c = 0; c < kNumClasses; ++c)
    for (int k = 0; k < 3; ++k) p[c][k] = palette[c][k] / 127.5 - 1.0;
  return p;
}

DomainSpec parse_domain_spec(const std::string& text, const DomainSpec& base, const std::string& origin) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(origin + ": expected a JSON object");
  DomainSpec s = base;
  std::string field;
  try {
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      field = it.key();
      const auto& v = it.value();
      if (field == "name") {
        s.name = v.get<std::string>();
      } else if (field == "frequencies") {
        if (v.is_array()) {
          if (v.size() != kNumClasses) throw ConfigError("frequencies: expected 5 entries");
          for (int c = 0; c < kNumClasses; ++c) s.frequencies[c] = v.at(c).get<double>();
        } else {
          for (auto f = v.begin(); f != v.end(); ++f) {
            int c = 0;
            while (c < kNumClasses && f.key() != kClassNames[c]) ++c;
            if (c == kNumClasses) throw ConfigError("frequencies: unknown class '" + f.key() + "'");
            s.frequencies[c] = f.value().get<double>();
          }
        }
      } else if (field == "palette") {
        if (!v.is_array() || v.size() != kNumClasses) throw ConfigError("palette: expected 5 RGB triples");
        for (int c = 0; c < kNumClasses; ++c) {
          if (v.at(c).size() != 3) throw ConfigError("palette: expected 5 RGB triples");
          for (int k = 0; k < 3; ++k) s.palette[c][k] = v.at(c).at(k).get<double>();
        }
      } else if (field == "noise") {
        s.noise = v.get<double>();
      } else if (field == "min_palette_distance") {
        s.min_palette_distance = v.get<double>();
      } else if (field == "retries") {
        s.retries = v.get<int>();
      } else {
        throw ConfigError(field + ": unknown key");
      }
    }
    field.clear();
    s.validate();
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    const std::string key = field.empty() ? msg.substr(0, msg.find(':')) : field;
    throw ConfigError(origin + line_of(text, key) + ": " + msg);
  } catch (const json::exception& e) {
    throw ConfigError(origin + line_of(text, field) + ": " + field + ": " + e.what());
  }
  return s;
}

DomainSpec load_domain_spec(const std::filesystem::path& path, const DomainSpec& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open spec file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_domain_spec(ss.str(), base, path.string());
}

std::string domain_spec_to_json(const DomainSpec& spec) {
  nlohmann::ordered_json j;
  j["name"] = spec.name;
  j["frequencies"] = spec.frequencies;
  j["palette"] = spec.palette;
  j["noise"] = spec.noise;
  j["min_palette_distance"] = spec.min_palette_distance;
  j["retries"] = spec.retries;
  return j.dump(2);
}

std::array<std::int64_t, kNumClasses> class_counts(const DomainSpec& spec, std::int64_t pixels) {
  std::array<std::int64_t, kNumClasses> counts{};
  std::array<double, kNumClasses> frac{};
  std::int64_t used = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const double exact = spec.frequencies[c] * static_cast<double>(pixels);
    counts[c] = static_cast<std::int64_t>(std::floor(exact));
    frac[c] = exact - static_cast<double>(counts[c]);
    used += counts[c];
  }
  std::array<int, kNumClasses> order{0, 1, 2, 3, 4};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  for (int k = 0; used < pixels; k = (k + 1) % kNumClasses, ++used) ++counts[order[k]];
  return counts;
}

ToyScene generate_scene(const DomainSpec& spec, std::uint64_t seed, std::int64_t height, std::int64_t width) {
  return make_scene(spec, seed, height, width, true);
}

ToyScene generate_scene_clean(const DomainSpec& spec, std::uint64_t seed, std::int64_t height, std::int64_t width) {
  return make_scene(spec, seed, height, width, false);
}

Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw ContractError("stack_images: no images");
  const auto shape = images.front().shape();
  if (shape.size() != 3) throw ShapeError("stack_images: expected (C, H, W), got " + shape_str(shape));
  std::vector<Scalar> data;
  data.reserve(static_cast<std::size_t>(images.size() * images.front().numel()));
  for (const auto& im : images) {
    if (im.shape() != shape) {
      throw ShapeError("stack_images: mixed shapes " + shape_str(shape) + " and " + shape_str(im.shape()));
    }
    data.insert(data.end(), im.data().begin(), im.data().end());
  }
  return Tensor::from_data({static_cast<std::int64_t>(images.size()), shape[0], shape[1], shape[2]}, std::move(data));
}

Tensor batch_item(const Tensor& batch, std::int64_t b) {
  if (batch.dim() != 4) throw ShapeError("batch_item: expected (B, C, H, W), got " + shape_str(batch.shape()));
  if (b < 0 || b >= batch.size(0)) throw IndexError("batch_item: index out of range");
  const auto per = batch.numel() / batch.size(0);
  auto first = batch.data().begin() + b * per;
  return Tensor::from_data({batch.size(1), batch.size(2), batch.size(3)}, std::vector<Scalar>(first, first + per));
}

std::vector<std::uint8_t> oracle_segment(const Tensor& image, const DomainSpec& spec) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw ShapeError("oracle_segment: expected (3, H, W), got " + shape_str(image.shape()));
  }
  const auto proto = spec.prototypes();
  const auto hw = image.size(1) * image.size(2);
  const Scalar* p = image.data().data();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(hw));
  for (std::int64_t i = 0; i < hw; ++i) {
    const Color px{static_cast<double>(p[i]), static_cast<double>(p[hw + i]), static_cast<double>(p[2 * hw + i])};
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < kNumClasses; ++c) {
      const double d = (px[0] - proto[c][0]) * (px[0] - proto[c][0]) + (px[1] - proto[c][1]) * (px[1] - proto[c][1]) +
                       (px[2] - proto[c][2]) * (px[2] - proto[c][2]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace ssrc
