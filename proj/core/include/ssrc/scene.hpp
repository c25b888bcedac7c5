#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssrc/tensor.hpp"

namespace ssrc {

enum class SceneClass : std::uint8_t { Sky = 0, Building = 1, Road = 2, Vegetation = 3, Car = 4 };
inline constexpr int kNumClasses = 5;
const char* class_name(int c);

using Color = std::array<double, 3>;  // 0..255 per channel

// Parameters of one toy domain. Frequencies are target pixel shares per
// class; every scene is painted with exactly round(f * H * W) pixels of each
// class (largest-remainder rounding), so corpus frequencies match to rounding.
struct DomainSpec {
  std::string name = "source";
  std::array<double, kNumClasses> frequencies{0.30, 0.30, 0.25, 0.10, 0.05};
  std::array<Color, kNumClasses> palette{{
      {110, 170, 235},  // sky
      {150, 105, 85},   // building
      {85, 85, 90},     // road
      {55, 165, 60},    // vegetation
      {215, 45, 45},    // car
  }};
  double noise = 0.06;                 // per-channel Gaussian std, in [-1, 1] image units
  double min_palette_distance = 60.0;  // 0..255 units
  int retries = 8;

  static DomainSpec source();
  static DomainSpec target();

  // Throws ConfigError naming the offending field.
  void validate() const;
  // Prototype colors mapped to [-1, 1].
  std::array<Color, kNumClasses> prototypes() const;
};

// JSON object with optional keys name, frequencies (5 numbers or an object
// keyed by class name), palette (5 RGB triples 0..255), noise,
// min_palette_distance, retries. Missing keys keep `base` values.
// Errors name the field and, when text is available, its line.
DomainSpec parse_domain_spec(const std::string& json_text, const DomainSpec& base = DomainSpec::source(),
                             const std::string& origin = "<spec>");
DomainSpec load_domain_spec(const std::filesystem::path& path, const DomainSpec& base = DomainSpec::source());
std::string domain_spec_to_json(const DomainSpec& spec);

struct ToyScene {
  Tensor image;                       // (3, H, W) in [-1, 1]
  std::vector<std::uint8_t> labels;   // H*W, row-major
  std::int64_t height = 0, width = 0;
  std::string domain;
};

// Layout: a road band along the bottom with a random tilted horizon, cars as
// boxes grown inside the road band, sky above a random skyline, vegetation
// blobs grown in front of the buildings, buildings elsewhere. Deterministic
// in (spec, seed). Throws GenerationError when no valid layout is found
// within spec.retries attempts (top row must be sky, bottom row road/car).
ToyScene generate_scene(const DomainSpec& spec, std::uint64_t seed, std::int64_t height, std::int64_t width);

// Noise-free variant used to check that the palette alone determines labels.
ToyScene generate_scene_clean(const DomainSpec& spec, std::uint64_t seed, std::int64_t height, std::int64_t width);

// Exact per-scene pixel counts for each class.
std::array<std::int64_t, kNumClasses> class_counts(const DomainSpec& spec, std::int64_t pixels);

// Stacks (3, H, W) images into (B, 3, H, W).
Tensor stack_images(const std::vector<Tensor>& images);
// Image b of a (B, C, H, W) batch as (C, H, W).
Tensor batch_item(const Tensor& batch, std::int64_t b);

// Nearest prototype per pixel (Euclidean in RGB), ties to the lowest class.
// image: (3, H, W).
std::vector<std::uint8_t> oracle_segment(const Tensor& image, const DomainSpec& spec);

}  // namespace ssrc
