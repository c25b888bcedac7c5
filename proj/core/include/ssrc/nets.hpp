#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ssrc/tensor.hpp"

namespace ssrc {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

void set_requires_grad(const ParameterList& params, bool flag);
void zero_grad(const ParameterList& params);
std::int64_t parameter_count(const ParameterList& params);

// Conv weights and linear weights ~ N(0, std), biases zero.
struct InitOptions {
  double weight_std = 0.02;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t pad,
         std::mt19937_64& rng, const InitOptions& init = {});
  Tensor forward(const Tensor& x) const;
  void append_parameters(const std::string& prefix, ParameterList& out) const;

  Tensor weight, bias;
  std::int64_t stride = 1, pad = 0;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t pad,
                  std::mt19937_64& rng, const InitOptions& init = {});
  Tensor forward(const Tensor& x) const;
  void append_parameters(const std::string& prefix, ParameterList& out) const;

  Tensor weight, bias;
  std::int64_t stride = 1, pad = 0;
};

// y = x W + b with W of shape (in, out).
class Linear {
 public:
  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, std::mt19937_64& rng, const InitOptions& init = {});
  Tensor forward(const Tensor& x) const;
  void append_parameters(const std::string& prefix, ParameterList& out) const;

  Tensor weight, bias;
};

// Encoder layer indices: 0 = input image, 1 = stem conv, 1 + k = k-th
// downsampling stage, downsampling + 2 = output of the residual stack.
struct GeneratorConfig {
  std::int64_t in_channels = 3;
  std::int64_t base_width = 16;
  std::int64_t max_width = 64;
  std::int64_t residual_blocks = 2;
  std::int64_t downsampling = 2;
  std::vector<std::int64_t> tap_layers{0, 2, 4};

  void validate() const;
  std::int64_t encoder_depth() const { return downsampling + 3; }
  std::int64_t width_at(std::int64_t layer) const;  // channel count of encoder layer output
};

struct GeneratorOutput {
  Tensor image;
  std::vector<Tensor> taps;
};

class Generator {
 public:
  Generator(GeneratorConfig config, std::mt19937_64& rng, const InitOptions& init = {});

  // x: (B, C, H, W) with H, W divisible by 2^downsampling. Output in (-1, 1).
  GeneratorOutput generate(const Tensor& x) const;
  // Tap activations computed with the same encoder parameters as generate().
  std::vector<Tensor> encode_taps(const Tensor& img) const;

  const GeneratorConfig& config() const { return config_; }
  std::vector<std::int64_t> tap_channels() const;
  // Spatial extent (H*W) of each tap for an input of the given size.
  std::vector<std::int64_t> tap_spatial_sizes(std::int64_t height, std::int64_t width) const;

  ParameterList parameters() const;
  ParameterList encoder_parameters() const;
  void zero_output_layer();

 private:
  struct Residual {
    Conv2d a, b;
  };
  void check_input(const Tensor& x) const;
  // Outputs of encoder layers 0..last (inclusive).
  std::vector<Tensor> run_encoder(const Tensor& x, std::int64_t last) const;

  GeneratorConfig config_;
  Conv2d stem_;
  std::vector<Conv2d> down_;
  std::vector<Residual> residual_;
  std::vector<ConvTranspose2d> up_;
  Conv2d out_;
};

// One 2-layer MLP per tap layer followed by L2 normalization.
class ProjectionHeads {
 public:
  ProjectionHeads(const std::vector<std::int64_t>& tap_channels, std::int64_t embed_dim, std::mt19937_64& rng,
                  const InitOptions& init = {});

  // taps[l]: (B, C_l, H_l, W_l); locations[l]: flat spatial indices shared by
  // every image of the batch. Returns per layer a (B*S_l, E) unit-norm matrix,
  // rows ordered image-major.
  std::vector<Tensor> project(const std::vector<Tensor>& taps,
                              const std::vector<std::vector<std::int64_t>>& locations) const;

  std::int64_t embed_dim() const { return embed_dim_; }
  std::size_t layers() const { return first_.size(); }
  ParameterList parameters() const;

 private:
  std::int64_t embed_dim_;
  std::vector<Linear> first_, second_;
};

struct DiscriminatorConfig {
  std::int64_t in_channels = 3;
  std::int64_t stages = 3;
  std::int64_t base_width = 16;
  std::int64_t max_width = 64;
  double slope = 0.2;

  void validate() const;
};

// Stride-2 conv stages with leaky ReLU, then a 3x3 conv to one channel of
// pre-sigmoid patch scores: (B, 1, H / 2^stages, W / 2^stages).
class Discriminator {
 public:
  Discriminator(DiscriminatorConfig config, std::mt19937_64& rng, const InitOptions& init = {});
  Tensor discriminate(const Tensor& img) const;
  const DiscriminatorConfig& config() const { return config_; }
  ParameterList parameters() const;

 private:
  DiscriminatorConfig config_;
  std::vector<Conv2d> stages_;
  Conv2d head_;
};

}  // namespace ssrc
