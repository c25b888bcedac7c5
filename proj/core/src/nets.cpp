#include "ssrc/nets.hpp"

#include <algorithm>
#include <numeric>

#include "ssrc/ops.hpp"

namespace ssrc {

namespace {

Tensor gaussian(Shape shape, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  std::vector<Scalar> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = static_cast<Scalar>(dist(rng));
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

void set_requires_grad(const ParameterList& params, bool flag) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(flag);
  }
}

void zero_grad(const ParameterList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

std::int64_t parameter_count(const ParameterList& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

// ---- layers -------------------------------------------------------------

Conv2d::Conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride_, std::int64_t pad_,
               std::mt19937_64& rng, const InitOptions& init)
    : weight(gaussian({out, in, kernel, kernel}, init.weight_std, rng)),
      bias(Tensor::zeros({out}, true)),
      stride(stride_),
      pad(pad_) {}

Tensor Conv2d::forward(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, pad); }

void Conv2d::append_parameters(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

ConvTranspose2d::ConvTranspose2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride_,
                                 std::int64_t pad_, std::mt19937_64& rng, const InitOptions& init)
    : weight(gaussian({in, out, kernel, kernel}, init.weight_std, rng)),
      bias(Tensor::zeros({out}, true)),
      stride(stride_),
      pad(pad_) {}

Tensor ConvTranspose2d::forward(const Tensor& x) const {
  return ops::transposed_conv2d(x, weight, bias, stride, pad);
}

void ConvTranspose2d::append_parameters(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Linear::Linear(std::int64_t in, std::int64_t out, std::mt19937_64& rng, const InitOptions& init)
    : weight(gaussian({in, out}, init.weight_std, rng)), bias(Tensor::zeros({out}, true)) {}

Tensor Linear::forward(const Tensor& x) const { return ops::matmul(x, weight) + bias; }

void Linear::append_parameters(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

// ---- generator ----------------------------------------------------------

void GeneratorConfig::validate() const {
  if (in_channels < 1 || base_width < 1 || max_width < base_width) {
    throw ConfigError("generator: channel widths must be positive and max_width >= base_width");
  }
  if (downsampling < 0 || residual_blocks < 0) throw ConfigError("generator: negative stage count");
  if (tap_layers.empty()) throw ConfigError("generator: at least one tap layer is required");
  for (std::size_t i = 0; i < tap_layers.size(); ++i) {
    if (tap_layers[i] < 0 || tap_layers[i] >= encoder_depth()) {
      throw ConfigError("generator: tap layer " + std::to_string(tap_layers[i]) + " outside encoder depth " +
                        std::to_string(encoder_depth()));
    }
    if (i > 0 && tap_layers[i] <= tap_layers[i - 1]) throw ConfigError("generator: tap layers must strictly increase");
  }
}

std::int64_t GeneratorConfig::width_at(std::int64_t layer) const {
  if (layer == 0) return in_channels;
  const std::int64_t stage = std::min(layer - 1, downsampling);
  return std::min(base_width << stage, max_width);
}

Generator::Generator(GeneratorConfig config, std::mt19937_64& rng, const InitOptions& init)
    : config_(std::move(config)) {
  config_.validate();
  const auto d = config_.downsampling;
  stem_ = Conv2d(config_.in_channels, config_.width_at(1), 3, 1, 1, rng, init);
  for (std::int64_t k = 1; k <= d; ++k) {
    down_.emplace_back(config_.width_at(k), config_.width_at(k + 1), 3, 2, 1, rng, init);
  }
  const auto deep = config_.width_at(d + 1);
  for (std::int64_t r = 0; r < config_.residual_blocks; ++r) {
    residual_.push_back({Conv2d(deep, deep, 3, 1, 1, rng, init), Conv2d(deep, deep, 3, 1, 1, rng, init)});
  }
  for (std::int64_t k = d; k >= 1; --k) {
    up_.emplace_back(config_.width_at(k + 1), config_.width_at(k), 4, 2, 1, rng, init);
  }
  out_ = Conv2d(config_.width_at(1), config_.in_channels, 3, 1, 1, rng, init);
}

void Generator::check_input(const Tensor& x) const {
  if (x.dim() != 4 || x.shape()[1] != config_.in_channels) {
    throw ShapeError("generator: expected (B, " + std::to_string(config_.in_channels) + ", H, W), got " +
                     shape_str(x.shape()));
  }
  const std::int64_t m = std::int64_t{1} << config_.downsampling;
  if (x.shape()[2] % m != 0 || x.shape()[3] % m != 0) {
    throw ConfigError("generator: spatial size " + std::to_string(x.shape()[2]) + "x" + std::to_string(x.shape()[3]) +
                      " not divisible by " + std::to_string(m));
  }
}

std::vector<Tensor> Generator::run_encoder(const Tensor& x, std::int64_t last) const {
  std::vector<Tensor> layers{x};
  if (last < 1) return layers;
  layers.push_back(ops::relu(ops::instance_norm(stem_.forward(x))));
  for (std::size_t k = 0; k < down_.size() && static_cast<std::int64_t>(layers.size()) <= last; ++k) {
    layers.push_back(ops::relu(ops::instance_norm(down_[k].forward(layers.back()))));
  }
  if (static_cast<std::int64_t>(layers.size()) <= last) {
    Tensor h = layers.back();
    for (const auto& block : residual_) {
      Tensor r = ops::relu(ops::instance_norm(block.a.forward(h)));
      r = ops::instance_norm(block.b.forward(r));
      h = h + r;
    }
    layers.push_back(h);
  }
  return layers;
}

GeneratorOutput Generator::generate(const Tensor& x) const {
  check_input(x);
  auto layers = run_encoder(x, config_.encoder_depth() - 1);
  Tensor h = layers.back();
  for (const auto& up : up_) h = ops::relu(ops::instance_norm(up.forward(h)));
  GeneratorOutput out;
  out.image = ops::tanh(out_.forward(h));
  for (auto t : config_.tap_layers) out.taps.push_back(layers[static_cast<std::size_t>(t)]);
  return out;
}

std::vector<Tensor> Generator::encode_taps(const Tensor& img) const {
  check_input(img);
  auto layers = run_encoder(img, config_.tap_layers.back());
  std::vector<Tensor> taps;
  for (auto t : config_.tap_layers) taps.push_back(layers[static_cast<std::size_t>(t)]);
  return taps;
}

std::vector<std::int64_t> Generator::tap_channels() const {
  std::vector<std::int64_t> c;
  for (auto t : config_.tap_layers) c.push_back(config_.width_at(t));
  return c;
}

std::vector<std::int64_t> Generator::tap_spatial_sizes(std::int64_t height, std::int64_t width) const {
  std::vector<std::int64_t> s;
  for (auto t : config_.tap_layers) {
    const std::int64_t stages = std::clamp<std::int64_t>(t - 1, 0, config_.downsampling);
    s.push_back((height >> stages) * (width >> stages));
  }
  return s;
}

ParameterList Generator::encoder_parameters() const {
  ParameterList p;
  stem_.append_parameters("enc.stem", p);
  for (std::size_t k = 0; k < down_.size(); ++k) down_[k].append_parameters("enc.down" + std::to_string(k), p);
  for (std::size_t r = 0; r < residual_.size(); ++r) {
    residual_[r].a.append_parameters("enc.res" + std::to_string(r) + ".a", p);
    residual_[r].b.append_parameters("enc.res" + std::to_string(r) + ".b", p);
  }
  return p;
}

ParameterList Generator::parameters() const {
  ParameterList p = encoder_parameters();
  for (std::size_t k = 0; k < up_.size(); ++k) up_[k].append_parameters("dec.up" + std::to_string(k), p);
  out_.append_parameters("dec.out", p);
  return p;
}

void Generator::zero_output_layer() {
  for (auto& v : out_.weight.mutable_data()) v = 0;
  for (auto& v : out_.bias.mutable_data()) v = 0;
}

// ---- projection heads ---------------------------------------------------

ProjectionHeads::ProjectionHeads(const std::vector<std::int64_t>& tap_channels, std::int64_t embed_dim,
                                 std::mt19937_64& rng, const InitOptions& init)
    : embed_dim_(embed_dim) {
  if (embed_dim < 1) throw ConfigError("projection heads: embedding dimension must be positive");
  for (auto c : tap_channels) {
    first_.emplace_back(c, embed_dim, rng, init);
    second_.emplace_back(embed_dim, embed_dim, rng, init);
  }
}

std::vector<Tensor> ProjectionHeads::project(const std::vector<Tensor>& taps,
                                             const std::vector<std::vector<std::int64_t>>& locations) const {
  if (taps.size() != first_.size() || locations.size() != first_.size()) {
    throw ContractError("project: expected " + std::to_string(first_.size()) + " tap layers, got " +
                        std::to_string(taps.size()) + " taps and " + std::to_string(locations.size()) +
                        " location lists");
  }
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < taps.size(); ++l) {
    const Tensor& tap = taps[l];
    if (tap.dim() != 4) throw ShapeError("project: tap must be (B,C,H,W), got " + shape_str(tap.shape()));
    const std::int64_t b = tap.shape()[0], c = tap.shape()[1], hw = tap.shape()[2] * tap.shape()[3];
    const auto& loc = locations[l];
    const auto s = static_cast<std::int64_t>(loc.size());
    std::vector<std::int64_t> flat;
    flat.reserve(static_cast<std::size_t>(b * s * c));
    for (std::int64_t i = 0; i < b; ++i)
      for (auto p : loc) {
        if (p < 0 || p >= hw) {
          throw IndexError("project: location " + std::to_string(p) + " outside layer " + std::to_string(l) +
                           " of extent " + std::to_string(hw));
        }
        for (std::int64_t ch = 0; ch < c; ++ch) flat.push_back((i * c + ch) * hw + p);
      }
    Tensor feats = ops::take(tap, flat, {b * s, c});
    Tensor h = ops::relu(first_[l].forward(feats));
    out.push_back(ops::l2_normalize(second_[l].forward(h), 1));
  }
  return out;
}

ParameterList ProjectionHeads::parameters() const {
  ParameterList p;
  for (std::size_t l = 0; l < first_.size(); ++l) {
    first_[l].append_parameters("head" + std::to_string(l) + ".fc1", p);
    second_[l].append_parameters("head" + std::to_string(l) + ".fc2", p);
  }
  return p;
}

// ---- discriminator ------------------------------------------------------

void DiscriminatorConfig::validate() const {
  if (in_channels < 1 || stages < 1 || base_width < 1 || max_width < base_width) {
    throw ConfigError("discriminator: invalid widths or stage count");
  }
}

Discriminator::Discriminator(DiscriminatorConfig config, std::mt19937_64& rng, const InitOptions& init)
    : config_(config) {
  config_.validate();
  std::int64_t in = config_.in_channels;
  for (std::int64_t s = 0; s < config_.stages; ++s) {
    const std::int64_t out = std::min(config_.base_width << s, config_.max_width);
    stages_.emplace_back(in, out, 4, 2, 1, rng, init);
    in = out;
  }
  head_ = Conv2d(in, 1, 3, 1, 1, rng, init);
}

Tensor Discriminator::discriminate(const Tensor& img) const {
  if (img.dim() != 4 || img.shape()[1] != config_.in_channels) {
    throw ShapeError("discriminator: expected (B, " + std::to_string(config_.in_channels) + ", H, W), got " +
                     shape_str(img.shape()));
  }
  Tensor h = img;
  for (const auto& s : stages_) h = ops::leaky_relu(s.forward(h), static_cast<Scalar>(config_.slope));
  return head_.forward(h);
}

ParameterList Discriminator::parameters() const {
  ParameterList p;
  for (std::size_t s = 0; s < stages_.size(); ++s) stages_[s].append_parameters("disc.stage" + std::to_string(s), p);
  head_.append_parameters("disc.head", p);
  return p;
}

}  // namespace ssrc
