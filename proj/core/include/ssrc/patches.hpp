#pragma once

#include <cstdint>
#include <vector>

#include "ssrc/nets.hpp"
#include "ssrc/tensor.hpp"

namespace ssrc {

// Sampled flat spatial indices per tap layer, shared by the input-side and
// output-side features.
struct PatchPlan {
  std::vector<std::vector<std::int64_t>> indices;

  std::size_t layers() const { return indices.size(); }
};

// Per tap layer, aligned unit-norm embeddings of the sampled locations:
// `w` from the input (synthetic) image, `z` from the refined output. Both are
// (batch * patches, E), image-major. For query q of image b the positive is
// row q on the other side; the negatives are the other patches of image b.
struct PatchEmbeddingSet {
  struct Layer {
    Tensor w;
    Tensor z;
  };
  std::vector<Layer> layers;
  std::int64_t batch = 0;
  std::vector<std::int64_t> patches;  // S per layer

  std::int64_t negatives(std::size_t layer) const { return patches.at(layer) - 1; }
  // Rows of image b for one side of one layer: (S, E).
  Tensor input_block(std::size_t layer, std::int64_t b) const;
  Tensor output_block(std::size_t layer, std::int64_t b) const;
};

// Uniform sampling without replacement of `patches` indices out of each layer
// extent. Deterministic in `seed`.
PatchPlan sample_plan(const std::vector<std::int64_t>& layer_sizes, std::int64_t patches, std::uint64_t seed);

PatchEmbeddingSet build_pairs(const PatchPlan& plan, const std::vector<Tensor>& taps_x,
                              const std::vector<Tensor>& taps_y, const ProjectionHeads& heads);

}  // namespace ssrc
