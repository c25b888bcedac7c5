#include "ssrc/patches.hpp"

#include <numeric>
#include <random>

#include "ssrc/ops.hpp"

namespace ssrc {

PatchPlan sample_plan(const std::vector<std::int64_t>& layer_sizes, std::int64_t patches, std::uint64_t seed) {
  if (patches < 2) throw ContractError("sample_plan: at least 2 patches per layer are required (one negative)");
  std::mt19937_64 rng(seed);
  PatchPlan plan;
  for (auto extent : layer_sizes) {
    if (patches > extent) {
      throw ContractError("sample_plan: " + std::to_string(patches) + " patches requested from a layer of " +
                          std::to_string(extent) + " locations");
    }
    std::vector<std::int64_t> pool(static_cast<std::size_t>(extent));
    std::iota(pool.begin(), pool.end(), 0);
    // partial Fisher-Yates
    for (std::int64_t i = 0; i < patches; ++i) {
      std::uniform_int_distribution<std::int64_t> pick(i, extent - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
    }
    pool.resize(static_cast<std::size_t>(patches));
    plan.indices.push_back(std::move(pool));
  }
  return plan;
}

Tensor PatchEmbeddingSet::input_block(std::size_t layer, std::int64_t b) const {
  const auto s = patches.at(layer);
  return ops::slice(layers.at(layer).w, 0, b * s, (b + 1) * s);
}

Tensor PatchEmbeddingSet::output_block(std::size_t layer, std::int64_t b) const {
  const auto s = patches.at(layer);
  return ops::slice(layers.at(layer).z, 0, b * s, (b + 1) * s);
}

PatchEmbeddingSet build_pairs(const PatchPlan& plan, const std::vector<Tensor>& taps_x,
                              const std::vector<Tensor>& taps_y, const ProjectionHeads& heads) {
  if (taps_x.size() != plan.layers() || taps_y.size() != plan.layers()) {
    throw ContractError("build_pairs: plan has " + std::to_string(plan.layers()) + " layers, taps have " +
                        std::to_string(taps_x.size()) + " and " + std::to_string(taps_y.size()));
  }
  for (std::size_t l = 0; l < plan.layers(); ++l) {
    if (taps_x[l].shape() != taps_y[l].shape()) {
      throw ShapeError("build_pairs: layer " + std::to_string(l) + " tap shapes differ: " +
                       shape_str(taps_x[l].shape()) + " vs " + shape_str(taps_y[l].shape()));
    }
  }
  auto w = heads.project(taps_x, plan.indices);
  auto z = heads.project(taps_y, plan.indices);
  PatchEmbeddingSet set;
  set.batch = taps_x.empty() ? 0 : taps_x.front().shape()[0];
  for (std::size_t l = 0; l < plan.layers(); ++l) {
    set.layers.push_back({w[l], z[l]});
    set.patches.push_back(static_cast<std::int64_t>(plan.indices[l].size()));
  }
  return set;
}

}  // namespace ssrc
