#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "ssrc/tensor.hpp"

namespace ssrc {

// Relative squared-loss mutual information between two pixel variables,
// estimated with a closed-form least-squares relative density-ratio fit
// (Gaussian kernel model g(v) = sum_l theta_l K(v, c_l)).
//
// The numerator side ("P-side") holds joint samples (u_i, v_i); the
// denominator side ("Q-side") holds product-of-marginals samples
// (u_j, v_pi(j)). The fitted g approximates p / (alpha p + (1 - alpha) q) and
// the plug-in relative Pearson divergence is positive under dependence.

struct RulsifParams {
  double alpha = 0.1;
  std::int64_t max_centers = 100;
  double ridge = 0.1;
  double sigma = 0.0;  // <= 0 selects median_kernel_width()

  void validate() const;
};

struct RulsifModel {
  Tensor centers;  // (b, d), detached
  Tensor theta;    // (b), detached
  double sigma = 1.0;
  double alpha = 0.1;
  double ridge = 0.1;
  double relative_residual = 0.0;  // ||(H + ridge I) theta - h|| / ||h||
};

// Median of pairwise Euclidean distances between rows.
double median_pairwise_distance(const Tensor& samples);

// Median heuristic in the form K(x, c) = exp(-||x - c||^2 / m^2), m the median
// pairwise distance, i.e. sigma = m / sqrt(2).
double median_kernel_width(const Tensor& samples);

// exp(-||x_i - c_l||^2 / (2 sigma^2)), differentiable in both arguments.
Tensor gaussian_kernel(const Tensor& x, const Tensor& centers, double sigma);

// Fits theta = (H + ridge I)^{-1} h using the first b = min(n, max_centers)
// P-side samples as centers. Inputs are read as constants.
RulsifModel fit_ratio(const Tensor& p_side, const Tensor& q_side, const RulsifParams& params);

// g(x) for each row of x: (n).
Tensor ratio(const RulsifModel& model, const Tensor& x);

// Plug-in relative Pearson divergence
//   mean g(p) - alpha/2 mean g(p)^2 - (1 - alpha)/2 mean g(q)^2 - 1/2.
// Differentiable in the samples with the model held fixed.
Tensor rsmi_estimate(const RulsifModel& model, const Tensor& p_side, const Tensor& q_side);

struct PixelPairSample {
  Tensor joint;    // (n, 2d): rows (u_i, v_i)
  Tensor product;  // (n, 2d): rows (u_j, v_perm[j])
  std::vector<std::int64_t> locations;
  std::vector<std::int64_t> permutation;
  std::int64_t fixed_points = 0;
};

// Pairs rows of u and v; v may carry gradient.
PixelPairSample pair_samples(const Tensor& u, const Tensor& v, std::vector<std::int64_t> permutation);

// Samples n distinct pixel locations of image `index` of the (B, C, H, W)
// batches x and y, and a uniform shuffle for the product side. x is read as a
// constant; gradients flow into y.
PixelPairSample sample_pixel_pairs(const Tensor& x, const Tensor& y, std::int64_t index, std::int64_t n,
                                   std::mt19937_64& rng);

struct SccParams {
  std::int64_t pixels = 256;
  RulsifParams rulsif;
};

// -(1/B) sum_b rSMI(x_b, y_b): the ratio model is fit on detached samples,
// then the estimate is re-evaluated on samples connected to y.
Tensor scc_loss(const Tensor& x, const Tensor& y, const SccParams& params, std::mt19937_64& rng);

}  // namespace ssrc
