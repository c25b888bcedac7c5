#include "ssrc/rsmi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ssrc/ops.hpp"

namespace ssrc {

void RulsifParams::validate() const {
  if (!(alpha >= 0 && alpha < 1)) throw ConfigError("rsmi: alpha must lie in [0, 1)");
  if (max_centers < 1) throw ConfigError("rsmi: max_centers must be >= 1");
  if (!(ridge > 0)) throw ConfigError("rsmi: ridge must be > 0");
}

double median_pairwise_distance(const Tensor& samples) {
  if (samples.dim() != 2) throw ShapeError("median_pairwise_distance: expected (n, d), got " + shape_str(samples.shape()));
  const auto n = samples.shape()[0], d = samples.shape()[1];
  const Scalar* x = samples.data().data();
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::int64_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(x[i * d + k]) - static_cast<double>(x[j * d + k]);
        s += diff * diff;
      }
      dist.push_back(std::sqrt(s));
    }
  if (dist.empty()) return 1.0;
  const auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  return *mid;
}

double median_kernel_width(const Tensor& samples) { return median_pairwise_distance(samples) / std::sqrt(2.0); }

Tensor gaussian_kernel(const Tensor& x, const Tensor& centers, double sigma) {
  if (x.dim() != 2 || centers.dim() != 2 || x.shape()[1] != centers.shape()[1]) {
    throw ShapeError("gaussian_kernel: incompatible shapes " + shape_str(x.shape()) + " and " +
                     shape_str(centers.shape()));
  }
  if (!(sigma > 0)) throw ContractError("gaussian_kernel: sigma must be > 0");
  Tensor xx = ops::sum(ops::square(x), 1, true);                                         // (n, 1)
  Tensor cc = ops::reshape(ops::sum(ops::square(centers), 1), {1, centers.shape()[0]});  // (1, b)
  Tensor sq = xx + cc - ops::matmul(x, ops::transpose(centers)) * Scalar(2);
  return ops::exp(sq * static_cast<Scalar>(-1.0 / (2.0 * sigma * sigma)));
}

RulsifModel fit_ratio(const Tensor& p_side, const Tensor& q_side, const RulsifParams& params) {
  params.validate();
  if (p_side.dim() != 2 || q_side.dim() != 2 || p_side.shape()[1] != q_side.shape()[1]) {
    throw ShapeError("fit_ratio: incompatible shapes " + shape_str(p_side.shape()) + " and " +
                     shape_str(q_side.shape()));
  }
  const auto n_p = p_side.shape()[0], n_q = q_side.shape()[0];
  if (n_p < 1 || n_q < 1) throw ContractError("fit_ratio: need at least one sample per side");
  const auto b = std::min(n_p, params.max_centers);

  NoGradGuard no_grad;
  const Tensor p = p_side.detach();
  const Tensor q = q_side.detach();
  RulsifModel model;
  model.alpha = params.alpha;
  model.ridge = params.ridge;
  model.centers = ops::slice(p, 0, 0, b).detach();
  model.sigma = params.sigma > 0 ? params.sigma : median_kernel_width(p);
  if (!(model.sigma > 0)) model.sigma = 1.0;  // all samples coincide

  const Tensor kp = gaussian_kernel(p, model.centers, model.sigma);  // (n_p, b)
  const Tensor kq = gaussian_kernel(q, model.centers, model.sigma);  // (n_q, b)
  const Tensor h_mat = ops::matmul(ops::transpose(kp), kp) * static_cast<Scalar>(params.alpha / n_p) +
                       ops::matmul(ops::transpose(kq), kq) * static_cast<Scalar>((1.0 - params.alpha) / n_q);
  const Tensor h_vec = ops::mean(kp, 0);  // (b)

  std::vector<Scalar> eye(static_cast<std::size_t>(b * b), Scalar(0));
  for (std::int64_t i = 0; i < b; ++i) eye[static_cast<std::size_t>(i * b + i)] = static_cast<Scalar>(params.ridge);
  const Tensor system = h_mat + Tensor::from_data({b, b}, std::move(eye));

  try {
    model.theta = ops::cholesky_solve(system, h_vec).detach();
  } catch (const NumericalError& e) {
    std::ostringstream os;
    os << "fit_ratio: ridge system singular (b=" << b << ", sigma=" << model.sigma << ", ridge=" << params.ridge
       << "): " << e.what();
    throw NumericalError(os.str());
  }

  const Tensor check = ops::reshape(ops::matmul(system, ops::reshape(model.theta, {b, 1})), {b}) - h_vec;
  double res = 0, norm = 0;
  for (std::int64_t i = 0; i < b; ++i) {
    res += static_cast<double>(check.data()[i]) * static_cast<double>(check.data()[i]);
    norm += static_cast<double>(h_vec.data()[i]) * static_cast<double>(h_vec.data()[i]);
  }
  model.relative_residual = norm > 0 ? std::sqrt(res / norm) : std::sqrt(res);
  return model;
}

Tensor ratio(const RulsifModel& model, const Tensor& x) {
  const auto b = model.theta.numel();
  Tensor k = gaussian_kernel(x, model.centers, model.sigma);
  return ops::reshape(ops::matmul(k, ops::reshape(model.theta, {b, 1})), {x.shape()[0]});
}

Tensor rsmi_estimate(const RulsifModel& model, const Tensor& p_side, const Tensor& q_side) {
  const Tensor gp = ratio(model, p_side);
  const Tensor gq = ratio(model, q_side);
  return ops::mean(gp) - ops::mean(ops::square(gp)) * static_cast<Scalar>(model.alpha / 2.0) -
         ops::mean(ops::square(gq)) * static_cast<Scalar>((1.0 - model.alpha) / 2.0) - Scalar(0.5);
}

PixelPairSample pair_samples(const Tensor& u, const Tensor& v, std::vector<std::int64_t> permutation) {
  if (u.dim() != 2 || v.dim() != 2 || u.shape()[0] != v.shape()[0]) {
    throw ShapeError("pair_samples: incompatible shapes " + shape_str(u.shape()) + " and " + shape_str(v.shape()));
  }
  const auto n = u.shape()[0];
  if (static_cast<std::int64_t>(permutation.size()) != n) {
    throw ContractError("pair_samples: permutation length differs from sample count");
  }
  PixelPairSample s;
  s.joint = ops::concat({u, v}, 1);
  s.product = ops::concat({u, ops::index_select(v, 0, permutation)}, 1);
  for (std::int64_t i = 0; i < n; ++i) s.fixed_points += permutation[static_cast<std::size_t>(i)] == i;
  s.permutation = std::move(permutation);
  return s;
}

PixelPairSample sample_pixel_pairs(const Tensor& x, const Tensor& y, std::int64_t index, std::int64_t n,
                                   std::mt19937_64& rng) {
  if (x.dim() != 4 || x.shape() != y.shape()) {
    throw ShapeError("sample_pixel_pairs: incompatible shapes " + shape_str(x.shape()) + " and " +
                     shape_str(y.shape()));
  }
  const auto batch = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  if (index < 0 || index >= batch) throw IndexError("sample_pixel_pairs: image index out of range");
  if (n < 1 || n > hw) {
    throw ContractError("sample_pixel_pairs: " + std::to_string(n) + " samples from " + std::to_string(hw) +
                        " pixels");
  }
  std::vector<std::int64_t> pool(static_cast<std::size_t>(hw));
  std::iota(pool.begin(), pool.end(), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::int64_t> pick(i, hw - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(n));

  std::vector<std::int64_t> flat;
  flat.reserve(static_cast<std::size_t>(n * c));
  for (auto loc : pool)
    for (std::int64_t ch = 0; ch < c; ++ch) flat.push_back((index * c + ch) * hw + loc);
  const Tensor u = ops::take(x.detach(), flat, {n, c});
  const Tensor v = ops::take(y, flat, {n, c});

  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  PixelPairSample s = pair_samples(u, v, std::move(perm));
  s.locations = std::move(pool);
  return s;
}

Tensor scc_loss(const Tensor& x, const Tensor& y, const SccParams& params, std::mt19937_64& rng) {
  if (x.dim() != 4 || x.shape() != y.shape()) {
    throw ShapeError("scc_loss: incompatible shapes " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
  }
  const auto batch = x.shape()[0];
  if (batch < 1) throw ContractError("scc_loss: empty batch");
  std::vector<Tensor> estimates;
  for (std::int64_t b = 0; b < batch; ++b) {
    const PixelPairSample s = sample_pixel_pairs(x, y, b, params.pixels, rng);
    const RulsifModel model = fit_ratio(s.joint, s.product, params.rulsif);
    estimates.push_back(ops::reshape(rsmi_estimate(model, s.joint, s.product), {1}));
  }
  return -ops::mean(ops::concat(estimates, 0));
}

}  // namespace ssrc
