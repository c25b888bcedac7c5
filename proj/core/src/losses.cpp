#include "ssrc/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ssrc/ops.hpp"

namespace ssrc {

void LossWeights::validate() const {
  if (!(tau > 0)) throw ContractError("loss weights: tau must be > 0");
  if (!(beta >= 0)) throw ContractError("loss weights: beta must be >= 0");
  if (!(lambda_src >= 0 && lambda_scc >= 0 && lambda_hdce >= 0 && lambda_gan >= 0)) {
    throw ContractError("loss weights: every lambda must be >= 0");
  }
}

std::vector<std::int64_t> off_diagonal_indices(std::int64_t n) {
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(n * (n - 1)));
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t c = 0; c < n; ++c)
      if (r != c) idx.push_back(r * n + c);
  return idx;
}

std::vector<std::int64_t> diagonal_indices(std::int64_t n) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < n; ++r) idx[static_cast<std::size_t>(r)] = r * n + r;
  return idx;
}

namespace {

Tensor anchor_similarities(const Tensor& anchor, const Tensor& negatives, const char* op) {
  if (anchor.dim() != 1 || negatives.dim() != 2 || negatives.shape()[1] != anchor.shape()[0]) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(anchor.shape()) + " and " +
                     shape_str(negatives.shape()));
  }
  const auto k = negatives.shape()[0];
  if (k < 1) throw ContractError(std::string(op) + ": at least one negative is required");
  return ops::reshape(ops::matmul(negatives, ops::reshape(anchor, {anchor.shape()[0], 1})), {k});
}

// (S, S) Gram matrix with the diagonal removed: (S, S - 1).
Tensor off_diagonal(const Tensor& gram) {
  const auto s = gram.shape()[0];
  return ops::take(gram, off_diagonal_indices(s), {s, s - 1});
}

void require_pairs(const PatchEmbeddingSet& pairs, const char* op) {
  if (pairs.layers.empty() || pairs.batch < 1) throw ContractError(std::string(op) + ": empty patch set");
  for (auto s : pairs.patches) {
    if (s < 2) throw ContractError(std::string(op) + ": each layer needs S >= 2 patches");
  }
}

}  // namespace

Tensor similarity_distribution(const Tensor& anchor, const Tensor& negatives) {
  return ops::softmax(anchor_similarities(anchor, negatives, "similarity_distribution"), 0);
}

Tensor jensen_shannon_rows(const Tensor& log_p, const Tensor& log_q) {
  if (log_p.shape() != log_q.shape() || log_p.dim() != 2) {
    throw ShapeError("jensen_shannon_rows: incompatible shapes " + shape_str(log_p.shape()) + " and " +
                     shape_str(log_q.shape()));
  }
  Tensor p = ops::exp(log_p);
  Tensor q = ops::exp(log_q);
  // log M = log((p + q) / 2) via a shifted log-add-exp so shared zeros stay finite
  std::vector<Scalar> shift(static_cast<std::size_t>(log_p.numel()));
  for (std::size_t i = 0; i < shift.size(); ++i) shift[i] = std::max(log_p.data()[i], log_q.data()[i]);
  Tensor mx = Tensor::from_data(log_p.shape(), std::move(shift));
  Tensor log_m = mx + ops::log(ops::exp(log_p - mx) + ops::exp(log_q - mx)) - static_cast<Scalar>(std::log(2.0));
  Tensor kl_pm = ops::sum(p * (log_p - log_m), 1);
  Tensor kl_qm = ops::sum(q * (log_q - log_m), 1);
  return (kl_pm + kl_qm) * 0.5;
}

Tensor src_loss(const PatchEmbeddingSet& pairs) {
  require_pairs(pairs, "src_loss");
  std::vector<Tensor> per_block;
  for (std::size_t l = 0; l < pairs.layers.size(); ++l) {
    for (std::int64_t b = 0; b < pairs.batch; ++b) {
      Tensor w = pairs.input_block(l, b);
      Tensor z = pairs.output_block(l, b);
      Tensor log_p = ops::log_softmax(off_diagonal(ops::matmul(w, ops::transpose(w))), 1);
      Tensor log_q = ops::log_softmax(off_diagonal(ops::matmul(z, ops::transpose(z))), 1);
      per_block.push_back(ops::reshape(ops::mean(jensen_shannon_rows(log_p, log_q)), {1}));
    }
  }
  return ops::mean(ops::concat(per_block, 0));
}

Tensor hard_negative_weights_from_similarities(const Tensor& similarities, double beta) {
  if (!(beta >= 0)) throw ContractError("hard_negative_weights: beta must be >= 0");
  if (similarities.dim() < 1 || similarities.shape().back() < 1) {
    throw ContractError("hard_negative_weights: at least one negative is required");
  }
  return ops::softmax(similarities * static_cast<Scalar>(beta), -1);
}

Tensor hard_negative_weights(const Tensor& anchor, const Tensor& negatives, double beta) {
  return hard_negative_weights_from_similarities(anchor_similarities(anchor, negatives, "hard_negative_weights"),
                                                 beta);
}

Tensor hdce_from_similarities(const Tensor& positive, const Tensor& negatives, double tau, double beta) {
  if (!(tau > 0)) throw ContractError("hdce: tau must be > 0");
  if (positive.dim() != 1 || negatives.dim() != 2 || negatives.shape()[0] != positive.shape()[0]) {
    throw ShapeError("hdce: incompatible shapes " + shape_str(positive.shape()) + " and " +
                     shape_str(negatives.shape()));
  }
  const auto k = negatives.shape()[1];
  if (k < 1) throw ContractError("hdce: at least one negative is required");
  const auto inv_tau = static_cast<Scalar>(1.0 / tau);
  Tensor weights = hard_negative_weights_from_similarities(negatives, beta);
  Tensor expected = ops::sum(weights * ops::exp(negatives * inv_tau), 1);
  Tensor per_query = ops::log(expected) - positive * inv_tau + static_cast<Scalar>(std::log(static_cast<double>(k)));
  return ops::mean(per_query);
}

Tensor hdce_loss(const PatchEmbeddingSet& pairs, double tau, double beta) {
  require_pairs(pairs, "hdce_loss");
  std::vector<Tensor> per_block;
  for (std::size_t l = 0; l < pairs.layers.size(); ++l) {
    const auto s = pairs.patches[l];
    for (std::int64_t b = 0; b < pairs.batch; ++b) {
      Tensor cross = ops::matmul(pairs.input_block(l, b), ops::transpose(pairs.output_block(l, b)));
      Tensor pos = ops::take(cross, diagonal_indices(s), {s});
      Tensor neg = off_diagonal(cross);
      per_block.push_back(ops::reshape(hdce_from_similarities(pos, neg, tau, beta), {1}));
    }
  }
  return ops::mean(ops::concat(per_block, 0));
}

Tensor gan_loss_d(const Tensor& real_scores, const Tensor& fake_scores) {
  // -log sigmoid(r) = softplus(-r);  -log(1 - sigmoid(f)) = softplus(f)
  return ops::mean(ops::softplus(-real_scores)) + ops::mean(ops::softplus(fake_scores));
}

Tensor gan_loss_g(const Tensor& fake_scores) { return ops::mean(ops::softplus(-fake_scores)); }

Tensor gan_loss_d(const Discriminator& d, const Tensor& real, const Tensor& fake) {
  return gan_loss_d(d.discriminate(real), d.discriminate(fake));
}

Tensor gan_loss_g(const Discriminator& d, const Tensor& fake) { return gan_loss_g(d.discriminate(fake)); }

Tensor total_loss(const LossTerms& terms, const LossWeights& weights, std::int64_t step) {
  weights.validate();
  const std::pair<const char*, const Tensor*> named[] = {
      {"src", &terms.src}, {"scc", &terms.scc}, {"hdce", &terms.hdce}, {"gan_g", &terms.gan_g}};
  for (const auto& [name, t] : named) {
    if (!t->defined()) throw ContractError(std::string("total_loss: term '") + name + "' is undefined");
    if (t->numel() != 1) throw ContractError(std::string("total_loss: term '") + name + "' is not a scalar");
    if (!std::isfinite(static_cast<double>(t->item()))) throw NonFiniteLoss(name, step);
  }
  return terms.src * static_cast<Scalar>(weights.lambda_src) + terms.scc * static_cast<Scalar>(weights.lambda_scc) +
         terms.hdce * static_cast<Scalar>(weights.lambda_hdce) +
         terms.gan_g * static_cast<Scalar>(weights.lambda_gan);
}

}  // namespace ssrc
