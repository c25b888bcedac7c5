#pragma once

#include <cstdint>

#include "ssrc/nets.hpp"
#include "ssrc/patches.hpp"
#include "ssrc/tensor.hpp"

namespace ssrc {

struct LossWeights {
  double lambda_src = 0.05;
  double lambda_scc = 1.0;
  double lambda_hdce = 1.0;
  double lambda_gan = 1.0;
  double tau = 0.07;  // hDCE temperature
  double beta = 1.0;  // hard-negative concentration

  void validate() const;
};

// softmax_i(anchor . negatives_i). anchor (E), negatives (K, E) -> (K).
Tensor similarity_distribution(const Tensor& anchor, const Tensor& negatives);

// Row-wise JSD between distributions given by their logs: (Q, K) -> (Q).
Tensor jensen_shannon_rows(const Tensor& log_p, const Tensor& log_q);

// Semantic relation consistency: mean over tap layers, images and queries of
// JSD(P_q || Q_q), where P_q is the softmax of w_q . w_i and Q_q the softmax of
// z_q . z_i over the other patches i != q of the same image.
Tensor src_loss(const PatchEmbeddingSet& pairs);

// Self-normalized weights exp(beta * sim_i) / sum_j exp(beta * sim_j).
Tensor hard_negative_weights(const Tensor& anchor, const Tensor& negatives, double beta);
Tensor hard_negative_weights_from_similarities(const Tensor& similarities, double beta);  // row-wise

// Decoupled contrastive loss with hard-negative reweighting. positive (Q),
// negatives (Q, K), entries are inner products. Per query:
//   -s+/tau + log K + log sum_i w_i exp(s_i/tau),  w = hard_negative_weights(s, beta)
// averaged over queries. No positive term appears in the denominator.
Tensor hdce_from_similarities(const Tensor& positive, const Tensor& negatives, double tau, double beta);

// hDCE over a patch set: s+ = w_q . z_q, s_i = w_q . z_i (i != q), averaged
// over queries, images and tap layers.
Tensor hdce_loss(const PatchEmbeddingSet& pairs, double tau, double beta);

// Discriminator side of the adversarial objective, negated for minimization:
//   -(E log sigmoid(real) + E log(1 - sigmoid(fake))).
Tensor gan_loss_d(const Tensor& real_scores, const Tensor& fake_scores);
// Non-saturating generator loss -E log sigmoid(fake).
Tensor gan_loss_g(const Tensor& fake_scores);
Tensor gan_loss_d(const Discriminator& d, const Tensor& real, const Tensor& fake);
Tensor gan_loss_g(const Discriminator& d, const Tensor& fake);

struct LossTerms {
  Tensor src;
  Tensor scc;
  Tensor hdce;
  Tensor gan_g;
};

// lambda_src*src + lambda_scc*scc + lambda_hdce*hdce + lambda_gan*gan_g.
// Throws NonFiniteLoss naming the first non-finite term.
Tensor total_loss(const LossTerms& terms, const LossWeights& weights, std::int64_t step = -1);

// Flat indices of the off-diagonal entries of an (n, n) matrix, row-major,
// yielding an (n, n - 1) layout.
std::vector<std::int64_t> off_diagonal_indices(std::int64_t n);
std::vector<std::int64_t> diagonal_indices(std::int64_t n);

}  // namespace ssrc
