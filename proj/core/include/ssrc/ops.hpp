#pragma once

#include <cstdint>
#include <vector>

#include "ssrc/tensor.hpp"

// Differentiable operations. Every function records a node when grad mode is
// on and any operand requires grad. Shape errors name the op and the shapes.
namespace ssrc::ops {

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // DomainError on a zero divisor

Tensor add_scalar(const Tensor& a, Scalar s);
Tensor mul_scalar(const Tensor& a, Scalar s);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, Scalar slope);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // DomainError on non-positive entries
Tensor softplus(const Tensor& a);  // log(1 + e^x), overflow-safe
Tensor square(const Tensor& a);

// Reductions. A full reduction yields a scalar (shape []).
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::int64_t axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::int64_t axis, bool keepdim = false);
Tensor logsumexp(const Tensor& a, std::int64_t axis, bool keepdim = false);

Tensor softmax(const Tensor& a, std::int64_t axis);
Tensor log_softmax(const Tensor& a, std::int64_t axis);
// Zero vectors map to zero with zero gradient.
Tensor l2_normalize(const Tensor& a, std::int64_t axis);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::int64_t>& axes);
Tensor transpose(const Tensor& a);  // 2-D only
Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
Tensor slice(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t end);
Tensor index_select(const Tensor& a, std::int64_t axis, const std::vector<std::int64_t>& indices);
// Gathers a.data()[flat[i]] into a tensor of `shape`.
Tensor take(const Tensor& a, const std::vector<std::int64_t>& flat, Shape shape);

Tensor matmul(const Tensor& a, const Tensor& b);  // (M,K) x (K,N)
// Solves sym(A) X = B by Cholesky, sym(A) = (A + A^T) / 2. B is (n) or (n, m).
Tensor cholesky_solve(const Tensor& a, const Tensor& b);

// (N,C,H,W) -> (C*kh*kw, N*Ho*Wo); col2im is its adjoint.
Tensor im2col(const Tensor& x, std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad);
Tensor col2im(const Tensor& cols, const Shape& image_shape, std::int64_t kh, std::int64_t kw,
              std::int64_t stride, std::int64_t pad);

// x (N,C,H,W), w (O,C,kh,kw), bias (O) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride, std::int64_t pad);
// x (N,Cin,H,W), w (Cin,Cout,k,k); output extent (H-1)*stride - 2*pad + k.
Tensor transposed_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride,
                         std::int64_t pad);

// Per-sample, per-channel normalization over H*W, no affine parameters.
Tensor instance_norm(const Tensor& x, Scalar eps = Scalar(1e-5));

}  // namespace ssrc::ops

namespace ssrc {

inline Tensor operator+(const Tensor& a, const Tensor& b) { return ops::add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return ops::sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return ops::mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return ops::div(a, b); }
inline Tensor operator-(const Tensor& a) { return ops::neg(a); }
inline Tensor operator+(const Tensor& a, Scalar s) { return ops::add_scalar(a, s); }
inline Tensor operator+(Scalar s, const Tensor& a) { return ops::add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, Scalar s) { return ops::add_scalar(a, -s); }
inline Tensor operator-(Scalar s, const Tensor& a) { return ops::add_scalar(ops::neg(a), s); }
inline Tensor operator*(const Tensor& a, Scalar s) { return ops::mul_scalar(a, s); }
inline Tensor operator*(Scalar s, const Tensor& a) { return ops::mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, Scalar s) { return ops::mul_scalar(a, Scalar(1) / s); }

}  // namespace ssrc
