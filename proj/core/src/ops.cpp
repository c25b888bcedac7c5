#include "ssrc/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ssrc::ops {

namespace {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;
using Index = std::int64_t;

// Gradient buffer of `t`, or nullptr when it does not take part in backward.
Scalar* grad_of(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return t.impl().grad_buffer().data();
}

const std::vector<Scalar>& out_grad(const TensorImpl& out) { return out.grad; }

Index normalize_axis(Index axis, Index rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw IndexError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return axis;
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// ---- broadcasting -------------------------------------------------------

struct Broadcast {
  Shape out;
  std::vector<Index> stride_a, stride_b;  // in output rank, 0 on broadcast axes
  bool same = false;
};

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  p.out.assign(rank, 1);
  p.stride_a.assign(rank, 0);
  p.stride_b.assign(rank, 0);
  Index sa = 1, sb = 1;
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t d = rank - 1 - k;
    const Index ea = k < a.size() ? a[a.size() - 1 - k] : 1;
    const Index eb = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (ea != eb && ea != 1 && eb != 1) shape_mismatch(op, a, b);
    p.out[d] = std::max(ea, eb);
    p.stride_a[d] = ea == 1 ? 0 : sa;
    p.stride_b[d] = eb == 1 ? 0 : sb;
    sa *= ea;
    sb *= eb;
  }
  return p;
}

template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const Index n = numel_of(p.out);
  if (p.same) {
    for (Index i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = p.out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  const Index inner = p.out.back();
  const Index isa = p.stride_a.back(), isb = p.stride_b.back();
  std::vector<Index> counter(rank, 0);
  Index oa = 0, ob = 0;
  for (Index base = 0; base < n; base += inner) {
    Index ia = oa, ib = ob;
    for (Index j = 0; j < inner; ++j, ia += isa, ib += isb) f(base + j, ia, ib);
    // advance the odometer over the leading axes
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      oa += p.stride_a[d];
      ob += p.stride_b[d];
      if (counter[d] < p.out[d]) break;
      oa -= p.stride_a[d] * counter[d];
      ob -= p.stride_b[d] * counter[d];
      counter[d] = 0;
    }
  }
}

template <class Fwd, class Bwd>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  auto plan = plan_broadcast(op, a.shape(), b.shape());
  std::vector<Scalar> out(static_cast<std::size_t>(numel_of(plan.out)));
  const Scalar* pa = a.data().data();
  const Scalar* pb = b.data().data();
  for_each_broadcast(plan, [&](Index io, Index ia, Index ib) { out[io] = fwd(pa[ia], pb[ib]); });
  Shape shape = plan.out;
  return Tensor::make_result(std::move(shape), std::move(out), op, {a, b},
                             [a, b, plan = std::move(plan), bwd](const TensorImpl& o) {
                               const Scalar* g = out_grad(o).data();
                               Scalar* ga = grad_of(a);
                               Scalar* gb = grad_of(b);
                               const Scalar* pa = a.data().data();
                               const Scalar* pb = b.data().data();
                               for_each_broadcast(plan, [&](Index io, Index ia, Index ib) {
                                 bwd(g[io], pa[ia], pb[ib], o.data[io], ga ? &ga[ia] : nullptr,
                                     gb ? &gb[ib] : nullptr);
                               });
                             });
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto in = a.data();
  std::vector<Scalar> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return Tensor::make_result(a.shape(), std::move(out), op, {a}, [a, deriv](const TensorImpl& o) {
    Scalar* ga = grad_of(a);
    if (!ga) return;
    const auto& g = out_grad(o);
    const auto in = a.data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(in[i], o.data[i]);
  });
}

struct AxisSplit {
  Index outer, n, inner;
};

AxisSplit split_axis(const Shape& s, Index axis) {
  AxisSplit r{1, s[static_cast<std::size_t>(axis)], 1};
  for (Index k = 0; k < axis; ++k) r.outer *= s[static_cast<std::size_t>(k)];
  for (Index k = axis + 1; k < static_cast<Index>(s.size()); ++k) r.inner *= s[static_cast<std::size_t>(k)];
  return r;
}

Shape reduced_shape(const Shape& s, Index axis, bool keepdim) {
  Shape r = s;
  if (keepdim) {
    r[static_cast<std::size_t>(axis)] = 1;
  } else {
    r.erase(r.begin() + axis);
  }
  return r;
}

}  // namespace

// ---- elementwise --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](Scalar x, Scalar y) { return x + y; },
      [](Scalar g, Scalar, Scalar, Scalar, Scalar* ga, Scalar* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](Scalar x, Scalar y) { return x - y; },
      [](Scalar g, Scalar, Scalar, Scalar, Scalar* ga, Scalar* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](Scalar x, Scalar y) { return x * y; },
      [](Scalar g, Scalar x, Scalar y, Scalar, Scalar* ga, Scalar* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (Scalar v : b.data()) {
    if (v == Scalar(0)) throw DomainError("div: zero divisor in operand of shape " + shape_str(b.shape()));
  }
  return binary(
      "div", a, b, [](Scalar x, Scalar y) { return x / y; },
      [](Scalar g, Scalar x, Scalar y, Scalar, Scalar* ga, Scalar* gb) {
        if (ga) *ga += g / y;
        if (gb) *gb -= g * x / (y * y);
      });
}

Tensor add_scalar(const Tensor& a, Scalar s) {
  return unary(
      "add_scalar", a, [s](Scalar x) { return x + s; }, [](Scalar, Scalar) { return Scalar(1); });
}

Tensor mul_scalar(const Tensor& a, Scalar s) {
  return unary(
      "mul_scalar", a, [s](Scalar x) { return x * s; }, [s](Scalar, Scalar) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, Scalar(-1)); }

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](Scalar x) { return x > 0 ? x : Scalar(0); },
      [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : Scalar(0); });
}

Tensor leaky_relu(const Tensor& a, Scalar slope) {
  return unary(
      "leaky_relu", a, [slope](Scalar x) { return x > 0 ? x : slope * x; },
      [slope](Scalar x, Scalar) { return x > 0 ? Scalar(1) : slope; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](Scalar x) { return std::tanh(x); }, [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](Scalar x) {
        if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
        const Scalar e = std::exp(x);
        return e / (Scalar(1) + e);
      },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

Tensor log(const Tensor& a) {
  for (Scalar v : a.data()) {
    if (!(v > Scalar(0))) throw DomainError("log: non-positive operand in tensor of shape " + shape_str(a.shape()));
  }
  return unary(
      "log", a, [](Scalar x) { return std::log(x); }, [](Scalar x, Scalar) { return Scalar(1) / x; });
}

Tensor softplus(const Tensor& a) {
  return unary(
      "softplus", a, [](Scalar x) { return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x))); },
      [](Scalar x, Scalar) {
        if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
        const Scalar e = std::exp(x);
        return e / (Scalar(1) + e);
      });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](Scalar x) { return x * x; }, [](Scalar x, Scalar) { return Scalar(2) * x; });
}

// ---- reductions ---------------------------------------------------------

Tensor sum(const Tensor& a) {
  Scalar acc = 0;
  for (Scalar v : a.data()) acc += v;
  return Tensor::make_result({}, {acc}, "sum", {a}, [a](const TensorImpl& o) {
    Scalar* ga = grad_of(a);
    if (!ga) return;
    const Scalar g = o.grad[0];
    for (Index i = 0; i < a.numel(); ++i) ga[i] += g;
  });
}

Tensor sum(const Tensor& a, Index axis, bool keepdim) {
  axis = normalize_axis(axis, a.dim(), "sum");
  const auto sp = split_axis(a.shape(), axis);
  const Scalar* x = a.data().data();
  std::vector<Scalar> out(static_cast<std::size_t>(sp.outer * sp.inner), Scalar(0));
  for (Index o = 0; o < sp.outer; ++o)
    for (Index k = 0; k < sp.n; ++k)
      for (Index i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += x[(o * sp.n + k) * sp.inner + i];
  return Tensor::make_result(reduced_shape(a.shape(), axis, keepdim), std::move(out), "sum_axis", {a},
                             [a, sp](const TensorImpl& o) {
                               Scalar* ga = grad_of(a);
                               if (!ga) return;
                               const auto& g = o.grad;
                               for (Index oo = 0; oo < sp.outer; ++oo)
                                 for (Index k = 0; k < sp.n; ++k)
                                   for (Index i = 0; i < sp.inner; ++i)
                                     ga[(oo * sp.n + k) * sp.inner + i] += g[oo * sp.inner + i];
                             });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean of an empty tensor");
  return mul_scalar(sum(a), Scalar(1) / static_cast<Scalar>(a.numel()));
}

Tensor mean(const Tensor& a, Index axis, bool keepdim) {
  axis = normalize_axis(axis, a.dim(), "mean");
  const Index n = a.shape()[static_cast<std::size_t>(axis)];
  if (n == 0) throw ContractError("mean over an empty axis");
  return mul_scalar(sum(a, axis, keepdim), Scalar(1) / static_cast<Scalar>(n));
}

Tensor logsumexp(const Tensor& a, Index axis, bool keepdim) {
  axis = normalize_axis(axis, a.dim(), "logsumexp");
  const auto sp = split_axis(a.shape(), axis);
  if (sp.n == 0) throw ContractError("logsumexp over an empty axis");
  const Scalar* x = a.data().data();
  std::vector<Scalar> out(static_cast<std::size_t>(sp.outer * sp.inner));
  for (Index o = 0; o < sp.outer; ++o)
    for (Index i = 0; i < sp.inner; ++i) {
      Scalar m = -std::numeric_limits<Scalar>::infinity();
      for (Index k = 0; k < sp.n; ++k) m = std::max(m, x[(o * sp.n + k) * sp.inner + i]);
      Scalar s = 0;
      for (Index k = 0; k < sp.n; ++k) s += std::exp(x[(o * sp.n + k) * sp.inner + i] - m);
      out[o * sp.inner + i] = m + std::log(s);
    }
  return Tensor::make_result(reduced_shape(a.shape(), axis, keepdim), std::move(out), "logsumexp", {a},
                             [a, sp](const TensorImpl& o) {
                               Scalar* ga = grad_of(a);
                               if (!ga) return;
                               const Scalar* x = a.data().data();
                               for (Index oo = 0; oo < sp.outer; ++oo)
                                 for (Index i = 0; i < sp.inner; ++i) {
                                   const Scalar lse = o.data[oo * sp.inner + i];
                                   const Scalar g = o.grad[oo * sp.inner + i];
                                   for (Index k = 0; k < sp.n; ++k) {
                                     const Index idx = (oo * sp.n + k) * sp.inner + i;
                                     ga[idx] += g * std::exp(x[idx] - lse);
                                   }
                                 }
                             });
}

Tensor softmax(const Tensor& a, Index axis) {
  axis = normalize_axis(axis, a.dim(), "softmax");
  const auto sp = split_axis(a.shape(), axis);
  const Scalar* x = a.data().data();
  std::vector<Scalar> out(static_cast<std::size_t>(a.numel()));
  for (Index o = 0; o < sp.outer; ++o)
    for (Index i = 0; i < sp.inner; ++i) {
      Scalar m = -std::numeric_limits<Scalar>::infinity();
      for (Index k = 0; k < sp.n; ++k) m = std::max(m, x[(o * sp.n + k) * sp.inner + i]);
      Scalar s = 0;
      for (Index k = 0; k < sp.n; ++k) {
        const Index idx = (o * sp.n + k) * sp.inner + i;
        out[idx] = std::exp(x[idx] - m);
        s += out[idx];
      }
      for (Index k = 0; k < sp.n; ++k) out[(o * sp.n + k) * sp.inner + i] /= s;
    }
  return Tensor::make_result(a.shape(), std::move(out), "softmax", {a}, [a, sp](const TensorImpl& o) {
    Scalar* ga = grad_of(a);
    if (!ga) return;
    const auto& y = o.data;
    const auto& g = o.grad;
    for (Index oo = 0; oo < sp.outer; ++oo)
      for (Index i = 0; i < sp.inner; ++i) {
        Scalar dot = 0;
        for (Index k = 0; k < sp.n; ++k) {
          const Index idx = (oo * sp.n + k) * sp.inner + i;
          dot += g[idx] * y[idx];
        }
        for (Index k = 0; k < sp.n; ++k) {
          const Index idx = (oo * sp.n + k) * sp.inner + i;
          ga[idx] += y[idx] * (g[idx] - dot);
        }
      }
  });
}

Tensor log_softmax(const Tensor& a, Index axis) {
  axis = normalize_axis(axis, a.dim(), "log_softmax");
  const auto sp = split_axis(a.shape(), axis);
  const Scalar* x = a.data().data();
  std::vector<Scalar> out(static_cast<std::size_t>(a.numel()));
  for (Index o = 0; o < sp.outer; ++o)
    for (Index i = 0; i < sp.inner; ++i) {
      Scalar m = -std::numeric_limits<Scalar>::infinity();
      for (Index k = 0; k < sp.n; ++k) m = std::max(m, x[(o * sp.n + k) * sp.inner + i]);
      Scalar s = 0;
      for (Index k = 0; k < sp.n; ++k) s += std::exp(x[(o * sp.n + k) * sp.inner + i] - m);
      const Scalar lse = m + std::log(s);
      for (Index k = 0; k < sp.n; ++k) {
        const Index idx = (o * sp.n + k) * sp.inner + i;
        out[idx] = x[idx] - lse;
      }
    }
  return Tensor::make_result(a.shape(), std::move(out), "log_softmax", {a}, [a, sp](const TensorImpl& o) {
    Scalar* ga = grad_of(a);
    if (!ga) return;
    const auto& y = o.data;
    const auto& g = o.grad;
    for (Index oo = 0; oo < sp.outer; ++oo)
      for (Index i = 0; i < sp.inner; ++i) {
        Scalar gs = 0;
        for (Index k = 0; k < sp.n; ++k) gs += g[(oo * sp.n + k) * sp.inner + i];
        for (Index k = 0; k < sp.n; ++k) {
          const Index idx = (oo * sp.n + k) * sp.inner + i;
          ga[idx] += g[idx] - std::exp(y[idx]) * gs;
        }
      }
  });
}

Tensor l2_normalize(const Tensor& a, Index axis) {
  axis = normalize_axis(axis, a.dim(), "l2_normalize");
  const auto sp = split_axis(a.shape(), axis);
  const Scalar* x = a.data().data();
  std::vector<Scalar> out(static_cast<std::size_t>(a.numel()), Scalar(0));
  std::vector<Scalar> norms(static_cast<std::size_t>(sp.outer * sp.inner));
  for (Index o = 0; o < sp.outer; ++o)
    for (Index i = 0; i < sp.inner; ++i) {
      Scalar s = 0;
      for (Index k = 0; k < sp.n; ++k) {
        const Scalar v = x[(o * sp.n + k) * sp.inner + i];
        s += v * v;
      }
      const Scalar nrm = std::sqrt(s);
      norms[o * sp.inner + i] = nrm;
      if (nrm == Scalar(0)) continue;
      for (Index k = 0; k < sp.n; ++k) {
        const Index idx = (o * sp.n + k) * sp.inner + i;
        out[idx] = x[idx] / nrm;
      }
    }
  return Tensor::make_result(a.shape(), std::move(out), "l2_normalize", {a},
                             [a, sp, norms = std::move(norms)](const TensorImpl& o) {
                               Scalar* ga = grad_of(a);
                               if (!ga) return;
                               const auto& y = o.data;
                               const auto& g = o.grad;
                               for (Index oo = 0; oo < sp.outer; ++oo)
                                 for (Index i = 0; i < sp.inner; ++i) {
                                   const Scalar nrm = norms[oo * sp.inner + i];
                                   if (nrm == Scalar(0)) continue;
                                   Scalar dot = 0;
                                   for (Index k = 0; k < sp.n; ++k) {
                                     const Index idx = (oo * sp.n + k) * sp.inner + i;
                                     dot += y[idx] * g[idx];
                                   }
                                   for (Index k = 0; k < sp.n; ++k) {
                                     const Index idx = (oo * sp.n + k) * sp.inner + i;
                                     ga[idx] += (g[idx] - y[idx] * dot) / nrm;
                                   }
                                 }
                             });
}

// ---- shape manipulation -------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) shape_mismatch("reshape", a.shape(), shape);
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), "reshape", {a}, [a](const TensorImpl& o) {
    Scalar* ga = grad_of(a);
    if (!ga) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
  });
}

namespace {

// For each output flat index, the input flat offset.
std::vector<Index> permute_offsets(const Shape& in, const std::vector<Index>& axes) {
  const std::size_t rank = in.size();
  std::vector<Index> in_stride(rank, 1);
  for (std::size_t d = rank; d-- > 1;) in_stride[d - 1] = in_stride[d] * in[d];
  Shape out(rank);
  std::vector<Index> stride(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out[d] = in[static_cast<std::size_t>(axes[d])];
    stride[d] = in_stride[static_cast<std::size_t>(axes[d])];
  }
  const Index n = numel_of(in);
  std::vector<Index> offsets(static_cast<std::size_t>(n));
  if (n == 0) return offsets;
  std::vector<Index> counter(rank, 0);
  Index off = 0;
  for (Index i = 0; i < n; ++i) {
    offsets[static_cast<std::size_t>(i)] = off;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      off += stride[d];
      if (counter[d] < out[d]) break;
      off -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return offsets;
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<Index>& axes) {
  const auto& in = a.shape();
  if (axes.size() != in.size()) throw ShapeError("permute: axes rank mismatch for shape " + shape_str(in));
  std::vector<bool> seen(in.size(), false);
  Shape out(in.size());
  for (std::size_t d = 0; d < axes.size(); ++d) {
    const Index ax = axes[d];
    if (ax < 0 || ax >= static_cast<Index>(in.size()) || seen[static_cast<std::size_t>(ax)]) {
      throw IndexError("permute: invalid axes for shape " + shape_str(in));
    }
    seen[static_cast<std::size_t>(ax)] = true;
    out[d] = in[static_cast<std::size_t>(ax)];
  }
  auto offsets = permute_offsets(in, axes);
  const Scalar* x = a.data().data();
  std::vector<Scalar> data(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i) data[i] = x[offsets[i]];
  return Tensor::make_result(std::move(out), std::move(data), "permute", {a},
                             [a, offsets = std::move(offsets)](const TensorImpl& o) {
                               Scalar* ga = grad_of(a);
                               if (!ga) return;
                               for (std::size_t i = 0; i < offsets.size(); ++i) ga[offsets[i]] += o.grad[i];
                             });
}

Tensor transpose(const Tensor& a) {
  if (a.dim() != 2) throw ShapeError("transpose: expected 2-D tensor, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

Tensor concat(const std::vector<Tensor>& parts, Index axis) {
  if (parts.empty()) throw ContractError("concat: no operands");
  const Shape& first = parts.front().shape();
  axis = normalize_axis(axis, static_cast<Index>(first.size()), "concat");
  Shape out = first;
  out[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_mismatch("concat", first, s);
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (static_cast<Index>(d) != axis && s[d] != first[d]) shape_mismatch("concat", first, s);
    }
    out[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  const auto sp = split_axis(out, axis);
  std::vector<Scalar> data(static_cast<std::size_t>(numel_of(out)));
  Index offset = 0;
  std::vector<Index> starts;
  for (const auto& p : parts) {
    starts.push_back(offset);
    const Index n = p.shape()[static_cast<std::size_t>(axis)];
    const Scalar* x = p.data().data();
    for (Index o = 0; o < sp.outer; ++o)
      std::copy_n(x + o * n * sp.inner, n * sp.inner, data.begin() + (o * sp.n + offset) * sp.inner);
    offset += n;
  }
  return Tensor::make_result(std::move(out), std::move(data), "concat", parts,
                             [parts, sp, starts, axis](const TensorImpl& o) {
                               for (std::size_t k = 0; k < parts.size(); ++k) {
                                 Scalar* gp = grad_of(parts[k]);
                                 if (!gp) continue;
                                 const Index n = parts[k].shape()[static_cast<std::size_t>(axis)];
                                 for (Index oo = 0; oo < sp.outer; ++oo)
                                   for (Index j = 0; j < n * sp.inner; ++j)
                                     gp[oo * n * sp.inner + j] += o.grad[(oo * sp.n + starts[k]) * sp.inner + j];
                               }
                             });
}

Tensor slice(const Tensor& a, Index axis, Index start, Index end) {
  axis = normalize_axis(axis, a.dim(), "slice");
  const auto sp = split_axis(a.shape(), axis);
  if (start < 0 || end > sp.n || start > end) {
    throw IndexError("slice: range [" + std::to_string(start) + ", " + std::to_string(end) + ") out of bounds for " +
                     shape_str(a.shape()));
  }
  Shape out = a.shape();
  const Index m = end - start;
  out[static_cast<std::size_t>(axis)] = m;
  std::vector<Scalar> data(static_cast<std::size_t>(sp.outer * m * sp.inner));
  const Scalar* x = a.data().data();
  for (Index o = 0; o < sp.outer; ++o)
    std::copy_n(x + (o * sp.n + start) * sp.inner, m * sp.inner, data.begin() + o * m * sp.inner);
  return Tensor::make_result(std::move(out), std::move(data), "slice", {a}, [a, sp, start, m](const TensorImpl& o) {
    Scalar* ga = grad_of(a);
    if (!ga) return;
    for (Index oo = 0; oo < sp.outer; ++oo)
      for (Index j = 0; j < m * sp.inner; ++j) ga[(oo * sp.n + start) * sp.inner + j] += o.grad[oo * m * sp.inner + j];
  });
}

Tensor index_select(const Tensor& a, Index axis, const std::vector<Index>& indices) {
  axis = normalize_axis(axis, a.dim(), "index_select");
  const auto sp = split_axis(a.shape(), axis);
  for (Index i : indices) {
    if (i < 0 || i >= sp.n) {
      throw IndexError("index_select: index " + std::to_string(i) + " out of range for axis extent " +
                       std::to_string(sp.n));
    }
  }
  Shape out = a.shape();
  const Index m = static_cast<Index>(indices.size());
  out[static_cast<std::size_t>(axis)] = m;
  std::vector<Scalar> data(static_cast<std::size_t>(sp.outer * m * sp.inner));
  const Scalar* x = a.data().data();
  for (Index o = 0; o < sp.outer; ++o)
    for (Index k = 0; k < m; ++k)
      std::copy_n(x + (o * sp.n + indices[static_cast<std::size_t>(k)]) * sp.inner, sp.inner,
                  data.begin() + (o * m + k) * sp.inner);
  return Tensor::make_result(std::move(out), std::move(data), "index_select", {a},
                             [a, sp, indices, m](const TensorImpl& o) {
                               Scalar* ga = grad_of(a);
                               if (!ga) return;
                               for (Index oo = 0; oo < sp.outer; ++oo)
                                 for (Index k = 0; k < m; ++k)
                                   for (Index i = 0; i < sp.inner; ++i)
                                     ga[(oo * sp.n + indices[static_cast<std::size_t>(k)]) * sp.inner + i] +=
                                         o.grad[(oo * m + k) * sp.inner + i];
                             });
}

Tensor take(const Tensor& a, const std::vector<Index>& flat, Shape shape) {
  if (numel_of(shape) != static_cast<Index>(flat.size())) {
    throw ShapeError("take: " + std::to_string(flat.size()) + " indices cannot fill shape " + shape_str(shape));
  }
  const Index n = a.numel();
  const Scalar* x = a.data().data();
  std::vector<Scalar> data(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (flat[i] < 0 || flat[i] >= n) throw IndexError("take: flat index " + std::to_string(flat[i]) + " out of range");
    data[i] = x[flat[i]];
  }
  return Tensor::make_result(std::move(shape), std::move(data), "take", {a}, [a, flat](const TensorImpl& o) {
    Scalar* ga = grad_of(a);
    if (!ga) return;
    for (std::size_t i = 0; i < flat.size(); ++i) ga[flat[i]] += o.grad[i];
  });
}

// ---- linear algebra -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.shape()[1] != b.shape()[0]) shape_mismatch("matmul", a.shape(), b.shape());
  const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<Scalar> out(static_cast<std::size_t>(m * n));
  MapM(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  return Tensor::make_result({m, n}, std::move(out), "matmul", {a, b}, [a, b, m, k, n](const TensorImpl& o) {
    MapC g(o.grad.data(), m, n);
    if (Scalar* ga = grad_of(a)) MapM(ga, m, k).noalias() += g * MapC(b.data().data(), k, n).transpose();
    if (Scalar* gb = grad_of(b)) MapM(gb, k, n).noalias() += MapC(a.data().data(), m, k).transpose() * g;
  });
}

Tensor cholesky_solve(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || a.shape()[0] != a.shape()[1]) shape_mismatch("cholesky_solve", a.shape(), b.shape());
  const Index n = a.shape()[0];
  if ((b.dim() != 1 && b.dim() != 2) || b.shape()[0] != n) shape_mismatch("cholesky_solve", a.shape(), b.shape());
  const Index m = b.dim() == 1 ? 1 : b.shape()[1];
  RowMat sym = MapC(a.data().data(), n, n);
  sym = (sym + sym.transpose().eval()) * Scalar(0.5);
  Eigen::LLT<RowMat> llt(sym);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<RowMat> eig(sym, Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    throw NumericalError("cholesky_solve: matrix not positive definite (eigenvalue range [" +
                         std::to_string(static_cast<double>(ev.minCoeff())) + ", " +
                         std::to_string(static_cast<double>(ev.maxCoeff())) + "])");
  }
  std::vector<Scalar> out(static_cast<std::size_t>(n * m));
  MapM(out.data(), n, m) = llt.solve(MapC(b.data().data(), n, m));
  return Tensor::make_result(b.shape(), std::move(out), "cholesky_solve", {a, b},
                             [a, b, n, m, llt = std::move(llt)](const TensorImpl& o) {
                               Scalar* ga = grad_of(a);
                               Scalar* gb = grad_of(b);
                               const RowMat db = llt.solve(MapC(o.grad.data(), n, m));
                               if (gb) MapM(gb, n, m) += db;
                               if (ga) {
                                 MapC x(o.data.data(), n, m);
                                 const RowMat outer = db * x.transpose();
                                 MapM(ga, n, n) -= (outer + outer.transpose()) * Scalar(0.5);
                               }
                             });
}

// ---- convolution --------------------------------------------------------

namespace {

struct ConvGeom {
  Index n, c, h, w, kh, kw, stride, pad, oh, ow;
};

ConvGeom conv_geometry(const char* op, const Shape& x, Index kh, Index kw, Index stride, Index pad) {
  if (x.size() != 4) throw ShapeError(std::string(op) + ": expected (N,C,H,W), got " + shape_str(x));
  if (kh < 1 || kw < 1 || stride < 1 || pad < 0) throw ContractError(std::string(op) + ": invalid kernel geometry");
  ConvGeom g{x[0], x[1], x[2], x[3], kh, kw, stride, pad, 0, 0};
  const Index eh = g.h + 2 * pad - kh, ew = g.w + 2 * pad - kw;
  if (eh < 0 || ew < 0) throw ShapeError(std::string(op) + ": kernel larger than padded input " + shape_str(x));
  g.oh = eh / stride + 1;
  g.ow = ew / stride + 1;
  return g;
}

void im2col_kernel(const ConvGeom& g, const Scalar* x, Scalar* cols) {
  const Index l = g.oh * g.ow;
  const Index ncols = g.n * l;
  for (Index c = 0; c < g.c; ++c)
    for (Index i = 0; i < g.kh; ++i)
      for (Index j = 0; j < g.kw; ++j) {
        Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * ncols;
        for (Index b = 0; b < g.n; ++b) {
          const Scalar* img = x + (b * g.c + c) * g.h * g.w;
          for (Index oy = 0; oy < g.oh; ++oy) {
            Scalar* dst = row + b * l + oy * g.ow;
            const Index y = oy * g.stride - g.pad + i;
            if (y < 0 || y >= g.h) {
              std::fill_n(dst, g.ow, Scalar(0));
              continue;
            }
            const Scalar* src = img + y * g.w;
            for (Index ox = 0; ox < g.ow; ++ox) {
              const Index xx = ox * g.stride - g.pad + j;
              dst[ox] = (xx >= 0 && xx < g.w) ? src[xx] : Scalar(0);
            }
          }
        }
      }
}

void col2im_kernel(const ConvGeom& g, const Scalar* cols, Scalar* x) {
  const Index l = g.oh * g.ow;
  const Index ncols = g.n * l;
  for (Index c = 0; c < g.c; ++c)
    for (Index i = 0; i < g.kh; ++i)
      for (Index j = 0; j < g.kw; ++j) {
        const Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * ncols;
        for (Index b = 0; b < g.n; ++b) {
          Scalar* img = x + (b * g.c + c) * g.h * g.w;
          for (Index oy = 0; oy < g.oh; ++oy) {
            const Index y = oy * g.stride - g.pad + i;
            if (y < 0 || y >= g.h) continue;
            const Scalar* src = row + b * l + oy * g.ow;
            Scalar* dst = img + y * g.w;
            for (Index ox = 0; ox < g.ow; ++ox) {
              const Index xx = ox * g.stride - g.pad + j;
              if (xx >= 0 && xx < g.w) dst[xx] += src[ox];
            }
          }
        }
      }
}

}  // namespace

Tensor im2col(const Tensor& x, Index kh, Index kw, Index stride, Index pad) {
  const auto g = conv_geometry("im2col", x.shape(), kh, kw, stride, pad);
  std::vector<Scalar> cols(static_cast<std::size_t>(g.c * kh * kw * g.n * g.oh * g.ow));
  im2col_kernel(g, x.data().data(), cols.data());
  return Tensor::make_result({g.c * kh * kw, g.n * g.oh * g.ow}, std::move(cols), "im2col", {x},
                             [x, g](const TensorImpl& o) {
                               if (Scalar* gx = grad_of(x)) col2im_kernel(g, o.grad.data(), gx);
                             });
}

Tensor col2im(const Tensor& cols, const Shape& image_shape, Index kh, Index kw, Index stride, Index pad) {
  const auto g = conv_geometry("col2im", image_shape, kh, kw, stride, pad);
  const Shape expected{g.c * kh * kw, g.n * g.oh * g.ow};
  if (cols.shape() != expected) shape_mismatch("col2im", cols.shape(), expected);
  std::vector<Scalar> img(static_cast<std::size_t>(numel_of(image_shape)), Scalar(0));
  col2im_kernel(g, cols.data().data(), img.data());
  return Tensor::make_result(image_shape, std::move(img), "col2im", {cols}, [cols, g](const TensorImpl& o) {
    Scalar* gc = grad_of(cols);
    if (!gc) return;
    std::vector<Scalar> tmp(static_cast<std::size_t>(cols.numel()));
    im2col_kernel(g, o.grad.data(), tmp.data());
    for (std::size_t i = 0; i < tmp.size(); ++i) gc[i] += tmp[i];
  });
}

namespace {

// Adds a per-channel bias to an (N,C,H,W) tensor.
Tensor add_channel_bias(const Tensor& y, const Tensor& bias) {
  const Index n = y.shape()[0], c = y.shape()[1], hw = y.shape()[2] * y.shape()[3];
  if (bias.dim() != 1 || bias.shape()[0] != c) shape_mismatch("bias_add", y.shape(), bias.shape());
  std::vector<Scalar> out(y.data().begin(), y.data().end());
  const Scalar* b = bias.data().data();
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch) {
      Scalar* p = out.data() + (s * c + ch) * hw;
      for (Index i = 0; i < hw; ++i) p[i] += b[ch];
    }
  return Tensor::make_result(y.shape(), std::move(out), "bias_add", {y, bias},
                             [y, bias, n, c, hw](const TensorImpl& o) {
                               if (Scalar* gy = grad_of(y)) {
                                 for (std::size_t i = 0; i < o.grad.size(); ++i) gy[i] += o.grad[i];
                               }
                               if (Scalar* gb = grad_of(bias)) {
                                 for (Index s = 0; s < n; ++s)
                                   for (Index ch = 0; ch < c; ++ch) {
                                     const Scalar* p = o.grad.data() + (s * c + ch) * hw;
                                     Scalar acc = 0;
                                     for (Index i = 0; i < hw; ++i) acc += p[i];
                                     gb[ch] += acc;
                                   }
                               }
                             });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Index stride, Index pad) {
  if (x.dim() != 4 || w.dim() != 4 || x.shape()[1] != w.shape()[1]) shape_mismatch("conv2d", x.shape(), w.shape());
  const Index o = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const auto g = conv_geometry("conv2d", x.shape(), kh, kw, stride, pad);
  Tensor cols = im2col(x, kh, kw, stride, pad);
  Tensor y = matmul(reshape(w, {o, g.c * kh * kw}), cols);
  y = reshape(y, {o, g.n, g.oh, g.ow});
  if (g.n > 1) {
    y = permute(y, {1, 0, 2, 3});
  } else {
    y = reshape(y, {1, o, g.oh, g.ow});
  }
  return bias.defined() ? add_channel_bias(y, bias) : y;
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Index stride, Index pad) {
  if (x.dim() != 4 || w.dim() != 4 || x.shape()[1] != w.shape()[0] || w.shape()[2] != w.shape()[3]) {
    shape_mismatch("transposed_conv2d", x.shape(), w.shape());
  }
  const Index n = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const Index cout = w.shape()[1], k = w.shape()[2];
  const Index oh = (h - 1) * stride - 2 * pad + k, ow = (wd - 1) * stride - 2 * pad + k;
  if (oh < 1 || ow < 1) throw ShapeError("transposed_conv2d: empty output for input " + shape_str(x.shape()));
  Tensor xs = n > 1 ? permute(x, {1, 0, 2, 3}) : x;
  xs = reshape(xs, {cin, n * h * wd});
  Tensor wt = transpose(reshape(w, {cin, cout * k * k}));
  Tensor cols = matmul(wt, xs);
  const Shape out_shape{n, cout, oh, ow};
  const auto g = conv_geometry("transposed_conv2d", out_shape, k, k, stride, pad);
  if (g.oh != h || g.ow != wd) {
    throw ShapeError("transposed_conv2d: stride/padding do not invert for input " + shape_str(x.shape()));
  }
  Tensor y = col2im(cols, out_shape, k, k, stride, pad);
  return bias.defined() ? add_channel_bias(y, bias) : y;
}

Tensor instance_norm(const Tensor& x, Scalar eps) {
  if (x.dim() != 4) throw ShapeError("instance_norm: expected (N,C,H,W), got " + shape_str(x.shape()));
  const Index groups = x.shape()[0] * x.shape()[1];
  const Index hw = x.shape()[2] * x.shape()[3];
  const Scalar* in = x.data().data();
  std::vector<Scalar> out(static_cast<std::size_t>(x.numel()));
  std::vector<Scalar> inv_std(static_cast<std::size_t>(groups));
  for (Index gi = 0; gi < groups; ++gi) {
    const Scalar* p = in + gi * hw;
    Scalar mu = 0;
    for (Index i = 0; i < hw; ++i) mu += p[i];
    mu /= static_cast<Scalar>(hw);
    Scalar var = 0;
    for (Index i = 0; i < hw; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<Scalar>(hw);
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(gi)] = is;
    Scalar* q = out.data() + gi * hw;
    for (Index i = 0; i < hw; ++i) q[i] = (p[i] - mu) * is;
  }
  return Tensor::make_result(x.shape(), std::move(out), "instance_norm", {x},
                             [x, groups, hw, inv_std = std::move(inv_std)](const TensorImpl& o) {
                               Scalar* gx = grad_of(x);
                               if (!gx) return;
                               for (Index gi = 0; gi < groups; ++gi) {
                                 const Scalar* y = o.data.data() + gi * hw;
                                 const Scalar* g = o.grad.data() + gi * hw;
                                 Scalar mg = 0, mgy = 0;
                                 for (Index i = 0; i < hw; ++i) {
                                   mg += g[i];
                                   mgy += g[i] * y[i];
                                 }
                                 mg /= static_cast<Scalar>(hw);
                                 mgy /= static_cast<Scalar>(hw);
                                 const Scalar is = inv_std[static_cast<std::size_t>(gi)];
                                 Scalar* d = gx + gi * hw;
                                 for (Index i = 0; i < hw; ++i) d[i] += is * (g[i] - mg - y[i] * mgy);
                               }
                             });
}

}  // namespace ssrc::ops
