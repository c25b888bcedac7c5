#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ssrc/error.hpp"

namespace ssrc {

#ifdef SSRC_SINGLE_PRECISION
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
struct TensorImpl;

// One recorded operation. `backward` receives the output it produced and
// accumulates into the gradients of `inputs`.
struct Node {
  std::string op;
  std::vector<Tensor> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::shared_ptr<Node> node;

  // Returns the gradient buffer, zero-filling it on first use.
  std::vector<Scalar>& grad_buffer();
};

// Reference-counted handle to a dense row-major array. Copies alias the same
// storage; data is never mutated after an op has consumed it, except for leaf
// parameters updated by an optimizer between steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Scalar> data, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim() const { return static_cast<std::int64_t>(shape().size()); }
  std::int64_t size(std::int64_t axis) const;
  std::int64_t numel() const;

  std::span<const Scalar> data() const;
  // Only leaves (tensors without a producing node) may be written.
  std::span<Scalar> mutable_data();
  Scalar item() const;
  Scalar at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const Scalar> grad() const;
  void zero_grad();
  bool is_leaf() const;

  // New leaf holding a copy of the values, disconnected from the graph.
  Tensor detach() const;

  // Reverse-mode sweep from a scalar. Visits each node once in reverse
  // topological order; gradients accumulate additively.
  void backward() const;

  // Identity of the underlying storage.
  const TensorImpl* id() const noexcept { return impl_.get(); }

  // Used by op implementations.
  static Tensor make_result(Shape shape, std::vector<Scalar> data, std::string op,
                            std::vector<Tensor> inputs,
                            std::function<void(const TensorImpl& out)> backward);
  TensorImpl& impl() const;

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Graph recording is on by default; the guard disables it for its scope.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace ssrc
