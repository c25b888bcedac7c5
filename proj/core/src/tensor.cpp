#include "ssrc/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace ssrc {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<Scalar>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), Scalar(0));
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  const auto n = numel_of(shape);
  return from_data(std::move(shape), std::vector<Scalar>(static_cast<std::size_t>(n), value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<Scalar> data, bool requires_grad) {
  if (numel_of(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " needs " + std::to_string(numel_of(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::int64_t Tensor::size(std::int64_t axis) const {
  const auto& s = shape();
  const auto d = static_cast<std::int64_t>(s.size());
  if (axis < 0) axis += d;
  if (axis < 0 || axis >= d) throw IndexError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl().data.size()); }

std::span<const Scalar> Tensor::data() const { return impl().data; }

std::span<Scalar> Tensor::mutable_data() {
  if (impl().node) throw ContractError("mutable_data on a non-leaf tensor");
  return impl().data;
}

Scalar Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl().data[0];
}

Scalar Tensor::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw IndexError("at(): rank mismatch for " + shape_str(s));
  std::int64_t flat = 0;
  std::size_t k = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[k]) throw IndexError("at(): index out of range for " + shape_str(s));
    flat = flat * s[k] + i;
    ++k;
  }
  return impl().data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (impl().node && !flag) throw ContractError("cannot clear requires_grad on a non-leaf; use detach()");
  impl().requires_grad = flag;
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<const Scalar> Tensor::grad() const { return impl().grad; }

void Tensor::zero_grad() { impl().grad.clear(); }

bool Tensor::is_leaf() const { return impl().node == nullptr; }

Tensor Tensor::detach() const { return from_data(shape(), impl().data, false); }

Tensor Tensor::make_result(Shape shape, std::vector<Scalar> data, std::string op, std::vector<Tensor> inputs,
                           std::function<void(const TensorImpl& out)> backward) {
  auto result = from_data(std::move(shape), std::move(data), false);
  if (!g_grad_enabled) return result;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!needs) return result;
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  result.impl_->requires_grad = true;
  result.impl_->node = std::move(node);
  return result;
}

void Tensor::backward() const {
  if (numel() != 1) throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS yields a topological order (inputs first).
  std::vector<TensorImpl*> order;
  std::unordered_set<const TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [cur, next] = stack.back();
    if (cur->node && next < cur->node->inputs.size()) {
      const Tensor& in = cur->node->inputs[next++];
      if (in.defined() && in.requires_grad() && !visited.count(in.impl_.get())) {
        visited.insert(in.impl_.get());
        stack.emplace_back(in.impl_.get(), 0);
      }
      continue;
    }
    order.push_back(cur);
    stack.pop_back();
  }

  impl_->grad_buffer()[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (t->node && !t->grad.empty()) t->node->backward(*t);
  }
}

}  // namespace ssrc
