#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace roie {

// Dense 4-D shape in (batch, channels, height, width) order.
struct Shape {
  int64_t n = 1;
  int64_t c = 1;
  int64_t h = 1;
  int64_t w = 1;

  int64_t numel() const { return n * c * h * w; }
  int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

template <typename T>
struct TensorImpl;

// One recorded operation. backward reads the gradient of `out` and
// accumulates into the gradients of `inputs` that require grad.
template <typename T>
struct GradNode {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<GradNode<T>> grad_fn;
};

// Shared handle to a tensor. Copies alias the same storage; use clone() for
// a deep copy. Tensors produced by operations on inputs that require grad
// carry the node that produced them, forming the graph walked by backward().
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return impl_->shape.numel(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::vector<T>& mutable_grad() { return impl_->grad; }
  void zero_grad();

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  T item() const;
  T at(int64_t n, int64_t c, int64_t h, int64_t w) const;
  T& at(int64_t n, int64_t c, int64_t h, int64_t w);

  // Same values, fresh storage, no graph.
  Tensor clone() const;
  Tensor detach() const { return clone(); }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Whether new operations record graph nodes (thread-local).
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

// Reverse-mode pass from a scalar loss. Gradients of every tensor reachable
// from the loss are reset and then recomputed, so calling backward twice on
// the same graph yields identical gradients.
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

// Builds an operation result. When grad mode is on and any input requires
// grad, the result records `fn` as its backward node.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<TensorImpl<T>>> inputs,
                      std::function<void(const TensorImpl<T>&)> fn);

}  // namespace detail

}  // namespace roie
