#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nbode/rng.hpp"

namespace nbode {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
struct TensorImpl;
}

/// Dense 64-bit float tensor participating in a reverse-mode autodiff graph.
///
/// Value-semantic handle to a shared node. Tensors are immutable once built
/// except through raw_data()/raw_grad(), which exist for leaf initialization
/// and in-place optimizer updates. backward() on a scalar root populates the
/// grad of every requires_grad ancestor and then frees the graph edges, so a
/// graph supports exactly one backward pass.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;
  bool requires_grad() const;

  std::span<const double> data() const;
  std::span<double> raw_data();

  /// Scalar tensors only.
  double value() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> raw_grad();
  void zero_grad();

  /// Reverse-mode pass from a scalar root (seed gradient 1). Throws
  /// TensorError if the root is not a scalar.
  void backward() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& handle() const { return impl_; }

  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Globally disables graph recording while alive; forward values are
/// unchanged. Used by evaluation and rollout paths.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool autograd_enabled();

// Elementwise binary ops with right-aligned broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// out = x * alpha for a plain double alpha.
Tensor scale(const Tensor& x, double alpha);

/// 2-D matrix product [m x k] * [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);   // scalar
Tensor mean(const Tensor& x);  // scalar
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor norm(const Tensor& x);  // scalar L2 norm

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// Gathers rows (axis 0); backward scatter-adds.
Tensor index_select(const Tensor& x, const std::vector<std::size_t>& rows);

/// out[s, :] = sum of x[e, :] over e with segment_ids[e] == s. x is [E x W].
Tensor segment_sum(const Tensor& x, const std::vector<std::size_t>& segment_ids,
                   std::size_t n_segments);

Tensor broadcast_to(const Tensor& x, const Shape& target);

Tensor silu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);

}  // namespace nbode
