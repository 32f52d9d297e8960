#include "nbode/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "nbode/kernels.hpp"

namespace nbode {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_step;
};

}  // namespace detail

using detail::TensorImpl;

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_autograd_enabled = true;

void ensure_grad(TensorImpl& t) {
  if (t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), 0.0);
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw TensorError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                    " and " + shape_str(b));
}

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  if (shape_size(shape) != data.size()) {
    throw TensorError("tensor: shape " + shape_str(shape) + " does not match buffer of " +
                      std::to_string(data.size()) + " elements");
  }
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

/// Wires the result into the graph when recording is on and any parent needs
/// gradients; otherwise the result is a plain constant.
Tensor make_op(Shape shape, std::vector<double> data,
               std::initializer_list<Tensor> parents,
               std::function<void(TensorImpl&)> backward_step) {
  auto impl = make_impl(std::move(shape), std::move(data));
  bool needs_grad = false;
  for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
  if (g_autograd_enabled && needs_grad) {
    impl->requires_grad = true;
    for (const Tensor& p : parents) impl->parents.push_back(p.handle());
    impl->backward_step = std::move(backward_step);
  }
  return Tensor(std::move(impl));
}

// ---------------------------------------------------------------------------
// Broadcasting machinery (numpy right-aligned rules)
// ---------------------------------------------------------------------------

Shape broadcast_shapes(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    out[i] = da == 1 ? db : da;  // size-1 dims stretch, including to zero
  }
  return out;
}

/// Row-major element strides of `shape` within iteration space `out`;
/// broadcast dimensions get stride 0.
std::vector<std::size_t> bcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  const std::size_t offset = out.size() - shape.size();
  std::size_t acc = 1;
  for (std::size_t d = shape.size(); d-- > 0;) {
    strides[offset + d] = (shape[d] == 1) ? 0 : acc;
    acc *= shape[d];
  }
  return strides;
}

/// Odometer loop over `out`, calling fn(flat_out, offset_a, offset_b).
template <class Fn>
void for_each_bcast(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, Fn&& fn) {
  const std::size_t total = shape_size(out);
  const std::size_t rank = out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    fn(flat, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

/// dst[to_index] += sign * src[flat], reducing over broadcast dims.
void reduce_into(const double* src, const Shape& src_shape, double* dst,
                 const Shape& dst_shape, double sign) {
  if (src_shape == dst_shape) {
    kernels::axpy(sign, src, dst, shape_size(src_shape));
    return;
  }
  const auto sd = bcast_strides(dst_shape, src_shape);
  const auto zero = std::vector<std::size_t>(src_shape.size(), 0);
  for_each_bcast(src_shape, sd, zero, [&](std::size_t flat, std::size_t id, std::size_t) {
    dst[id] += sign * src[flat];
  });
}

enum class BinOp { Add, Sub, Mul };

Tensor binary_op(const char* name, BinOp op, const Tensor& a, const Tensor& b) {
  const Shape out_shape = broadcast_shapes(name, a.shape(), b.shape());
  const std::size_t n = shape_size(out_shape);
  std::vector<double> out(n);

  if (a.shape() == b.shape()) {
    switch (op) {
      case BinOp::Add: kernels::add(a.data().data(), b.data().data(), out.data(), n); break;
      case BinOp::Sub: kernels::sub(a.data().data(), b.data().data(), out.data(), n); break;
      case BinOp::Mul: kernels::mul(a.data().data(), b.data().data(), out.data(), n); break;
    }
  } else {
    const auto sa = bcast_strides(a.shape(), out_shape);
    const auto sb = bcast_strides(b.shape(), out_shape);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    switch (op) {
      case BinOp::Add:
        for_each_bcast(out_shape, sa, sb,
                       [&](std::size_t f, std::size_t ia, std::size_t ib) { out[f] = pa[ia] + pb[ib]; });
        break;
      case BinOp::Sub:
        for_each_bcast(out_shape, sa, sb,
                       [&](std::size_t f, std::size_t ia, std::size_t ib) { out[f] = pa[ia] - pb[ib]; });
        break;
      case BinOp::Mul:
        for_each_bcast(out_shape, sa, sb,
                       [&](std::size_t f, std::size_t ia, std::size_t ib) { out[f] = pa[ia] * pb[ib]; });
        break;
    }
  }

  TensorImpl* ia = a.impl();
  TensorImpl* ib = b.impl();
  return make_op(out_shape, std::move(out), {a, b}, [=](TensorImpl& self) {
    const double* g = self.grad.data();
    if (op == BinOp::Mul) {
      // d(a*b) = g*b into a, g*a into b, each reduced over broadcast dims
      for (int side = 0; side < 2; ++side) {
        TensorImpl* target = side == 0 ? ia : ib;
        TensorImpl* other = side == 0 ? ib : ia;
        if (!target->requires_grad) continue;
        ensure_grad(*target);
        if (self.shape == target->shape && self.shape == other->shape) {
          kernels::mul_acc(g, other->data.data(), target->grad.data(), self.data.size());
        } else {
          std::vector<double> tmp(self.data.size());
          const auto so = bcast_strides(other->shape, self.shape);
          const auto zero = std::vector<std::size_t>(self.shape.size(), 0);
          const double* po = other->data.data();
          for_each_bcast(self.shape, so, zero,
                         [&](std::size_t f, std::size_t io, std::size_t) { tmp[f] = g[f] * po[io]; });
          reduce_into(tmp.data(), self.shape, target->grad.data(), target->shape, 1.0);
        }
      }
      return;
    }
    if (ia->requires_grad) {
      ensure_grad(*ia);
      reduce_into(g, self.shape, ia->grad.data(), ia->shape, 1.0);
    }
    if (ib->requires_grad) {
      ensure_grad(*ib);
      reduce_into(g, self.shape, ib->grad.data(), ib->shape, op == BinOp::Sub ? -1.0 : 1.0);
    }
  });
}

void transpose_2d(const double* src, double* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, Fwd&& fwd, Bwd&& bwd) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  const double* px = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(px[i]);
  TensorImpl* ix = x.impl();
  return make_op(x.shape(), std::move(out), {x}, [ix, bwd](TensorImpl& self) {
    if (!ix->requires_grad) return;
    ensure_grad(*ix);
    const double* g = self.grad.data();
    const double* xv = ix->data.data();
    const double* yv = self.data.data();
    double* gx = ix->grad.data();
    for (std::size_t i = 0; i < self.data.size(); ++i) gx[i] += g[i] * bwd(xv[i], yv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(shape_size(shape), value);
  auto impl = make_impl(std::move(shape), std::move(data));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  auto impl = make_impl(std::move(shape), std::move(values));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = rng.uniform(lo, hi);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->data.size(); }
std::size_t Tensor::dim(std::size_t axis) const { return impl_->shape.at(axis); }
bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

std::span<const double> Tensor::data() const { return {impl_->data.data(), impl_->data.size()}; }
std::span<double> Tensor::raw_data() { return {impl_->data.data(), impl_->data.size()}; }

double Tensor::value() const {
  if (size() != 1) throw TensorError("value: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return {impl_->grad.data(), impl_->grad.size()};
}

std::span<double> Tensor::raw_grad() {
  ensure_grad(*impl_);
  return {impl_->grad.data(), impl_->grad.size()};
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::backward() const {
  if (!defined()) throw TensorError("backward: undefined tensor");
  if (size() != 1) {
    throw TensorError("backward: root must be a scalar, got shape " + shape_str(shape()));
  }

  // Post-order DFS over parent edges; deterministic (insertion order).
  // keep_alive pins every visited node: releasing parent edges below must
  // not destroy nodes still waiting in the order.
  std::vector<TensorImpl*> order;
  std::vector<std::shared_ptr<TensorImpl>> keep_alive;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({impl_.get(), 0});
  visited.insert(impl_.get());
  while (!stack.empty()) {
    Frame& frame = stack.back();
    if (frame.next_parent < frame.node->parents.size()) {
      const auto& parent = frame.node->parents[frame.next_parent++];
      if (visited.insert(parent.get()).second) {
        keep_alive.push_back(parent);
        stack.push_back({parent.get(), 0});
      }
    } else {
      order.push_back(frame.node);
      stack.pop_back();
    }
  }

  ensure_grad(*impl_);
  impl_->grad[0] += 1.0;

  // Root-first over the reversed post-order; every consumer of a node runs
  // before the node itself. Graph edges are released as we go.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_step) {
      if (node->grad.size() == node->data.size()) node->backward_step(*node);
      node->backward_step = nullptr;
    }
    node->parents.clear();
  }
}

NoGradGuard::NoGradGuard() : previous_(g_autograd_enabled) { g_autograd_enabled = false; }
NoGradGuard::~NoGradGuard() { g_autograd_enabled = previous_; }

bool autograd_enabled() { return g_autograd_enabled; }

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", BinOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", BinOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", BinOp::Mul, a, b); }

Tensor scale(const Tensor& x, double alpha) {
  std::vector<double> out(x.size());
  kernels::scale(x.data().data(), alpha, out.data(), x.size());
  TensorImpl* ix = x.impl();
  return make_op(x.shape(), std::move(out), {x}, [ix, alpha](TensorImpl& self) {
    if (!ix->requires_grad) return;
    ensure_grad(*ix);
    kernels::axpy(alpha, self.grad.data(), ix->grad.data(), self.data.size());
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    shape_error("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);
  TensorImpl* ia = a.impl();
  TensorImpl* ib = b.impl();
  return make_op({m, n}, std::move(out), {a, b}, [=](TensorImpl& self) {
    const double* g = self.grad.data();
    if (ia->requires_grad) {
      ensure_grad(*ia);
      std::vector<double> bt(k * n), tmp(m * k);
      transpose_2d(ib->data.data(), bt.data(), k, n);
      kernels::matmul(g, bt.data(), tmp.data(), m, n, k);
      kernels::axpy(1.0, tmp.data(), ia->grad.data(), m * k);
    }
    if (ib->requires_grad) {
      ensure_grad(*ib);
      std::vector<double> at(k * m), tmp(k * n);
      transpose_2d(ia->data.data(), at.data(), m, k);
      kernels::matmul(at.data(), g, tmp.data(), k, m, n);
      kernels::axpy(1.0, tmp.data(), ib->grad.data(), k * n);
    }
  });
}

Tensor sum(const Tensor& x) {
  const double total = kernels::reduce_sum(x.data().data(), x.size());
  TensorImpl* ix = x.impl();
  return make_op({1}, {total}, {x}, [ix](TensorImpl& self) {
    if (!ix->requires_grad) return;
    ensure_grad(*ix);
    const double g = self.grad[0];
    double* gx = ix->grad.data();
    for (std::size_t i = 0; i < ix->data.size(); ++i) gx[i] += g;
  });
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.size();
  const double total = kernels::reduce_sum(x.data().data(), n) / static_cast<double>(n);
  TensorImpl* ix = x.impl();
  return make_op({1}, {total}, {x}, [ix, n](TensorImpl& self) {
    if (!ix->requires_grad) return;
    ensure_grad(*ix);
    const double g = self.grad[0] / static_cast<double>(n);
    double* gx = ix->grad.data();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

Tensor square(const Tensor& x) {
  std::vector<double> out(x.size());
  kernels::mul(x.data().data(), x.data().data(), out.data(), x.size());
  TensorImpl* ix = x.impl();
  return make_op(x.shape(), std::move(out), {x}, [ix](TensorImpl& self) {
    if (!ix->requires_grad) return;
    ensure_grad(*ix);
    std::vector<double> tmp(self.data.size());
    kernels::mul(self.grad.data(), ix->data.data(), tmp.data(), self.data.size());
    kernels::axpy(2.0, tmp.data(), ix->grad.data(), self.data.size());
  });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Tensor norm(const Tensor& x) { return nbode::sqrt(sum(square(x))); }

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw TensorError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw TensorError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                      shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_error("concat", first, s);
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) shape_error("concat", first, s);
    }
    out_shape[axis] += s[axis];
  }

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<double> out(shape_size(out_shape));
  const std::size_t out_row = out_shape[axis] * inner;
  std::size_t col_offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t block = p.shape()[axis] * inner;
    const double* src = p.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + o * out_row + col_offset, src + o * block, block * sizeof(double));
    }
    col_offset += block;
  }

  auto impl = make_impl(std::move(out_shape), std::move(out));
  bool needs_grad = false;
  for (const Tensor& p : parts) needs_grad = needs_grad || p.requires_grad();
  if (g_autograd_enabled && needs_grad) {
    impl->requires_grad = true;
    std::vector<TensorImpl*> raw;
    std::vector<std::size_t> blocks;
    for (const Tensor& p : parts) {
      impl->parents.push_back(p.handle());
      raw.push_back(p.impl());
      blocks.push_back(p.shape()[axis] * inner);
    }
    impl->backward_step = [raw, blocks, outer, out_row](TensorImpl& self) {
      const double* g = self.grad.data();
      std::size_t offset = 0;
      for (std::size_t part = 0; part < raw.size(); ++part) {
        TensorImpl* p = raw[part];
        const std::size_t block = blocks[part];
        if (p->requires_grad) {
          ensure_grad(*p);
          for (std::size_t o = 0; o < outer; ++o) {
            kernels::axpy(1.0, g + o * out_row + offset, p->grad.data() + o * block, block);
          }
        }
        offset += block;
      }
    };
  }
  return Tensor(std::move(impl));
}

Tensor index_select(const Tensor& x, const std::vector<std::size_t>& rows) {
  if (x.shape().empty()) throw TensorError("index_select: rank-0 input");
  const std::size_t n_rows = x.shape()[0];
  const std::size_t width = x.size() / std::max<std::size_t>(n_rows, 1);
  for (std::size_t r : rows) {
    if (r >= n_rows) {
      throw TensorError("index_select: row " + std::to_string(r) + " out of range for shape " +
                        shape_str(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * width);
  const double* src = x.data().data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::memcpy(out.data() + i * width, src + rows[i] * width, width * sizeof(double));
  }
  TensorImpl* ix = x.impl();
  return make_op(std::move(out_shape), std::move(out), {x}, [ix, rows, width](TensorImpl& self) {
    if (!ix->requires_grad) return;
    ensure_grad(*ix);
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      kernels::axpy(1.0, g + i * width, ix->grad.data() + rows[i] * width, width);
    }
  });
}

Tensor segment_sum(const Tensor& x, const std::vector<std::size_t>& segment_ids,
                   std::size_t n_segments) {
  if (x.shape().size() != 2) {
    throw TensorError("segment_sum: expected rank-2 input, got " + shape_str(x.shape()));
  }
  const std::size_t n_rows = x.shape()[0];
  const std::size_t width = x.shape()[1];
  if (segment_ids.size() != n_rows) {
    throw TensorError("segment_sum: " + std::to_string(segment_ids.size()) + " ids for " +
                      std::to_string(n_rows) + " rows");
  }
  for (std::size_t s : segment_ids) {
    if (s >= n_segments) throw TensorError("segment_sum: segment id out of range");
  }
  std::vector<double> out(n_segments * width, 0.0);
  const double* src = x.data().data();
  for (std::size_t e = 0; e < n_rows; ++e) {
    kernels::axpy(1.0, src + e * width, out.data() + segment_ids[e] * width, width);
  }
  TensorImpl* ix = x.impl();
  return make_op({n_segments, width}, std::move(out), {x},
                 [ix, segment_ids, width](TensorImpl& self) {
                   if (!ix->requires_grad) return;
                   ensure_grad(*ix);
                   const double* g = self.grad.data();
                   for (std::size_t e = 0; e < segment_ids.size(); ++e) {
                     kernels::axpy(1.0, g + segment_ids[e] * width,
                                   ix->grad.data() + e * width, width);
                   }
                 });
}

Tensor broadcast_to(const Tensor& x, const Shape& target) {
  const Shape check = broadcast_shapes("broadcast_to", x.shape(), target);
  if (check != target) shape_error("broadcast_to", x.shape(), target);
  std::vector<double> out(shape_size(target));
  const auto sx = bcast_strides(x.shape(), target);
  const auto zero = std::vector<std::size_t>(target.size(), 0);
  const double* px = x.data().data();
  for_each_bcast(target, sx, zero,
                 [&](std::size_t f, std::size_t i, std::size_t) { out[f] = px[i]; });
  TensorImpl* ix = x.impl();
  return make_op(target, std::move(out), {x}, [ix](TensorImpl& self) {
    if (!ix->requires_grad) return;
    ensure_grad(*ix);
    reduce_into(self.grad.data(), self.shape, ix->grad.data(), ix->shape, 1.0);
  });
}

Tensor silu(const Tensor& x) {
  return unary_op(
      x,
      [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s + v * s * (1.0 - s);
      });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

}  // namespace nbode
