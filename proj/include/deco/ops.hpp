#pragma once

// Pointwise, reduction and structural ops over Tensor<Scalar>.
//
// Binary ops accept exactly equal shapes, or a single-element operand that is
// broadcast against the other side. Nothing more general is supported.

#include "deco/tensor.hpp"

#include <cmath>

namespace deco {

namespace detail {

template <typename S>
void check_binary(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() == b.shape() || a.size() == 1 || b.size() == 1) return;
  throw ValidationError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
}

template <typename S>
const Shape& binary_shape(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.size() == 1 && b.size() != 1) return b.shape();
  return a.shape();
}

// Reduces a full-size gradient to the operand's size (sum for scalar broadcast).
template <typename V>
V reduce_to(const V& g, Index n) {
  if (g.size() == n) return g;
  return V::Constant(1, g.sum());
}

// (outer, axis, inner) factorisation of a shape around one axis.
struct AxisSplit {
  Index outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ValidationError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (int i = axis + 1; i < rank; ++i) s.inner *= shape[i];
  return s;
}

inline int normalise_axis(int axis, int rank) { return axis < 0 ? axis + rank : axis; }

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_binary(a, b, "add");
  using V = typename Tensor<S>::Vector;
  const Shape shape = detail::binary_shape(a, b);
  V out;
  if (a.size() == b.size()) out = a.values() + b.values();
  else if (a.size() == 1) out = b.values().array() + a[0];
  else out = a.values().array() + b[0];
  auto an = a.node(), bn = b.node();
  return Tensor<S>::make_result(shape, std::move(out), {an, bn}, [an, bn](const V& g) {
    if (an->requires_grad) an->accumulate(detail::reduce_to(g, an->value.size()));
    if (bn->requires_grad) bn->accumulate(detail::reduce_to(g, bn->value.size()));
  });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_binary(a, b, "sub");
  using V = typename Tensor<S>::Vector;
  const Shape shape = detail::binary_shape(a, b);
  V out;
  if (a.size() == b.size()) out = a.values() - b.values();
  else if (a.size() == 1) out = (-b.values().array()) + a[0];
  else out = a.values().array() - b[0];
  auto an = a.node(), bn = b.node();
  return Tensor<S>::make_result(shape, std::move(out), {an, bn}, [an, bn](const V& g) {
    if (an->requires_grad) an->accumulate(detail::reduce_to(g, an->value.size()));
    if (bn->requires_grad) bn->accumulate(detail::reduce_to(V(-g), bn->value.size()));
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_binary(a, b, "mul");
  using V = typename Tensor<S>::Vector;
  const Shape shape = detail::binary_shape(a, b);
  V out;
  if (a.size() == b.size()) out = a.values().cwiseProduct(b.values());
  else if (a.size() == 1) out = b.values() * a[0];
  else out = a.values() * b[0];
  auto an = a.node(), bn = b.node();
  return Tensor<S>::make_result(shape, std::move(out), {an, bn}, [an, bn](const V& g) {
    const auto& av = an->value;
    const auto& bv = bn->value;
    if (an->requires_grad) {
      V ga = bv.size() == g.size() ? V(g.cwiseProduct(bv)) : V(g * bv[0]);
      an->accumulate(detail::reduce_to(ga, av.size()));
    }
    if (bn->requires_grad) {
      V gb = av.size() == g.size() ? V(g.cwiseProduct(av)) : V(g * av[0]);
      bn->accumulate(detail::reduce_to(gb, bv.size()));
    }
  });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

namespace detail {

// Pointwise map with derivative: y = f(x), dx = g * df(x, y).
template <typename S, typename F, typename DF>
Tensor<S> pointwise(const Tensor<S>& x, F f, DF df) {
  using V = typename Tensor<S>::Vector;
  V out = x.values().unaryExpr(f);
  auto xn = x.node();
  Tensor<S> result = Tensor<S>::make_result(x.shape(), std::move(out), {xn}, nullptr);
  if (result.requires_grad()) {
    std::weak_ptr<Node<S>> self = result.node();
    result.node()->backward_fn = [xn, self, df](const V& g) {
      auto y = self.lock();
      V gx(g.size());
      for (Index i = 0; i < g.size(); ++i) gx[i] = g[i] * df(xn->value[i], y->value[i]);
      xn->accumulate(gx);
    };
  }
  return result;
}

}  // namespace detail

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  return detail::pointwise(x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
  return detail::pointwise(x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> neg(const Tensor<S>& x) { return scale(x, S(-1)); }

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return detail::pointwise(x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  return detail::pointwise(x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

template <typename S>
Tensor<S> square(const Tensor<S>& x) {
  return detail::pointwise(x, [](S v) { return v * v; }, [](S v, S) { return S(2) * v; });
}

/// |x| with subgradient 0 at the origin.
template <typename S>
Tensor<S> abs(const Tensor<S>& x) {
  return detail::pointwise(x, [](S v) { return std::abs(v); },
                           [](S v, S) { return v > 0 ? S(1) : (v < 0 ? S(-1) : S(0)); });
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& x, S alpha = S(0.2)) {
  return detail::pointwise(x, [alpha](S v) { return v >= 0 ? v : alpha * v; },
                           [alpha](S v, S) { return v >= 0 ? S(1) : alpha; });
}

/// log(1 + e^x), evaluated without overflow.
template <typename S>
Tensor<S> softplus(const Tensor<S>& x) {
  return detail::pointwise(
      x, [](S v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](S v, S) { return S(1) / (S(1) + std::exp(-v)); });
}

/// Clamp to [lo, hi]; the gradient is zero where the value was clipped.
template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
  return detail::pointwise(x, [lo, hi](S v) { return std::clamp(v, lo, hi); },
                           [lo, hi](S v, S) { return (v >= lo && v <= hi) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  using V = typename Tensor<S>::Vector;
  auto xn = x.node();
  return Tensor<S>::make_result(Shape{1}, V::Constant(1, x.values().sum()), {xn},
                                [xn](const V& g) { xn->accumulate(V::Constant(xn->value.size(), g[0])); });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  using V = typename Tensor<S>::Vector;
  auto xn = x.node();
  const S inv = S(1) / static_cast<S>(x.size());
  return Tensor<S>::make_result(Shape{1}, V::Constant(1, x.values().sum() * inv), {xn},
                                [xn, inv](const V& g) { xn->accumulate(V::Constant(xn->value.size(), g[0] * inv)); });
}

/// Mean along one axis; the axis is kept with extent 1.
template <typename S>
Tensor<S> mean_axis(const Tensor<S>& x, int axis) {
  using V = typename Tensor<S>::Vector;
  const auto sp = detail::split_axis(x.shape(), axis);
  Shape shape = x.shape();
  shape[detail::normalise_axis(axis, x.rank())] = 1;
  V out = V::Zero(sp.outer * sp.inner);
  const S inv = S(1) / static_cast<S>(sp.extent);
  const auto& xv = x.values();
  for (Index o = 0; o < sp.outer; ++o)
    for (Index e = 0; e < sp.extent; ++e)
      out.segment(o * sp.inner, sp.inner) += xv.segment((o * sp.extent + e) * sp.inner, sp.inner);
  out *= inv;
  auto xn = x.node();
  return Tensor<S>::make_result(shape, std::move(out), {xn}, [xn, sp, inv](const V& g) {
    V& gx = xn->grad_buffer();
    for (Index o = 0; o < sp.outer; ++o)
      for (Index e = 0; e < sp.extent; ++e)
        gx.segment((o * sp.extent + e) * sp.inner, sp.inner) += g.segment(o * sp.inner, sp.inner) * inv;
  });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  using V = typename Tensor<S>::Vector;
  if (shape_numel(shape) != x.size())
    throw ValidationError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes size");
  auto xn = x.node();
  return Tensor<S>::make_result(std::move(shape), x.values(), {xn}, [xn](const V& g) { xn->accumulate(g); });
}

/// Sub-range [start, start+length) along one axis.
template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, Index start, Index length) {
  using V = typename Tensor<S>::Vector;
  const auto sp = detail::split_axis(x.shape(), axis);
  if (start < 0 || length <= 0 || start + length > sp.extent)
    throw ValidationError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                          ") out of range on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  Shape shape = x.shape();
  shape[detail::normalise_axis(axis, x.rank())] = length;
  V out(sp.outer * length * sp.inner);
  const Index block = length * sp.inner;
  for (Index o = 0; o < sp.outer; ++o)
    out.segment(o * block, block) = x.values().segment((o * sp.extent + start) * sp.inner, block);
  auto xn = x.node();
  return Tensor<S>::make_result(shape, std::move(out), {xn}, [xn, sp, start, block](const V& g) {
    V& gx = xn->grad_buffer();
    for (Index o = 0; o < sp.outer; ++o)
      gx.segment((o * sp.extent + start) * sp.inner, block) += g.segment(o * block, block);
  });
}

/// Concatenation along one axis; all other extents must agree.
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  using V = typename Tensor<S>::Vector;
  if (parts.empty()) throw ValidationError("concat of zero tensors");
  const int rank = parts.front().rank();
  axis = detail::normalise_axis(axis, rank);
  Shape shape = parts.front().shape();
  Index total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = shape;
    if (p.rank() != rank) throw ValidationError("concat: rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b) throw ValidationError("concat: shapes " + shape_str(p.shape()) + " and " + shape_str(shape) + " differ off axis");
    total += p.dim(axis);
  }
  shape[axis] = total;
  const auto sp = detail::split_axis(shape, axis);
  V out(shape_numel(shape));
  std::vector<typename Tensor<S>::NodePtr> nodes;
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : parts) {
    const Index block = p.dim(axis) * sp.inner;
    for (Index o = 0; o < sp.outer; ++o)
      out.segment((o * total + offset) * sp.inner, block) = p.values().segment(o * block, block);
    nodes.push_back(p.node());
    offsets.push_back(offset);
    offset += p.dim(axis);
  }
  return Tensor<S>::make_result(shape, std::move(out), nodes, [nodes, offsets, sp, total](const V& g) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      auto& n = nodes[k];
      if (!n->requires_grad) continue;
      const Index extent = n->value.size() / (sp.outer * sp.inner);
      const Index block = extent * sp.inner;
      V& gx = n->grad_buffer();
      for (Index o = 0; o < sp.outer; ++o)
        gx.segment(o * block, block) += g.segment((o * total + offsets[k]) * sp.inner, block);
    }
  });
}

/// Tiles `times` copies along an axis of extent 1.
template <typename S>
Tensor<S> repeat(const Tensor<S>& x, int axis, Index times) {
  using V = typename Tensor<S>::Vector;
  const auto sp = detail::split_axis(x.shape(), axis);
  if (sp.extent != 1) throw ValidationError("repeat expects extent 1 on the repeated axis, got " + shape_str(x.shape()));
  if (times < 1) throw ValidationError("repeat count must be >= 1");
  Shape shape = x.shape();
  shape[detail::normalise_axis(axis, x.rank())] = times;
  V out(sp.outer * times * sp.inner);
  for (Index o = 0; o < sp.outer; ++o)
    for (Index r = 0; r < times; ++r)
      out.segment((o * times + r) * sp.inner, sp.inner) = x.values().segment(o * sp.inner, sp.inner);
  auto xn = x.node();
  return Tensor<S>::make_result(shape, std::move(out), {xn}, [xn, sp, times](const V& g) {
    V& gx = xn->grad_buffer();
    for (Index o = 0; o < sp.outer; ++o)
      for (Index r = 0; r < times; ++r)
        gx.segment(o * sp.inner, sp.inner) += g.segment((o * times + r) * sp.inner, sp.inner);
  });
}

template <typename S>
bool all_finite(const Tensor<S>& x) {
  return x.values().allFinite();
}

}  // namespace deco
