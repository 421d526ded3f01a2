#include "space/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace space::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
bool tracks(const std::vector<Tensor<T>>& inputs) {
  if (!grad_enabled()) return false;
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

// Allocates the output and, when any input is tracked, records `make_fn(out)`
// as its backward closure.
template <typename T, typename MakeFn>
Tensor<T> finish(Tensor<T> out, const std::vector<Tensor<T>>& inputs, MakeFn&& make_fn) {
  if (tracks(inputs)) {
    out.set_requires_grad(true);
    Tape<T>::active().record(out, inputs, make_fn(out.impl()));
  }
  return out;
}

template <typename T>
T* grad_of(const std::shared_ptr<TensorImpl<T>>& impl) {
  if (!impl || !impl->requires_grad) return nullptr;
  impl->ensure_grad();
  return impl->grad.data();
}

struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  plan.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " do not broadcast");
    }
    plan.out[i] = std::max(pa[i], pb[i]);
  }
  std::vector<std::size_t> sa(rank), sb(rank);
  std::size_t accum_a = 1, accum_b = 1;
  for (std::size_t i = rank; i-- > 0;) {
    sa[i] = pa[i] == 1 ? 0 : accum_a;
    sb[i] = pb[i] == 1 ? 0 : accum_b;
    accum_a *= pa[i];
    accum_b *= pb[i];
  }
  const std::size_t n = shape_numel(plan.out);
  plan.ia.resize(n);
  plan.ib.resize(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t off_a = 0, off_b = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    plan.ia[flat] = off_a;
    plan.ib[flat] = off_b;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < plan.out[d]) {
        off_a += sa[d];
        off_b += sb[d];
        break;
      }
      off_a -= sa[d] * (counter[d] - 1);
      off_b -= sb[d] * (counter[d] - 1);
      counter[d] = 0;
    }
  }
  return plan;
}

// f(x, y) -> z; dfa(g, x, y, z) and dfb(g, x, y, z) give input partials.
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA dfa, DB dfb) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape(), name));
  auto out = Tensor<T>::zeros(plan->out);
  const T* x = a.data().data();
  const T* y = b.data().data();
  T* z = out.data().data();
  const std::size_t n = out.numel();
  if (plan->same) {
    for (std::size_t i = 0; i < n; ++i) z[i] = f(x[i], y[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) z[i] = f(x[plan->ia[i]], y[plan->ib[i]]);
  }
  return finish(out, {a, b}, [&](auto oi) {
    return [oi, ai = a.impl(), bi = b.impl(), plan, dfa, dfb]() {
      const T* g = oi->grad.data();
      const T* x = ai->data.data();
      const T* y = bi->data.data();
      const T* z = oi->data.data();
      const std::size_t n = oi->data.size();
      if (T* ga = grad_of(ai)) {
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j = plan->same ? i : plan->ia[i];
          const std::size_t k = plan->same ? i : plan->ib[i];
          ga[j] += dfa(g[i], x[j], y[k], z[i]);
        }
      }
      if (T* gb = grad_of(bi)) {
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j = plan->same ? i : plan->ia[i];
          const std::size_t k = plan->same ? i : plan->ib[i];
          gb[k] += dfb(g[i], x[j], y[k], z[i]);
        }
      }
    };
  });
}

// f(x) -> y; df(x, y) -> dy/dx.
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df) {
  auto out = Tensor<T>::zeros(a.shape());
  const T* x = a.data().data();
  T* y = out.data().data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = f(x[i]);
  return finish(out, {a}, [&](auto oi) {
    return [oi, ai = a.impl(), df]() {
      T* ga = grad_of(ai);
      if (!ga) return;
      const T* g = oi->grad.data();
      const T* x = ai->data.data();
      const T* y = oi->data.data();
      const std::size_t n = oi->data.size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * df(x[i], y[i]);
    };
  });
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
Tensor<T> gather_flat(const Tensor<T>& x, Shape out_shape, std::shared_ptr<std::vector<std::size_t>> src) {
  auto out = Tensor<T>::zeros(std::move(out_shape));
  const T* in = x.data().data();
  T* o = out.data().data();
  for (std::size_t i = 0; i < src->size(); ++i) o[i] = in[(*src)[i]];
  return finish(out, {x}, [&](auto oi) {
    return [oi, xi = x.impl(), src]() {
      T* gx = grad_of(xi);
      if (!gx) return;
      const T* g = oi->grad.data();
      for (std::size_t i = 0; i < src->size(); ++i) gx[(*src)[i]] += g[i];
    };
  });
}

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T, T) { return g; },
      [](T g, T, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T, T) { return g; },
      [](T g, T, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y, T) { return g * y; },
      [](T g, T x, T, T) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (T v : b.data()) {
    if (v == T(0)) throw DomainError("div: division by zero");
  }
  return binary(
      a, b, "div", [](T x, T y) { return x / y; }, [](T g, T, T y, T) { return g / y; },
      [](T g, T, T y, T z) { return -g * z / y; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  return unary(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return mul_scalar(x, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!(v > T(0)) && !std::isnan(v)) throw DomainError("log: nonpositive input " + std::to_string(v));
  }
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary(
      x,
      [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](T v, T) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(kInvSqrt2))); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(kInvSqrt2)));
        const T pdf = T(kInvSqrt2Pi) * std::exp(T(-0.5) * v * v);
        return cdf + v * pdf;
      });
}

template <typename T>
Tensor<T> xlogx(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (v < T(0)) throw DomainError("xlogx: negative input " + std::to_string(v));
  }
  return unary(
      x, [](T v) { return v > T(0) ? v * std::log(v) : T(0); },
      [](T v, T) { return v > T(0) ? std::log(v) + T(1) : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  auto out = Tensor<T>::scalar(total);
  return finish(out, {x}, [&](auto oi) {
    return [oi, xi = x.impl()]() {
      T* gx = grad_of(xi);
      if (!gx) return;
      const T g = oi->grad[0];
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
    };
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis, "sum_axis");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto out = Tensor<T>::zeros(out_shape);
  const T* in = x.data().data();
  T* o = out.data().data();
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) o[a * s.inner + i] += in[(a * s.extent + e) * s.inner + i];
  return finish(out, {x}, [&](auto oi) {
    return [oi, xi = x.impl(), s]() {
      T* gx = grad_of(xi);
      if (!gx) return;
      const T* g = oi->grad.data();
      for (std::size_t a = 0; a < s.outer; ++a)
        for (std::size_t e = 0; e < s.extent; ++e)
          for (std::size_t i = 0; i < s.inner; ++i) gx[(a * s.extent + e) * s.inner + i] += g[a * s.inner + i];
    };
  });
}

template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x, std::size_t axis) {
  const auto extent = split_at(x.shape(), axis, "mean_pool").extent;
  return mul_scalar(sum_axis(x, axis), T(1) / static_cast<T>(extent));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto out = Tensor<T>::from_data(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  return finish(out, {x}, [&](auto oi) {
    return [oi, xi = x.impl()]() {
      T* gx = grad_of(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < oi->grad.size(); ++i) gx[i] += oi->grad[i];
    };
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const auto& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  std::vector<bool> seen(rank, false);
  if (order.size() != rank) throw ShapeError("permute: order length does not match rank " + shape_str(in_shape));
  for (auto ax : order) {
    if (ax >= rank || seen[ax]) throw ShapeError("permute: invalid axis order for " + shape_str(in_shape));
    seen[ax] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[order[i]];
    stride[i] = in_stride[order[i]];
  }
  auto src = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> counter(rank, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < src->size(); ++flat) {
    (*src)[flat] = off;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        off += stride[d];
        break;
      }
      off -= stride[d] * (counter[d] - 1);
      counter[d] = 0;
    }
  }
  return gather_flat(x, out_shape, src);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = split_at(x.shape(), axis, "slice");
  if (begin >= end || end > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for shape " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t width = end - begin;
  auto src = std::make_shared<std::vector<std::size_t>>();
  src->reserve(s.outer * width * s.inner);
  for (std::size_t a = 0; a < s.outer; ++a)
    for (std::size_t e = begin; e < end; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) src->push_back((a * s.extent + e) * s.inner + i);
  return gather_flat(x, out_shape, src);
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& x, std::size_t axis, const std::vector<std::size_t>& index) {
  const auto s = split_at(x.shape(), axis, "index_select");
  if (index.empty()) throw ShapeError("index_select: empty index");
  for (auto idx : index) {
    if (idx >= s.extent) {
      throw ShapeError("index_select: index " + std::to_string(idx) + " out of range for " + shape_str(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[axis] = index.size();
  auto src = std::make_shared<std::vector<std::size_t>>();
  src->reserve(s.outer * index.size() * s.inner);
  for (std::size_t a = 0; a < s.outer; ++a)
    for (auto e : index)
      for (std::size_t i = 0; i < s.inner; ++i) src->push_back((a * s.extent + e) * s.inner + i);
  return gather_flat(x, out_shape, src);
}

template <typename T>
Tensor<T> index_scatter(const Tensor<T>& x, std::size_t axis, const std::vector<std::size_t>& index,
                        std::size_t extent) {
  const auto s = split_at(x.shape(), axis, "index_scatter");
  if (index.size() != s.extent) throw ShapeError("index_scatter: index length does not match axis extent");
  for (auto idx : index) {
    if (idx >= extent) throw ShapeError("index_scatter: target index out of range");
  }
  Shape out_shape = x.shape();
  out_shape[axis] = extent;
  auto dst = std::make_shared<std::vector<std::size_t>>();
  dst->reserve(x.numel());
  for (std::size_t a = 0; a < s.outer; ++a)
    for (auto e : index)
      for (std::size_t i = 0; i < s.inner; ++i) dst->push_back((a * extent + e) * s.inner + i);
  auto out = Tensor<T>::zeros(out_shape);
  const T* in = x.data().data();
  T* o = out.data().data();
  for (std::size_t i = 0; i < dst->size(); ++i) o[(*dst)[i]] += in[i];
  return finish(out, {x}, [&](auto oi) {
    return [oi, xi = x.impl(), dst]() {
      T* gx = grad_of(xi);
      if (!gx) return;
      const T* g = oi->grad.data();
      for (std::size_t i = 0; i < dst->size(); ++i) gx[i] += g[(*dst)[i]];
    };
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out_shape = parts.front().shape();
  split_at(out_shape, axis, "concat");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out_shape.size()) throw ShapeError("concat: rank mismatch " + shape_str(probe));
    total += probe[axis];
    probe[axis] = out_shape[axis];
    if (probe != out_shape) {
      throw ShapeError("concat: shapes " + shape_str(parts.front().shape()) + " and " + shape_str(p.shape()) +
                       " differ off-axis");
    }
  }
  out_shape[axis] = total;
  const auto s = split_at(out_shape, axis, "concat");
  auto out = Tensor<T>::zeros(out_shape);
  auto offsets = std::make_shared<std::vector<std::size_t>>();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets->push_back(offset);
    const std::size_t w = p.shape()[axis];
    const T* in = p.data().data();
    T* o = out.data().data();
    for (std::size_t a = 0; a < s.outer; ++a)
      std::copy(in + a * w * s.inner, in + (a + 1) * w * s.inner, o + (a * s.extent + offset) * s.inner);
    offset += w;
  }
  return finish(out, parts, [&](auto oi) {
    std::vector<std::shared_ptr<TensorImpl<T>>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    return [oi, impls, offsets, s, axis]() {
      const T* g = oi->grad.data();
      for (std::size_t k = 0; k < impls.size(); ++k) {
        T* gp = grad_of(impls[k]);
        if (!gp) continue;
        const std::size_t w = impls[k]->shape[axis];
        for (std::size_t a = 0; a < s.outer; ++a) {
          const T* src = g + (a * s.extent + (*offsets)[k]) * s.inner;
          T* dst = gp + a * w * s.inner;
          for (std::size_t i = 0; i < w * s.inner; ++i) dst[i] += src[i];
        }
      }
    };
  });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  auto out = add(Tensor<T>::zeros(shape), x);
  if (out.shape() != shape) {
    throw ShapeError("broadcast_to: " + shape_str(x.shape()) + " does not expand to " + shape_str(shape));
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim() < 2 || b.dim() < 2) {
    throw ShapeError("matmul: operands must be at least 2-D, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[a.dim() - 2];
  const std::size_t k = a.shape().back();
  const std::size_t kb = b.shape()[b.dim() - 2];
  const std::size_t n = b.shape().back();
  if (k != kb) {
    throw ShapeError("matmul: inner extents differ for " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const bool shared_rhs = b.dim() == 2;
  std::size_t batch = 1;
  if (!shared_rhs) {
    if (a.dim() != b.dim() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw ShapeError("matmul: batch extents differ for " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
    }
    for (std::size_t i = 0; i + 2 < a.dim(); ++i) batch *= a.shape()[i];
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  auto out = Tensor<T>::zeros(out_shape);
  // With a shared right operand the batch folds into the row dimension.
  const std::size_t rows = shared_rhs ? a.numel() / k : m;
  const std::size_t count = shared_rhs ? 1 : batch;
  for (std::size_t i = 0; i < count; ++i) {
    ConstMapMat<T> A(a.data().data() + i * rows * k, rows, k);
    ConstMapMat<T> B(b.data().data() + (shared_rhs ? 0 : i * k * n), k, n);
    MapMat<T> C(out.data().data() + i * rows * n, rows, n);
    C.noalias() = A * B;
  }
  return finish(out, {a, b}, [&](auto oi) {
    return [oi, ai = a.impl(), bi = b.impl(), rows, k, n, count, shared_rhs]() {
      T* ga = grad_of(ai);
      T* gb = grad_of(bi);
      for (std::size_t i = 0; i < count; ++i) {
        ConstMapMat<T> G(oi->grad.data() + i * rows * n, rows, n);
        ConstMapMat<T> A(ai->data.data() + i * rows * k, rows, k);
        ConstMapMat<T> B(bi->data.data() + (shared_rhs ? 0 : i * k * n), k, n);
        if (ga) {
          MapMat<T> GA(ga + i * rows * k, rows, k);
          GA.noalias() += G * B.transpose();
        }
        if (gb) {
          MapMat<T> GB(gb + (shared_rhs ? 0 : i * k * n), k, n);
          GB.noalias() += A.transpose() * G;
        }
      }
    };
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  auto y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

namespace {

// Unfolds batch item `b` of x[B, C, L] into col[C*k, out_len].
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t length, std::size_t kernel, std::size_t stride,
            std::size_t pad, std::size_t out_len, T* col) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t kk = 0; kk < kernel; ++kk) {
      T* row = col + (c * kernel + kk) * out_len;
      for (std::size_t l = 0; l < out_len; ++l) {
        const std::ptrdiff_t pos =
            static_cast<std::ptrdiff_t>(l * stride + kk) - static_cast<std::ptrdiff_t>(pad);
        row[l] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length)) ? x[c * length + pos] : T(0);
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t length, std::size_t kernel, std::size_t stride,
            std::size_t pad, std::size_t out_len, T* x) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t kk = 0; kk < kernel; ++kk) {
      const T* row = col + (c * kernel + kk) * out_len;
      for (std::size_t l = 0; l < out_len; ++l) {
        const std::ptrdiff_t pos =
            static_cast<std::ptrdiff_t>(l * stride + kk) - static_cast<std::ptrdiff_t>(pad);
        if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length)) x[c * length + pos] += row[l];
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  if (x.dim() != 3 || weight.dim() != 3) {
    throw ShapeError("conv1d: expected x[B,C,L] and w[C_out,C_in,k], got " + shape_str(x.shape()) + " and " +
                     shape_str(weight.shape()));
  }
  if (stride == 0) throw ShapeError("conv1d: stride must be >= 1");
  const std::size_t batch = x.size(0), c_in = x.size(1), length = x.size(2);
  const std::size_t c_out = weight.size(0), kernel = weight.size(2);
  if (weight.size(1) != c_in) {
    throw ShapeError("conv1d: input channels differ for " + shape_str(x.shape()) + " and " +
                     shape_str(weight.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{c_out}) {
    throw ShapeError("conv1d: bias shape " + shape_str(bias.shape()) + " does not match " + std::to_string(c_out));
  }
  if (kernel > length + 2 * pad) {
    throw ShapeError("conv1d: kernel width " + std::to_string(kernel) + " exceeds padded input length " +
                     std::to_string(length + 2 * pad));
  }
  const std::size_t out_len = (length + 2 * pad - kernel) / stride + 1;
  const std::size_t patch = c_in * kernel;
  auto out = Tensor<T>::zeros({batch, c_out, out_len});
  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  const T* bd = bias.defined() ? bias.data().data() : nullptr;
  T* od = out.data().data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    std::vector<T> col(patch * out_len);
    im2col(xd + b * c_in * length, c_in, length, kernel, stride, pad, out_len, col.data());
    ConstMapMat<T> W(wd, c_out, patch);
    ConstMapMat<T> X(col.data(), patch, out_len);
    MapMat<T> O(od + b * c_out * out_len, c_out, out_len);
    O.noalias() = W * X;
    if (bd) O.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bd, c_out);
  }
  return finish(out, {x, weight, bias}, [&](auto oi) {
    return [oi, xi = x.impl(), wi = weight.impl(), bi_ = bias.defined() ? bias.impl() : nullptr, batch, c_in,
            length, c_out, kernel, stride, pad, out_len, patch]() {
      T* gx = grad_of(xi);
      T* gw = grad_of(wi);
      T* gbias = grad_of(bi_);
      const T* g = oi->grad.data();
      std::vector<T> partial_w(gw ? batch * c_out * patch : 0, T(0));
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(batch); ++bi) {
        const auto b = static_cast<std::size_t>(bi);
        ConstMapMat<T> G(g + b * c_out * out_len, c_out, out_len);
        ConstMapMat<T> W(wi->data.data(), c_out, patch);
        std::vector<T> col(patch * out_len);
        if (gw) {
          im2col(xi->data.data() + b * c_in * length, c_in, length, kernel, stride, pad, out_len, col.data());
          ConstMapMat<T> X(col.data(), patch, out_len);
          MapMat<T> PW(partial_w.data() + b * c_out * patch, c_out, patch);
          PW.noalias() = G * X.transpose();
        }
        if (gx) {
          MapMat<T> DC(col.data(), patch, out_len);
          DC.noalias() = W.transpose() * G;
          col2im(col.data(), c_in, length, kernel, stride, pad, out_len, gx + b * c_in * length);
        }
      }
      if (gw) {
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < c_out * patch; ++i) gw[i] += partial_w[b * c_out * patch + i];
      }
      if (gbias) {
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < c_out; ++c) {
            T acc = 0;
            const T* row = g + (b * c_out + c) * out_len;
            for (std::size_t l = 0; l < out_len; ++l) acc += row[l];
            gbias[c] += acc;
          }
      }
    };
  });
}

template <typename T>
Tensor<T> max_pool1d(const Tensor<T>& x, std::size_t window) {
  if (x.dim() < 1 || window == 0 || x.shape().back() < window) {
    throw ShapeError("max_pool1d: window " + std::to_string(window) + " invalid for " + shape_str(x.shape()));
  }
  const std::size_t length = x.shape().back();
  const std::size_t out_len = length / window;
  const std::size_t rows = x.numel() / length;
  Shape out_shape = x.shape();
  out_shape.back() = out_len;
  auto out = Tensor<T>::zeros(out_shape);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const T* in = x.data().data();
  T* o = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t l = 0; l < out_len; ++l) {
      std::size_t best = r * length + l * window;
      for (std::size_t w = 1; w < window; ++w) {
        const std::size_t idx = r * length + l * window + w;
        if (in[idx] > in[best]) best = idx;
      }
      (*argmax)[r * out_len + l] = best;
      o[r * out_len + l] = in[best];
    }
  }
  return finish(out, {x}, [&](auto oi) {
    return [oi, xi = x.impl(), argmax]() {
      T* gx = grad_of(xi);
      if (!gx) return;
      const T* g = oi->grad.data();
      for (std::size_t i = 0; i < argmax->size(); ++i) gx[(*argmax)[i]] += g[i];
    };
  });
}

namespace {

// Shared backward for softmax-like maps: dx = y * (g - <g, y>) per row.
template <typename T>
auto softmax_backward(std::shared_ptr<TensorImpl<T>> oi, std::shared_ptr<TensorImpl<T>> xi, AxisSplit s) {
  return [oi, xi, s]() {
    T* gx = grad_of(xi);
    if (!gx) return;
    const T* g = oi->grad.data();
    const T* y = oi->data.data();
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = a * s.extent * s.inner + i;
        T dot = 0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * y[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t idx = base + e * s.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  };
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis, "softmax");
  auto out = Tensor<T>::zeros(x.shape());
  const T* in = x.data().data();
  T* o = out.data().data();
  for (std::size_t a = 0; a < s.outer; ++a) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = a * s.extent * s.inner + i;
      T peak = in[base];
      for (std::size_t e = 1; e < s.extent; ++e) peak = std::max(peak, in[base + e * s.inner]);
      T total = 0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const std::size_t idx = base + e * s.inner;
        o[idx] = std::exp(in[idx] - peak);
        total += o[idx];
      }
      for (std::size_t e = 0; e < s.extent; ++e) o[base + e * s.inner] /= total;
    }
  }
  return finish(out, {x}, [&](auto oi) { return softmax_backward<T>(oi, x.impl(), s); });
}

template <typename T>
Tensor<T> topk_softmax(const Tensor<T>& logits, std::size_t k) {
  if (logits.dim() < 1) throw ShapeError("topk_softmax: scalar input");
  const std::size_t n = logits.shape().back();
  if (k < 1 || k > n) {
    throw std::out_of_range("topk_softmax: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  const std::size_t rows = logits.numel() / n;
  auto out = Tensor<T>::zeros(logits.shape());
  const T* in = logits.data().data();
  T* o = out.data().data();
  std::vector<std::size_t> order(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in + r * n;
    T* dst = o + r * n;
    if (std::any_of(row, row + n, [](T v) { return std::isnan(v); })) {
      std::fill(dst, dst + n, std::numeric_limits<T>::quiet_NaN());
      continue;
    }
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    const T peak = row[order[0]];
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      dst[order[j]] = std::exp(row[order[j]] - peak);
      total += dst[order[j]];
    }
    for (std::size_t j = 0; j < k; ++j) dst[order[j]] /= total;
  }
  AxisSplit s{rows, n, 1};
  return finish(out, {logits}, [&](auto oi) { return softmax_backward<T>(oi, logits.impl(), s); });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.dim() < 1) throw ShapeError("layernorm: scalar input");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layernorm: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " do not match feature width " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  auto out = Tensor<T>::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  const T* in = x.data().data();
  const T* gm = gamma.data().data();
  const T* bt = beta.data().data();
  T* o = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * inv;
      (*xhat)[r * d + j] = h;
      o[r * d + j] = gm[j] * h + bt[j];
    }
  }
  return finish(out, {x, gamma, beta}, [&](auto oi) {
    return [oi, xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), xhat, rstd, rows, d]() {
      T* gx = grad_of(xi);
      T* gg = grad_of(gi);
      T* gb = grad_of(bi);
      const T* g = oi->grad.data();
      const T* gm = gi->data.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g + r * d;
        const T* hr = xhat->data() + r * d;
        if (gg || gb) {
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += gr[j] * hr[j];
            if (gb) gb[j] += gr[j];
          }
        }
        if (gx) {
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = gr[j] * gm[j];
            mean_dh += dh;
            mean_dh_h += dh * hr[j];
          }
          mean_dh /= static_cast<T>(d);
          mean_dh_h /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = gr[j] * gm[j];
            gx[r * d + j] += (*rstd)[r] * (dh - mean_dh - hr[j] * mean_dh_h);
          }
        }
      }
    };
  });
}

#define SPACE_INSTANTIATE_OPS(T)                                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                     \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                                     \
  template Tensor<T> neg(const Tensor<T>&);                                                               \
  template Tensor<T> exp(const Tensor<T>&);                                                               \
  template Tensor<T> log(const Tensor<T>&);                                                               \
  template Tensor<T> softplus(const Tensor<T>&);                                                          \
  template Tensor<T> gelu(const Tensor<T>&);                                                              \
  template Tensor<T> xlogx(const Tensor<T>&);                                                             \
  template Tensor<T> sum(const Tensor<T>&);                                                               \
  template Tensor<T> mean(const Tensor<T>&);                                                              \
  template Tensor<T> sum_axis(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> mean_pool(const Tensor<T>&, std::size_t);                                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                    \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                          \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                      \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                  \
  template Tensor<T> index_select(const Tensor<T>&, std::size_t, const std::vector<std::size_t>&);        \
  template Tensor<T> index_scatter(const Tensor<T>&, std::size_t, const std::vector<std::size_t>&,        \
                                   std::size_t);                                                          \
  template Tensor<T> broadcast_to(const Tensor<T>&, const Shape&);                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,            \
                            std::size_t);                                                                 \
  template Tensor<T> max_pool1d(const Tensor<T>&, std::size_t);                                           \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                              \
  template Tensor<T> topk_softmax(const Tensor<T>&, std::size_t);                                         \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);

SPACE_INSTANTIATE_OPS(float)
SPACE_INSTANTIATE_OPS(double)

#undef SPACE_INSTANTIATE_OPS

}  // namespace space::ops
