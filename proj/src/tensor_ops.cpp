#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "tbigan/errors.hpp"
#include "tbigan/tensor.hpp"

namespace tbigan {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::size_t norm_axis(int axis, std::size_t dim) {
  const int d = static_cast<int>(dim);
  if (axis < 0) axis += d;
  if (axis < 0 || axis >= d) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(dim));
  }
  return static_cast<std::size_t>(axis);
}

Shape strip_leading_ones(const Shape& s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] == 1) ++i;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  const auto na = shape_numel(a);
  const auto nb = shape_numel(b);
  if (nb == 1 && (na != 1 || a.size() >= b.size())) return a;
  if (na == 1) return b;
  if (is_suffix(strip_leading_ones(b), a) && a.size() >= b.size()) return a;
  if (is_suffix(strip_leading_ones(a), b) && b.size() >= a.size()) return b;
  throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                   " are not broadcast-compatible (trailing-suffix rule)");
}

template <typename F>
std::vector<double> binary_kernel(const Tensor& a, const Tensor& b, const Shape& out_shape,
                                  F f) {
  const auto n = shape_numel(out_shape);
  const auto na = a.numel();
  const auto nb = b.numel();
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  std::vector<double> out(n);
  double* o = out.data();
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) o[i] = f(ad[i], bd[i]);
  } else if (na == n && nb == 1) {
    const double bv = bd[0];
    for (std::size_t i = 0; i < n; ++i) o[i] = f(ad[i], bv);
  } else if (nb == n && na == 1) {
    const double av = ad[0];
    for (std::size_t i = 0; i < n; ++i) o[i] = f(av, bd[i]);
  } else if (na == n && n % nb == 0) {
    // b repeats as a trailing block
    for (std::size_t base = 0; base < n; base += nb) {
      for (std::size_t k = 0; k < nb; ++k) o[base + k] = f(ad[base + k], bd[k]);
    }
  } else if (nb == n && n % na == 0) {
    for (std::size_t base = 0; base < n; base += na) {
      for (std::size_t k = 0; k < na; ++k) o[base + k] = f(ad[k], bd[base + k]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) o[i] = f(ad[i % na], bd[i % nb]);
  }
  return out;
}

template <typename F>
std::vector<double> unary_kernel(const Tensor& x, F f) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  return out;
}

Tensor constant_like(const Tensor& x, std::vector<double> values) {
  return Tensor(x.shape(), std::move(values));
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void gemm(const double* a, std::size_t ar, std::size_t ac, bool ta, const double* b,
          std::size_t br, std::size_t bc, bool tb, double* c, std::size_t m, std::size_t n) {
  ConstMap A(a, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
  ConstMap B(b, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
  MutMap C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (!ta && !tb) {
    C.noalias() = A * B;
  } else if (!ta && tb) {
    C.noalias() = A * B.transpose();
  } else if (ta && !tb) {
    C.noalias() = A.transpose() * B;
  } else {
    C.noalias() = A.transpose() * B.transpose();
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Broadcast plumbing

Tensor sum_to_shape(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const auto n = shape_numel(shape);
  if (n == x.numel()) return reshape(x, shape);
  if (x.numel() % n != 0) {
    throw ShapeError("cannot reduce " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(n, 0.0);
  const auto xd = x.data();
  for (std::size_t base = 0; base < xd.size(); base += n) {
    for (std::size_t k = 0; k < n; ++k) out[k] += xd[base + k];
  }
  const Shape in_shape = x.shape();
  return make_result(shape, std::move(out), {x}, "sum_to_shape",
                     [in_shape](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {expand_to(g, in_shape)};
                     });
}

Tensor expand_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const auto n = shape_numel(shape);
  if (n == x.numel()) return reshape(x, shape);
  broadcast_shape(shape, x.shape());
  std::vector<double> out(n);
  const auto xd = x.data();
  const auto nx = xd.size();
  for (std::size_t base = 0; nx > 0 && base < n; base += nx) {
    std::copy(xd.begin(), xd.end(), out.begin() + static_cast<std::ptrdiff_t>(base));
  }
  const Shape in_shape = x.shape();
  return make_result(shape, std::move(out), {x}, "expand_to",
                     [in_shape](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {sum_to_shape(g, in_shape)};
                     });
}

// ---------------------------------------------------------------------------
// Binary elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  const auto shape = broadcast_shape(a.shape(), b.shape());
  auto out = binary_kernel(a, b, shape, [](double x, double y) { return x + y; });
  return make_result(shape, std::move(out), {a, b}, "add",
                     [as = a.shape(), bs = b.shape()](const Tensor& g,
                                                      const Tensor&) -> std::vector<Tensor> {
                       return {sum_to_shape(g, as), sum_to_shape(g, bs)};
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto shape = broadcast_shape(a.shape(), b.shape());
  auto out = binary_kernel(a, b, shape, [](double x, double y) { return x - y; });
  return make_result(shape, std::move(out), {a, b}, "sub",
                     [as = a.shape(), bs = b.shape()](const Tensor& g,
                                                      const Tensor&) -> std::vector<Tensor> {
                       return {sum_to_shape(g, as), sum_to_shape(neg(g), bs)};
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto shape = broadcast_shape(a.shape(), b.shape());
  auto out = binary_kernel(a, b, shape, [](double x, double y) { return x * y; });
  return make_result(shape, std::move(out), {a, b}, "mul",
                     [a, b](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       Tensor ga, gb;
                       if (a.requires_grad()) ga = sum_to_shape(mul(g, b), a.shape());
                       if (b.requires_grad()) gb = sum_to_shape(mul(g, a), b.shape());
                       return {ga, gb};
                     });
}

Tensor div(const Tensor& a, const Tensor& b) {
  const auto shape = broadcast_shape(a.shape(), b.shape());
  auto out = binary_kernel(a, b, shape, [](double x, double y) { return x / y; });
  return make_result(shape, std::move(out), {a, b}, "div",
                     [a, b](const Tensor& g, const Tensor& out) -> std::vector<Tensor> {
                       Tensor ga, gb;
                       if (a.requires_grad()) ga = sum_to_shape(div(g, b), a.shape());
                       if (b.requires_grad()) gb = sum_to_shape(neg(div(mul(g, out), b)), b.shape());
                       return {ga, gb};
                     });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& x) { return neg(x); }
Tensor operator*(const Tensor& x, double s) { return mul_scalar(x, s); }
Tensor operator*(double s, const Tensor& x) { return mul_scalar(x, s); }
Tensor operator+(const Tensor& x, double s) { return add_scalar(x, s); }

// ---------------------------------------------------------------------------
// Unary elementwise

Tensor add_scalar(const Tensor& x, double s) {
  return make_result(x.shape(), unary_kernel(x, [s](double v) { return v + s; }), {x},
                     "add_scalar",
                     [](const Tensor& g, const Tensor&) -> std::vector<Tensor> { return {g}; });
}

Tensor mul_scalar(const Tensor& x, double s) {
  return make_result(x.shape(), unary_kernel(x, [s](double v) { return v * s; }), {x},
                     "mul_scalar", [s](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {mul_scalar(g, s)};
                     });
}

Tensor neg(const Tensor& x) {
  return make_result(x.shape(), unary_kernel(x, [](double v) { return -v; }), {x}, "neg",
                     [](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {neg(g)};
                     });
}

Tensor exp(const Tensor& x) {
  return make_result(x.shape(), unary_kernel(x, [](double v) { return std::exp(v); }), {x},
                     "exp", [](const Tensor& g, const Tensor& out) -> std::vector<Tensor> {
                       return {mul(g, out)};
                     });
}

Tensor log(const Tensor& x) {
  return make_result(x.shape(), unary_kernel(x, [](double v) { return std::log(v); }), {x},
                     "log", [x](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {div(g, x)};
                     });
}

Tensor tanh(const Tensor& x) {
  return make_result(x.shape(), unary_kernel(x, [](double v) { return std::tanh(v); }), {x},
                     "tanh", [](const Tensor& g, const Tensor& out) -> std::vector<Tensor> {
                       return {mul(g, add_scalar(neg(square(out)), 1.0))};
                     });
}

Tensor sigmoid(const Tensor& x) {
  auto f = [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return make_result(x.shape(), unary_kernel(x, f), {x}, "sigmoid",
                     [](const Tensor& g, const Tensor& out) -> std::vector<Tensor> {
                       return {mul(g, mul(out, add_scalar(neg(out), 1.0)))};
                     });
}

Tensor softplus(const Tensor& x) {
  auto f = [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); };
  return make_result(x.shape(), unary_kernel(x, f), {x}, "softplus",
                     [x](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {mul(g, sigmoid(x))};
                     });
}

Tensor abs(const Tensor& x) {
  return make_result(x.shape(), unary_kernel(x, [](double v) { return std::abs(v); }), {x},
                     "abs", [x](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       auto sign = unary_kernel(
                           x, [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
                       return {mul(g, constant_like(x, std::move(sign)))};
                     });
}

Tensor pow(const Tensor& x, double p) {
  if (p == 1.0) return x;
  return make_result(x.shape(), unary_kernel(x, [p](double v) { return std::pow(v, p); }),
                     {x}, "pow", [x, p](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {mul(g, mul_scalar(pow(x, p - 1.0), p))};
                     });
}

Tensor square(const Tensor& x) {
  return make_result(x.shape(), unary_kernel(x, [](double v) { return v * v; }), {x},
                     "square", [x](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {mul(g, mul_scalar(x, 2.0))};
                     });
}

Tensor sqrt(const Tensor& x) {
  return make_result(x.shape(), unary_kernel(x, [](double v) { return std::sqrt(v); }), {x},
                     "sqrt", [](const Tensor& g, const Tensor& out) -> std::vector<Tensor> {
                       return {mul_scalar(div(g, out), 0.5)};
                     });
}

Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

Tensor leaky_relu(const Tensor& x, double slope) {
  return make_result(
      x.shape(), unary_kernel(x, [slope](double v) { return v > 0 ? v : slope * v; }), {x},
      "leaky_relu", [x, slope](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
        auto mask = unary_kernel(x, [slope](double v) { return v > 0 ? 1.0 : slope; });
        return {mul(g, constant_like(x, std::move(mask)))};
      });
}

namespace {

constexpr double kGeluC = 0.044715;

// tanh via exp; noticeably cheaper than std::tanh and exact at the saturated ends.
inline double fast_tanh(double u) { return 1.0 - 2.0 / (1.0 + std::exp(2.0 * u)); }

// d gelu / dx written with tensor ops, so it can itself be differentiated.
Tensor gelu_derivative_composite(const Tensor& x) {
  const double k = std::sqrt(2.0 / std::numbers::pi);
  Tensor x2 = square(x);
  Tensor t = tanh(mul_scalar(mul(x, add_scalar(mul_scalar(x2, kGeluC), 1.0)), k));
  Tensor du = mul_scalar(add_scalar(mul_scalar(x2, 3.0 * kGeluC), 1.0), k);
  Tensor sech2 = add_scalar(neg(square(t)), 1.0);
  return add(mul_scalar(add_scalar(t, 1.0), 0.5), mul(mul_scalar(x, 0.5), mul(sech2, du)));
}

}  // namespace

Tensor gelu(const Tensor& x) {
  // tanh approximation. The first-order backward is a fused kernel; when the
  // backward pass itself is being recorded it switches to tensor ops.
  const double k = std::sqrt(2.0 / std::numbers::pi);
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const double v = xd[i];
    out[i] = 0.5 * v * (1.0 + fast_tanh(k * (v + kGeluC * v * v * v)));
  }
  return make_result(x.shape(), std::move(out), {x}, "gelu",
                     [x, k](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       if (grad_enabled()) return {mul(g, gelu_derivative_composite(x))};
                       const auto xv = x.data();
                       const auto gv = g.data();
                       std::vector<double> dx(xv.size());
                       for (std::size_t i = 0; i < xv.size(); ++i) {
                         const double v = xv[i];
                         const double t = fast_tanh(k * (v + kGeluC * v * v * v));
                         const double du = k * (1.0 + 3.0 * kGeluC * v * v);
                         dx[i] = gv[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                       }
                       return {Tensor(x.shape(), std::move(dx))};
                     });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result(Shape{}, {s}, {x}, "sum",
                     [xs = x.shape()](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {expand_to(g, xs)};
                     });
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, int axis) {
  const auto ax = norm_axis(axis, x.dim());
  const auto sp = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.n; ++j) {
      const double* src = xd.data() + (o * sp.n + j) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  const auto n = sp.n;
  return make_result(std::move(out_shape), std::move(out), {x}, "sum_axis",
                     [ax, n](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {expand_axis(g, static_cast<int>(ax), n)};
                     });
}

Tensor mean_axis(const Tensor& x, int axis) {
  return mul_scalar(sum_axis(x, axis), 1.0 / static_cast<double>(x.size(axis)));
}

Tensor expand_axis(const Tensor& x, int axis, std::size_t n) {
  const int d = static_cast<int>(x.dim()) + 1;
  if (axis < 0) axis += d;
  if (axis < 0 || axis >= d) throw ShapeError("expand_axis: axis out of range");
  const auto ax = static_cast<std::size_t>(axis);
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(ax), n);
  const auto sp = split_at(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  const auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const double* src = xd.data() + o * sp.inner;
    for (std::size_t j = 0; j < sp.n; ++j) {
      std::copy(src, src + sp.inner, out.data() + (o * sp.n + j) * sp.inner);
    }
  }
  return make_result(std::move(out_shape), std::move(out), {x}, "expand_axis",
                     [ax](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {sum_axis(g, static_cast<int>(ax))};
                     });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  if (a.dim() != b.dim() || (a.dim() != 2 && a.dim() != 3)) {
    throw ShapeError("matmul expects two 2-D or two 3-D tensors, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const bool batched = a.dim() == 3;
  const std::size_t batch = batched ? a.shape()[0] : 1;
  if (batched && b.shape()[0] != batch) {
    throw ShapeError("matmul batch mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t ar = a.shape()[a.dim() - 2], ac = a.shape()[a.dim() - 1];
  const std::size_t br = b.shape()[b.dim() - 2], bc = b.shape()[b.dim() - 1];
  const std::size_t m = transpose_a ? ac : ar;
  const std::size_t ka = transpose_a ? ar : ac;
  const std::size_t kb = transpose_b ? bc : br;
  const std::size_t n = transpose_b ? br : bc;
  if (ka != kb) {
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) +
                     (transpose_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                     (transpose_b ? "^T" : ""));
  }
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  std::vector<double> out(batch * m * n);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(ad.data() + i * ar * ac, ar, ac, transpose_a, bd.data() + i * br * bc, br, bc,
         transpose_b, out.data() + i * m * n, m, n);
  }
  return make_result(
      std::move(out_shape), std::move(out), {a, b}, "matmul",
      [a, b, transpose_a, transpose_b](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
        Tensor ga, gb;
        const bool need_a = a.requires_grad(), need_b = b.requires_grad();
        if (!transpose_a && !transpose_b) {
          if (need_a) ga = matmul(g, b, false, true);
          if (need_b) gb = matmul(a, g, true, false);
        } else if (!transpose_a && transpose_b) {
          if (need_a) ga = matmul(g, b, false, false);
          if (need_b) gb = matmul(g, a, true, false);
        } else if (transpose_a && !transpose_b) {
          if (need_a) ga = matmul(b, g, false, true);
          if (need_b) gb = matmul(a, g, false, false);
        } else {
          if (need_a) ga = matmul(b, g, true, true);
          if (need_b) gb = matmul(g, a, true, true);
        }
        return {ga, gb};
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  if (shape == x.shape()) return x;
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, "reshape",
                     [xs = x.shape()](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {reshape(g, xs)};
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const auto d = x.dim();
  if (perm.size() != d) throw ShapeError("permute: rank mismatch");
  if (d == 0) return x;
  std::vector<bool> seen(d, false);
  for (auto p : perm) {
    if (p >= d || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  const auto& in_shape = x.shape();
  std::vector<std::size_t> in_strides(d, 1);
  for (std::size_t i = d; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(d);
  std::vector<std::size_t> strides(d);
  for (std::size_t i = 0; i < d; ++i) {
    out_shape[i] = in_shape[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  const auto n = x.numel();
  std::vector<double> out(n);
  const auto xd = x.data();
  if (n > 0) {
    // Walk the output in row-major order; the innermost axis is a strided copy.
    const std::size_t last = d - 1;
    const std::size_t inner = out_shape[last];
    const std::size_t inner_stride = strides[last];
    std::vector<std::size_t> idx(d, 0);
    std::size_t offset = 0;
    for (std::size_t pos = 0; pos < n; pos += inner) {
      const double* src = xd.data() + offset;
      for (std::size_t k = 0; k < inner; ++k) out[pos + k] = src[k * inner_stride];
      for (std::size_t ax = last; ax-- > 0;) {
        ++idx[ax];
        offset += strides[ax];
        if (idx[ax] < out_shape[ax]) break;
        offset -= strides[ax] * idx[ax];
        idx[ax] = 0;
      }
    }
  }
  std::vector<std::size_t> inverse(d);
  for (std::size_t i = 0; i < d; ++i) inverse[perm[i]] = i;
  return make_result(std::move(out_shape), std::move(out), {x}, "permute",
                     [inverse](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {permute(g, inverse)};
                     });
}

Tensor transpose(const Tensor& x) {
  if (x.dim() != 2) throw ShapeError("transpose expects a 2-D tensor");
  return permute(x, {1, 0});
}

Tensor slice_axis(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const auto ax = norm_axis(axis, x.dim());
  const auto sp = split_at(x.shape(), ax);
  if (start + length > sp.n) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  std::vector<double> out(sp.outer * length * sp.inner);
  const auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const double* src = xd.data() + (o * sp.n + start) * sp.inner;
    std::copy(src, src + length * sp.inner, out.data() + o * length * sp.inner);
  }
  const std::size_t after = sp.n - start - length;
  return make_result(std::move(out_shape), std::move(out), {x}, "slice_axis",
                     [ax, start, after](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {pad_axis(g, static_cast<int>(ax), start, after)};
                     });
}

Tensor pad_axis(const Tensor& x, int axis, std::size_t before, std::size_t after) {
  const auto ax = norm_axis(axis, x.dim());
  if (before == 0 && after == 0) return x;
  const auto sp = split_at(x.shape(), ax);
  const std::size_t total = sp.n + before + after;
  Shape out_shape = x.shape();
  out_shape[ax] = total;
  std::vector<double> out(sp.outer * total * sp.inner, 0.0);
  const auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const double* src = xd.data() + o * sp.n * sp.inner;
    std::copy(src, src + sp.n * sp.inner, out.data() + (o * total + before) * sp.inner);
  }
  const std::size_t n = sp.n;
  return make_result(std::move(out_shape), std::move(out), {x}, "pad_axis",
                     [ax, before, n](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       return {slice_axis(g, static_cast<int>(ax), before, n)};
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const auto ax = norm_axis(axis, parts[0].dim());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat rank mismatch");
    widths.push_back(s[ax]);
    s[ax] = 0;
    Shape ref = out_shape;
    ref[ax] = 0;
    if (s != ref) throw ShapeError("concat shape mismatch at " + shape_str(p.shape()));
    out_shape[ax] += widths.back();
  }
  const auto sp = split_at(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].data();
    const std::size_t w = widths[k];
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(pd.data() + o * w * sp.inner, pd.data() + (o + 1) * w * sp.inner,
                out.data() + (o * sp.n + offset) * sp.inner);
    }
    offset += w;
  }
  return make_result(std::move(out_shape), std::move(out), parts, "concat",
                     [ax, widths](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
                       std::vector<Tensor> grads;
                       std::size_t start = 0;
                       for (auto w : widths) {
                         grads.push_back(slice_axis(g, static_cast<int>(ax), start, w));
                         start += w;
                       }
                       return grads;
                     });
}

// ---------------------------------------------------------------------------
// Composite layers

Tensor softmax(const Tensor& x, int axis) {
  const auto ax = norm_axis(axis, x.dim());
  const auto sp = split_at(x.shape(), ax);
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, xd[base + j * sp.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) {
        const double e = std::exp(xd[base + j * sp.inner] - mx);
        out[base + j * sp.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < sp.n; ++j) out[base + j * sp.inner] /= total;
    }
  }
  const auto n = sp.n;
  return make_result(x.shape(), std::move(out), {x}, "softmax",
                     [ax, n](const Tensor& g, const Tensor& y) -> std::vector<Tensor> {
                       const int a = static_cast<int>(ax);
                       Tensor dot = expand_axis(sum_axis(mul(g, y), a), a, n);
                       return {mul(y, sub(g, dot))};
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) throw ConfigError("layer_norm eps must be positive");
  const std::size_t d = x.size(-1);
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm gain/bias must have shape (" + std::to_string(d) + "), got " +
                     shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (xr[j] - mu) * inv * gd[j] + bd[j];
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
      [x, gain, bias, eps, d, rows](const Tensor& g, const Tensor&) -> std::vector<Tensor> {
        if (grad_enabled()) {
          // Recorded backward: express everything with differentiable ops.
          Tensor mu = expand_axis(mean_axis(x, -1), -1, d);
          Tensor centered = sub(x, mu);
          Tensor var = mean_axis(square(centered), -1);
          Tensor inv = expand_axis(pow(add_scalar(var, eps), -0.5), -1, d);
          Tensor xhat = mul(centered, inv);
          Tensor gh = mul(g, gain);
          Tensor m1 = expand_axis(mean_axis(gh, -1), -1, d);
          Tensor m2 = expand_axis(mean_axis(mul(gh, xhat), -1), -1, d);
          Tensor dx = mul(inv, sub(sub(gh, m1), mul(xhat, m2)));
          return {dx, sum_to_shape(mul(g, xhat), gain.shape()), sum_to_shape(g, bias.shape())};
        }
        const auto xv = x.data();
        const auto gv = g.data();
        const auto gn = gain.data();
        std::vector<double> dx(xv.size()), dgain(d, 0.0), dbias(d, 0.0), xhat(d), gh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = xv.data() + r * d;
          const double* gr = gv.data() + r * d;
          double mu = 0.0;
          for (std::size_t j = 0; j < d; ++j) mu += xr[j];
          mu /= static_cast<double>(d);
          double var = 0.0;
          for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
          var /= static_cast<double>(d);
          const double inv = 1.0 / std::sqrt(var + eps);
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (xr[j] - mu) * inv;
            gh[j] = gr[j] * gn[j];
            m1 += gh[j];
            m2 += gh[j] * xhat[j];
            dgain[j] += gr[j] * xhat[j];
            dbias[j] += gr[j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) dx[r * d + j] = inv * (gh[j] - m1 - xhat[j] * m2);
        }
        return {Tensor(x.shape(), std::move(dx)), Tensor(gain.shape(), std::move(dgain)),
                Tensor(bias.shape(), std::move(dbias))};
      });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
  return sub(softplus(logits), mul(logits, target));
}

Tensor bce_with_logits(const Tensor& logits, double target) {
  if (target == 0.0) return softplus(logits);
  return sub(softplus(logits), mul_scalar(logits, target));
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool training) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be below 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? scale : 0.0;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

}  // namespace tbigan
