#include "tsforge/core/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "tsforge/core/fft.hpp"
#include "tsforge/error.hpp"

namespace tsforge {

using detail::make_result;
using detail::Node;
using detail::parent_grad;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Index maps from each output element to the source element of a and b.
struct Broadcast {
  Shape out;
  bool a_same = true, b_same = true;
  std::vector<std::size_t> a_idx, b_idx;
};

std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - src.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = src.size(); i-- > 0;) {
    strides[i + offset] = src[i] == 1 ? 0 : stride;
    stride *= src[i];
  }
  const std::size_t total = numel_of(out);
  std::vector<std::size_t> idx(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < total; ++i) {
    idx[i] = pos;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      pos += strides[d];
      if (counter[d] < out[d]) break;
      pos -= strides[d] * counter[d];
      counter[d] = 0;
    }
  }
  return idx;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast plan;
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
    }
    plan.out[i] = std::max(da, db);
  }
  plan.a_same = a == plan.out;
  plan.b_same = b == plan.out;
  if (!plan.a_same) plan.a_idx = broadcast_index(a, plan.out);
  if (!plan.b_same) plan.b_idx = broadcast_index(b, plan.out);
  return plan;
}

template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb, const char* name) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape()));
  const std::size_t total = numel_of(plan->out);
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t ia = plan->a_same ? i : plan->a_idx[i];
    const std::size_t ib = plan->b_same ? i : plan->b_idx[i];
    out[i] = f(A[ia], B[ib]);
  }
  return make_result(plan->out, std::move(out), {a, b},
                     [plan, dfa, dfb](Node& o) {
                       const auto& A = o.parents[0]->data;
                       const auto& B = o.parents[1]->data;
                       auto ga = parent_grad(o, 0);
                       auto gb = parent_grad(o, 1);
                       for (std::size_t i = 0; i < o.data.size(); ++i) {
                         const std::size_t ia = plan->a_same ? i : plan->a_idx[i];
                         const std::size_t ib = plan->b_same ? i : plan->b_idx[i];
                         const double g = o.grad[i];
                         if (!ga.empty()) ga[ia] += g * dfa(A[ia], B[ib], o.data[i]);
                         if (!gb.empty()) gb[ib] += g * dfb(A[ia], B[ib], o.data[i]);
                       }
                     },
                     name);
}

// `df(x, y)` is the derivative given input x and output y.
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df, const char* name) {
  const auto A = a.data();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = f(A[i]);
  return make_result(a.shape(), std::move(out), {a},
                     [df](Node& o) {
                       auto ga = parent_grad(o, 0);
                       const auto& A = o.parents[0]->data;
                       for (std::size_t i = 0; i < A.size(); ++i) ga[i] += o.grad[i] * df(A[i], o.data[i]);
                     },
                     name);
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x + y; },
                [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x - y; },
                [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x * y; },
                [](double, double y, double) { return y; }, [](double x, double, double) { return x; }, "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("div: zero divisor");
  }
  return binary(a, b, [](double x, double y) { return x / y; },
                [](double, double y, double) { return 1.0 / y; },
                [](double x, double y, double) { return -x / (y * y); }, "div");
}

Tensor power(const Tensor& a, const Tensor& b) {
  auto plan = plan_broadcast(a.shape(), b.shape());
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < numel_of(plan.out); ++i) {
    const double x = A[plan.a_same ? i : plan.a_idx[i]];
    const double p = B[plan.b_same ? i : plan.b_idx[i]];
    if ((x < 0.0 && p != std::floor(p)) || (x == 0.0 && p < 0.0)) {
      throw DomainError("power: base " + std::to_string(x) + " outside domain for exponent " + std::to_string(p));
    }
  }
  return binary(a, b, [](double x, double p) { return std::pow(x, p); },
                [](double x, double p, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); },
                [](double x, double, double y) { return x > 0.0 ? y * std::log(x) : 0.0; }, "power");
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; }, "add_scalar");
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; }, "mul_scalar");
}

Tensor pow_scalar(const Tensor& a, double p) {
  return power(a, Tensor::scalar(p));
}

Tensor neg(const Tensor& a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; }, "neg");
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive operand " + std::to_string(v));
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; }, "log");
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; },
               "relu");
}

Tensor gelu(const Tensor& a) {
  return unary(a, gelu_value, [](double x, double) { return gelu_grad(x); }, "gelu");
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (v < 0.0) throw DomainError("sqrt: negative operand");
  }
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; }, "sqrt");
}

Tensor abs(const Tensor& a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }, "abs");
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; }, "square");
}

Tensor clamp_min(const Tensor& a, double lo) {
  return unary(a, [lo](double x) { return x > lo ? x : lo; }, [lo](double x, double) { return x > lo ? 1.0 : 0.0; },
               "clamp_min");
}

Tensor huber(const Tensor& r, double delta) {
  return unary(
      r,
      [delta](double x) {
        const double ax = std::fabs(x);
        return ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
      },
      [delta](double x, double) { return std::fabs(x) <= delta ? x : (x > 0.0 ? delta : -delta); }, "huber");
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const std::optional<Tensor>& b) {
  auto need_b = [&]() -> const Tensor& {
    if (!b || !b->defined()) throw ShapeError("elementwise: binary op requires a second operand");
    return *b;
  };
  switch (op) {
    case ElementwiseOp::add: return add(a, need_b());
    case ElementwiseOp::sub: return sub(a, need_b());
    case ElementwiseOp::mul: return mul(a, need_b());
    case ElementwiseOp::div: return div(a, need_b());
    case ElementwiseOp::power: return power(a, need_b());
    case ElementwiseOp::exp: return exp(a);
    case ElementwiseOp::log: return log(a);
    case ElementwiseOp::tanh: return tanh(a);
    case ElementwiseOp::relu: return relu(a);
    case ElementwiseOp::gelu: return gelu(a);
    case ElementwiseOp::sigmoid: return sigmoid(a);
  }
  throw Error("elementwise: unknown op");
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, {s}, {a},
                     [](Node& o) {
                       auto ga = parent_grad(o, 0);
                       for (auto& g : ga) g += o.grad[0];
                     },
                     "sum");
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  return mul_scalar(sum(a), 1.0 / n);
}

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  const std::size_t ax = norm_axis(axis, a.dim());
  const AxisSplit s = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  const auto A = a.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.n; ++k) {
      const double* src = A.data() + (o * s.n + k) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  return make_result(std::move(out_shape), std::move(out), {a},
                     [s](Node& o) {
                       auto ga = parent_grad(o, 0);
                       for (std::size_t oi = 0; oi < s.outer; ++oi) {
                         for (std::size_t k = 0; k < s.n; ++k) {
                           double* dst = ga.data() + (oi * s.n + k) * s.inner;
                           const double* g = o.grad.data() + oi * s.inner;
                           for (std::size_t i = 0; i < s.inner; ++i) dst[i] += g[i];
                         }
                       }
                     },
                     "sum_axis");
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  const std::size_t n = a.size(axis);
  return mul_scalar(sum(a, axis, keepdim), 1.0 / static_cast<double>(n));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) throw ShapeError("matmul requires rank >= 2 operands");
  const std::size_t M = sa[sa.size() - 2], K = sa.back();
  const std::size_t K2 = sb[sb.size() - 2], N = sb.back();
  if (K != K2) {
    throw ShapeError("matmul: inner dims differ " + shape_to_string(sa) + " x " + shape_to_string(sb));
  }
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);

  // Shared right operand: one GEMM over all rows of a.
  if (batch_b.empty()) {
    const std::size_t rows = numel_of(batch_a) * M;
    Shape out_shape = batch_a;
    out_shape.push_back(M);
    out_shape.push_back(N);
    std::vector<double> out(rows * N);
    MapMat(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(N)).noalias() =
        ConstMapMat(a.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(K)) *
        ConstMapMat(b.data().data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
    return make_result(std::move(out_shape), std::move(out), {a, b},
                       [rows, K, N](Node& o) {
                         const auto R = static_cast<Eigen::Index>(rows);
                         const auto KK = static_cast<Eigen::Index>(K);
                         const auto NN = static_cast<Eigen::Index>(N);
                         ConstMapMat G(o.grad.data(), R, NN);
                         auto ga = parent_grad(o, 0);
                         auto gb = parent_grad(o, 1);
                         if (!ga.empty()) {
                           MapMat(ga.data(), R, KK).noalias() +=
                               G * ConstMapMat(o.parents[1]->data.data(), KK, NN).transpose();
                         }
                         if (!gb.empty()) {
                           MapMat(gb.data(), KK, NN).noalias() +=
                               ConstMapMat(o.parents[0]->data.data(), R, KK).transpose() * G;
                         }
                       },
                       "matmul");
  }

  auto plan = std::make_shared<Broadcast>(plan_broadcast(batch_a, batch_b));
  const std::size_t batches = numel_of(plan->out);
  Shape out_shape = plan->out;
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<double> out(batches * M * N);
  const auto A = a.data();
  const auto B = b.data();
  const auto MM = static_cast<Eigen::Index>(M), KK = static_cast<Eigen::Index>(K), NN = static_cast<Eigen::Index>(N);
  for (std::size_t i = 0; i < batches; ++i) {
    const std::size_t ia = plan->a_same ? i : plan->a_idx[i];
    const std::size_t ib = plan->b_same ? i : plan->b_idx[i];
    MapMat(out.data() + i * M * N, MM, NN).noalias() =
        ConstMapMat(A.data() + ia * M * K, MM, KK) * ConstMapMat(B.data() + ib * K * N, KK, NN);
  }
  return make_result(std::move(out_shape), std::move(out), {a, b},
                     [plan, batches, MM, KK, NN](Node& o) {
                       auto ga = parent_grad(o, 0);
                       auto gb = parent_grad(o, 1);
                       const auto& A = o.parents[0]->data;
                       const auto& B = o.parents[1]->data;
                       const std::size_t mk = static_cast<std::size_t>(MM * KK);
                       const std::size_t kn = static_cast<std::size_t>(KK * NN);
                       const std::size_t mn = static_cast<std::size_t>(MM * NN);
                       for (std::size_t i = 0; i < batches; ++i) {
                         const std::size_t ia = plan->a_same ? i : plan->a_idx[i];
                         const std::size_t ib = plan->b_same ? i : plan->b_idx[i];
                         ConstMapMat G(o.grad.data() + i * mn, MM, NN);
                         if (!ga.empty()) {
                           MapMat(ga.data() + ia * mk, MM, KK).noalias() +=
                               G * ConstMapMat(B.data() + ib * kn, KK, NN).transpose();
                         }
                         if (!gb.empty()) {
                           MapMat(gb.data() + ib * kn, KK, NN).noalias() +=
                               ConstMapMat(A.data() + ia * mk, MM, KK).transpose() * G;
                         }
                       }
                     },
                     "bmm");
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.dim());
  const AxisSplit s = split_at(x.shape(), ax);
  const auto X = x.data();
  std::vector<double> out(X.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) mx = std::max(mx, X[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const double e = std::exp(X[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), {x},
                     [s](Node& o) {
                       auto gx = parent_grad(o, 0);
                       for (std::size_t oi = 0; oi < s.outer; ++oi) {
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           const std::size_t base = oi * s.n * s.inner + i;
                           double dot = 0.0;
                           for (std::size_t k = 0; k < s.n; ++k) {
                             dot += o.grad[base + k * s.inner] * o.data[base + k * s.inner];
                           }
                           for (std::size_t k = 0; k < s.n; ++k) {
                             const std::size_t p = base + k * s.inner;
                             gx[p] += o.data[p] * (o.grad[p] - dot);
                           }
                         }
                       }
                     },
                     "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t D = x.shape().back();
  if (gamma.numel() != D || beta.numel() != D) throw ShapeError("layer_norm: affine size mismatch");
  const std::size_t rows = x.numel() / D;
  const auto X = x.data();
  const auto G = gamma.data();
  const auto Bt = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(X.size());
  auto inv = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(X.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = X.data() + r * D;
    double mu = 0.0;
    for (std::size_t j = 0; j < D; ++j) mu += row[j];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t j = 0; j < D; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(D);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = is;
    for (std::size_t j = 0; j < D; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * D + j] = h;
      out[r * D + j] = G[j] * h + Bt[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [xhat, inv, rows, D](Node& o) {
                       auto gx = parent_grad(o, 0);
                       auto gg = parent_grad(o, 1);
                       auto gb = parent_grad(o, 2);
                       const auto& G = o.parents[1]->data;
                       const double dd = static_cast<double>(D);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* g = o.grad.data() + r * D;
                         const double* h = xhat->data() + r * D;
                         double sum_gh = 0.0, sum_ghh = 0.0;
                         for (std::size_t j = 0; j < D; ++j) {
                           if (!gg.empty()) gg[j] += g[j] * h[j];
                           if (!gb.empty()) gb[j] += g[j];
                           const double gh = g[j] * G[j];
                           sum_gh += gh;
                           sum_ghh += gh * h[j];
                         }
                         if (gx.empty()) continue;
                         const double is = (*inv)[r];
                         for (std::size_t j = 0; j < D; ++j) {
                           const double gh = g[j] * G[j];
                           gx[r * D + j] += is / dd * (dd * gh - sum_gh - h[j] * sum_ghh);
                         }
                       }
                     },
                     "layer_norm");
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_to_string(x.shape()) + " -> " + shape_to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x},
                     [](Node& o) {
                       auto gx = parent_grad(o, 0);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
                     },
                     "reshape");
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const std::size_t rank = in.size();
  if (axes.size() != rank) throw ShapeError("permute: axes rank mismatch");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute: invalid axes");
    seen[a] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  auto src = std::make_shared<std::vector<std::size_t>>(x.numel());
  {
    std::vector<std::size_t> counter(rank, 0);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < src->size(); ++i) {
      (*src)[i] = pos;
      for (std::size_t d = rank; d-- > 0;) {
        ++counter[d];
        pos += strides[d];
        if (counter[d] < out_shape[d]) break;
        pos -= strides[d] * counter[d];
        counter[d] = 0;
      }
    }
  }
  const auto X = x.data();
  std::vector<double> out(X.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[(*src)[i]];
  return make_result(std::move(out_shape), std::move(out), {x},
                     [src](Node& o) {
                       auto gx = parent_grad(o, 0);
                       for (std::size_t i = 0; i < src->size(); ++i) gx[(*src)[i]] += o.grad[i];
                     },
                     "permute");
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
  std::vector<std::size_t> axes(x.dim());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  std::swap(axes[norm_axis(axis0, x.dim())], axes[norm_axis(axis1, x.dim())]);
  return permute(x, axes);
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(axis, x.dim());
  const AxisSplit s = split_at(x.shape(), ax);
  if (start + length > s.n) throw ShapeError("slice out of range");
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  const auto X = x.data();
  std::vector<double> out(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(X.data() + (o * s.n + start) * s.inner, length * s.inner, out.data() + o * length * s.inner);
  }
  return make_result(std::move(out_shape), std::move(out), {x},
                     [s, start, length](Node& o) {
                       auto gx = parent_grad(o, 0);
                       for (std::size_t oi = 0; oi < s.outer; ++oi) {
                         double* dst = gx.data() + (oi * s.n + start) * s.inner;
                         const double* g = o.grad.data() + oi * length * s.inner;
                         for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += g[i];
                       }
                     },
                     "slice");
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const std::size_t ax = norm_axis(axis, parts[0].dim());
  Shape out_shape = parts[0].shape();
  std::vector<std::size_t> lengths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape();
    Shape b = out_shape;
    if (a.size() != b.size()) throw ShapeError("concat: rank mismatch");
    a[ax] = b[ax] = 0;
    if (a != b) throw ShapeError("concat: extents differ off-axis");
    lengths.push_back(p.shape()[ax]);
    total += p.shape()[ax];
  }
  out_shape[ax] = total;
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<double> out(numel_of(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto P = parts[k].data();
    const std::size_t chunk = lengths[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(P.data() + o * chunk, chunk, out.data() + o * total * s.inner + offset * s.inner);
    }
    offset += lengths[k];
  }
  return make_result(std::move(out_shape), std::move(out), parts,
                     [s, lengths, total](Node& o) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < lengths.size(); ++k) {
                         auto gp = parent_grad(o, k);
                         const std::size_t chunk = lengths[k] * s.inner;
                         if (!gp.empty()) {
                           for (std::size_t oi = 0; oi < s.outer; ++oi) {
                             const double* g = o.grad.data() + oi * total * s.inner + offset * s.inner;
                             double* dst = gp.data() + oi * chunk;
                             for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
                           }
                         }
                         offset += lengths[k];
                       }
                     },
                     "concat");
}

Tensor index_select(const Tensor& x, int axis, const std::vector<std::size_t>& indices) {
  const std::size_t ax = norm_axis(axis, x.dim());
  const AxisSplit s = split_at(x.shape(), ax);
  for (auto i : indices) {
    if (i >= s.n) throw ShapeError("index_select: index out of range");
  }
  Shape out_shape = x.shape();
  out_shape[ax] = indices.size();
  const std::size_t m = indices.size();
  const auto X = x.data();
  std::vector<double> out(s.outer * m * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < m; ++k) {
      std::copy_n(X.data() + (o * s.n + indices[k]) * s.inner, s.inner, out.data() + (o * m + k) * s.inner);
    }
  }
  return make_result(std::move(out_shape), std::move(out), {x},
                     [s, indices, m](Node& o) {
                       auto gx = parent_grad(o, 0);
                       for (std::size_t oi = 0; oi < s.outer; ++oi) {
                         for (std::size_t k = 0; k < m; ++k) {
                           double* dst = gx.data() + (oi * s.n + indices[k]) * s.inner;
                           const double* g = o.grad.data() + (oi * m + k) * s.inner;
                           for (std::size_t i = 0; i < s.inner; ++i) dst[i] += g[i];
                         }
                       }
                     },
                     "index_select");
}

Tensor repeat_leading(const Tensor& x, std::size_t times) {
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin(), times);
  const auto X = x.data();
  std::vector<double> out;
  out.reserve(X.size() * times);
  for (std::size_t t = 0; t < times; ++t) out.insert(out.end(), X.begin(), X.end());
  const std::size_t n = X.size();
  return make_result(std::move(out_shape), std::move(out), {x},
                     [times, n](Node& o) {
                       auto gx = parent_grad(o, 0);
                       for (std::size_t t = 0; t < times; ++t) {
                         for (std::size_t i = 0; i < n; ++i) gx[i] += o.grad[t * n + i];
                       }
                     },
                     "repeat");
}

namespace {

// Real DFT as dense matrices. For the lengths used here a GEMM over all rows
// beats one transform call per row by a wide margin.
struct DftMats {
  RowMat fwd_re, fwd_im;  // [L, F]
  RowMat inv_re, inv_im;  // [F, L], includes the 1/L scale and bin weights
};

const DftMats& dft_mats(std::size_t L) {
  thread_local std::map<std::size_t, DftMats> cache;
  auto it = cache.find(L);
  if (it != cache.end()) return it->second;
  const std::size_t F = L / 2 + 1;
  DftMats m;
  m.fwd_re.resize(L, F);
  m.fwd_im.resize(L, F);
  m.inv_re.resize(F, L);
  m.inv_im.resize(F, L);
  const double inv = 1.0 / static_cast<double>(L);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t k = 0; k < F; ++k) {
      // Reduce k*t mod L first so the angle stays accurate for long inputs.
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * t) % L) * inv;
      const double c = std::cos(angle), sn = std::sin(angle);
      const bool edge = k == 0 || (L % 2 == 0 && k == L / 2);
      const double w = (edge ? 1.0 : 2.0) * inv;
      const auto ti = static_cast<Eigen::Index>(t), ki = static_cast<Eigen::Index>(k);
      m.fwd_re(ti, ki) = c;
      m.fwd_im(ti, ki) = -sn;
      m.inv_re(ki, ti) = w * c;
      m.inv_im(ki, ti) = edge ? 0.0 : -w * sn;
    }
  }
  return cache.emplace(L, std::move(m)).first->second;
}

constexpr std::size_t kDenseDftMax = 1024;

}  // namespace

std::pair<Tensor, Tensor> rfft(const Tensor& x) {
  const std::size_t L = x.shape().empty() ? 1 : x.shape().back();
  if (L == 0) throw ShapeError("rfft: empty last axis");
  const std::size_t F = L / 2 + 1;
  const std::size_t rows = x.numel() / L;
  Shape out_shape = x.shape();
  out_shape.back() = F;
  std::vector<double> re(rows * F), im(rows * F);
  const auto X = x.data();
  const auto R = static_cast<Eigen::Index>(rows);
  const auto Li = static_cast<Eigen::Index>(L), Fi = static_cast<Eigen::Index>(F);
  const bool dense = L <= kDenseDftMax;
  if (dense) {
    const DftMats& m = dft_mats(L);
    ConstMapMat xm(X.data(), R, Li);
    MapMat(re.data(), R, Fi).noalias() = xm * m.fwd_re;
    MapMat(im.data(), R, Fi).noalias() = xm * m.fwd_im;
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      const auto spec = fft::rfft(X.subspan(r * L, L));
      for (std::size_t k = 0; k < F; ++k) {
        re[r * F + k] = spec[k].real();
        im[r * F + k] = spec[k].imag();
      }
    }
  }
  Tensor tre = make_result(out_shape, std::move(re), {x}, nullptr, "rfft_re");
  Tensor tim = make_result(out_shape, std::move(im), {x}, nullptr, "rfft_im");
  if (!tre.requires_grad()) return {tre, tim};

  // The adjoint of the half-spectrum DFT: dx_t = Re(sum_k G_k e^{+2 pi i k t / L}).
  auto adjoint = [L, F, rows, dense](Node& o, bool imag_part) {
    auto gx = parent_grad(o, 0);
    if (dense) {
      const DftMats& m = dft_mats(L);
      const auto R = static_cast<Eigen::Index>(rows);
      ConstMapMat g(o.grad.data(), R, static_cast<Eigen::Index>(F));
      MapMat gm(gx.data(), R, static_cast<Eigen::Index>(L));
      if (imag_part) {
        gm.noalias() += g * m.fwd_im.transpose();
      } else {
        gm.noalias() += g * m.fwd_re.transpose();
      }
      return;
    }
    std::vector<fft::Complex> buf(L);
    for (std::size_t r = 0; r < rows; ++r) {
      std::fill(buf.begin(), buf.end(), fft::Complex{});
      for (std::size_t k = 0; k < F; ++k) {
        const double g = o.grad[r * F + k];
        buf[k] = imag_part ? fft::Complex{0.0, g} : fft::Complex{g, 0.0};
      }
      fft::transform(buf, true);
      for (std::size_t t = 0; t < L; ++t) gx[r * L + t] += buf[t].real();
    }
  };
  tre.node()->backward = [adjoint](Node& o) { adjoint(o, false); };
  tim.node()->backward = [adjoint](Node& o) { adjoint(o, true); };
  return {tre, tim};
}

Tensor irfft(const Tensor& re, const Tensor& im, std::size_t length) {
  if (re.shape() != im.shape()) throw ShapeError("irfft: re/im shape mismatch");
  const std::size_t F = re.shape().back();
  if (F != length / 2 + 1) throw ShapeError("irfft: bin count does not match output length");
  const std::size_t rows = re.numel() / F;
  Shape out_shape = re.shape();
  out_shape.back() = length;
  std::vector<double> out(rows * length);
  const auto R = re.data();
  const auto I = im.data();
  const bool dense = length <= kDenseDftMax;
  const auto Ri = static_cast<Eigen::Index>(rows);
  const auto Li = static_cast<Eigen::Index>(length), Fi = static_cast<Eigen::Index>(F);
  if (dense) {
    const DftMats& m = dft_mats(length);
    MapMat om(out.data(), Ri, Li);
    om.noalias() = ConstMapMat(R.data(), Ri, Fi) * m.inv_re;
    om.noalias() += ConstMapMat(I.data(), Ri, Fi) * m.inv_im;
  } else {
    std::vector<fft::Complex> spec(F);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < F; ++k) spec[k] = {R[r * F + k], I[r * F + k]};
      const auto x = fft::irfft(spec, length);
      std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(r * length));
    }
  }
  return make_result(std::move(out_shape), std::move(out), {re, im},
                     [F, rows, length, dense](Node& o) {
                       auto gre = parent_grad(o, 0);
                       auto gim = parent_grad(o, 1);
                       if (dense) {
                         const DftMats& m = dft_mats(length);
                         const auto Ri = static_cast<Eigen::Index>(rows);
                         const auto Fi = static_cast<Eigen::Index>(F);
                         ConstMapMat g(o.grad.data(), Ri, static_cast<Eigen::Index>(length));
                         if (!gre.empty()) MapMat(gre.data(), Ri, Fi).noalias() += g * m.inv_re.transpose();
                         if (!gim.empty()) MapMat(gim.data(), Ri, Fi).noalias() += g * m.inv_im.transpose();
                         return;
                       }
                       const double inv = 1.0 / static_cast<double>(length);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const auto spec = fft::rfft(std::span<const double>(o.grad).subspan(r * length, length));
                         for (std::size_t k = 0; k < F; ++k) {
                           const bool edge = k == 0 || (length % 2 == 0 && k == length / 2);
                           const double c = (edge ? 1.0 : 2.0) * inv;
                           if (!gre.empty()) gre[r * F + k] += c * spec[k].real();
                           if (!gim.empty()) gim[r * F + k] += c * spec[k].imag();
                         }
                       }
                     },
                     "irfft");
}

Tensor moving_average(const Tensor& x, int axis, std::size_t kernel) {
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("moving_average: kernel must be odd and positive");
  const std::size_t ax = norm_axis(axis, x.dim());
  const AxisSplit s = split_at(x.shape(), ax);
  const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
  const auto n = static_cast<std::ptrdiff_t>(s.n);
  const double w = 1.0 / static_cast<double>(kernel);
  const auto X = x.data();
  std::vector<double> out(X.size(), 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::ptrdiff_t t = 0; t < n; ++t) {
      double* dst = out.data() + (o * s.n + static_cast<std::size_t>(t)) * s.inner;
      for (std::ptrdiff_t j = -half; j <= half; ++j) {
        const auto src_t = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(t + j, 0, n - 1));
        const double* src = X.data() + (o * s.n + src_t) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += w * src[i];
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x},
                     [s, half, n, w](Node& o) {
                       auto gx = parent_grad(o, 0);
                       for (std::size_t oi = 0; oi < s.outer; ++oi) {
                         for (std::ptrdiff_t t = 0; t < n; ++t) {
                           const double* g = o.grad.data() + (oi * s.n + static_cast<std::size_t>(t)) * s.inner;
                           for (std::ptrdiff_t j = -half; j <= half; ++j) {
                             const auto src_t = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(t + j, 0, n - 1));
                             double* dst = gx.data() + (oi * s.n + src_t) * s.inner;
                             for (std::size_t i = 0; i < s.inner; ++i) dst[i] += w * g[i];
                           }
                         }
                       }
                     },
                     "moving_average");
}

Tensor avg_pool(const Tensor& x, int axis, std::size_t window) {
  if (window == 0) throw ConfigError("avg_pool: window must be positive");
  const std::size_t ax = norm_axis(axis, x.dim());
  const AxisSplit s = split_at(x.shape(), ax);
  if (s.n < window) throw ShapeError("avg_pool: axis length " + std::to_string(s.n) + " < window " + std::to_string(window));
  const std::size_t m = s.n / window;
  Shape out_shape = x.shape();
  out_shape[ax] = m;
  const double w = 1.0 / static_cast<double>(window);
  const auto X = x.data();
  std::vector<double> out(s.outer * m * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < m; ++k) {
      double* dst = out.data() + (o * m + k) * s.inner;
      for (std::size_t j = 0; j < window; ++j) {
        const double* src = X.data() + (o * s.n + k * window + j) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += w * src[i];
      }
    }
  }
  return make_result(std::move(out_shape), std::move(out), {x},
                     [s, m, window, w](Node& o) {
                       auto gx = parent_grad(o, 0);
                       for (std::size_t oi = 0; oi < s.outer; ++oi) {
                         for (std::size_t k = 0; k < m; ++k) {
                           const double* g = o.grad.data() + (oi * m + k) * s.inner;
                           for (std::size_t j = 0; j < window; ++j) {
                             double* dst = gx.data() + (oi * s.n + k * window + j) * s.inner;
                             for (std::size_t i = 0; i < s.inner; ++i) dst[i] += w * g[i];
                           }
                         }
                       }
                     },
                     "avg_pool");
}

double grad_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace tsforge
