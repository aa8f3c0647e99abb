#include <algorithm>
#include <cmath>
#include <numeric>

#include "tsforge/core/ops.hpp"
#include "tsforge/error.hpp"
#include "tsforge/nn/backbone.hpp"

namespace tsforge::nn {

using detail::make_result;
using detail::Node;
using detail::parent_grad;

AttentionKind attention_kind(SeriesAttention a) {
  switch (a) {
    case SeriesAttention::self: return AttentionKind::self;
    case SeriesAttention::auto_correlation: return AttentionKind::auto_correlation;
    case SeriesAttention::sparse: return AttentionKind::sparse;
    case SeriesAttention::frequency: return AttentionKind::frequency;
    case SeriesAttention::destationary: return AttentionKind::destationary;
    case SeriesAttention::null: break;
  }
  throw ConfigError("series attention Null has no attention kind");
}

AttentionKind attention_kind(FeatureAttention a) {
  switch (a) {
    case FeatureAttention::self: return AttentionKind::self;
    case FeatureAttention::sparse: return AttentionKind::sparse;
    case FeatureAttention::frequency: return AttentionKind::frequency;
    case FeatureAttention::null: break;
  }
  throw ConfigError("feature attention Null has no attention kind");
}

std::size_t sparse_top_u(std::size_t n) {
  const double u = std::ceil(kSparseFactor * std::log(static_cast<double>(std::max<std::size_t>(n, 1))));
  return std::max<std::size_t>(1, static_cast<std::size_t>(u));
}

std::size_t autocorr_top_k(std::size_t n) {
  const double k = std::ceil(std::log(static_cast<double>(std::max<std::size_t>(n, 1))));
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, std::max<std::size_t>(n, 1));
}

std::size_t frequency_modes(std::size_t n) { return std::clamp<std::size_t>(n / 2, 1, kFrequencyModes); }

Tensor circular_correlation(const Tensor& q, const Tensor& k) {
  const std::size_t n = q.size(2);
  auto [qr, qi] = rfft(permute(q, {0, 1, 3, 2}));
  auto [kr, ki] = rfft(permute(k, {0, 1, 3, 2}));
  // Q * conj(K)
  Tensor re = qr * kr + qi * ki;
  Tensor im = qi * kr - qr * ki;
  return irfft(re, im, n);
}

Tensor delay_aggregate(const Tensor& v, const Tensor& w, const std::vector<std::size_t>& delays) {
  if (v.dim() != 4 || w.dim() != 2 || w.size(0) != v.size(0) || delays.size() != w.numel()) {
    throw ShapeError("delay_aggregate: expected v [B,h,n,dk], w [B,k] and B*k delays");
  }
  const std::size_t B = v.size(0), H = v.size(1), n = v.size(2), dk = v.size(3), K = w.size(1);
  const auto V = v.data();
  const auto W = w.data();
  std::vector<double> out(V.size(), 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < K; ++i) {
      const double wi = W[b * K + i];
      const std::size_t d = delays[b * K + i] % n;
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t base = (b * H + h) * n;
        for (std::size_t t = 0; t < n; ++t) {
          const double* src = V.data() + (base + (t + d) % n) * dk;
          double* dst = out.data() + (base + t) * dk;
          for (std::size_t j = 0; j < dk; ++j) dst[j] += wi * src[j];
        }
      }
    }
  }
  return make_result(v.shape(), std::move(out), {v, w},
                     [=](Node& o) {
                       auto gv = parent_grad(o, 0);
                       auto gw = parent_grad(o, 1);
                       const auto& Vd = o.parents[0]->data;
                       const auto& Wd = o.parents[1]->data;
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t i = 0; i < K; ++i) {
                           const double wi = Wd[b * K + i];
                           const std::size_t d = delays[b * K + i] % n;
                           double acc = 0.0;
                           for (std::size_t h = 0; h < H; ++h) {
                             const std::size_t base = (b * H + h) * n;
                             for (std::size_t t = 0; t < n; ++t) {
                               const std::size_t src = (base + (t + d) % n) * dk;
                               const double* g = o.grad.data() + (base + t) * dk;
                               for (std::size_t j = 0; j < dk; ++j) {
                                 if (!gv.empty()) gv[src + j] += wi * g[j];
                                 acc += g[j] * Vd[src + j];
                               }
                             }
                           }
                           if (!gw.empty()) gw[b * K + i] += acc;
                         }
                       }
                     },
                     "delay_aggregate");
}

namespace {

Tensor scaled_scores(const Tensor& q, const Tensor& k) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(3)));
  return matmul(q, transpose(k, 2, 3)) * scale;
}

AttentionOutput softmax_attention(const Tensor& scores, const Tensor& v) {
  AttentionOutput out;
  out.weights = softmax(scores, -1);
  out.values = matmul(out.weights, v);
  return out;
}

AttentionOutput sparse_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t top_u) {
  const std::size_t B = q.size(0), H = q.size(1), n = q.size(2);
  const std::size_t u = top_u == 0 ? sparse_top_u(n) : top_u;
  Tensor scores = scaled_scores(q, k);
  AttentionOutput full = softmax_attention(scores, v);
  const auto S = scores.data();
  std::vector<double> mask(B * H * n, 0.0);
  std::vector<std::size_t> order(n);
  std::vector<double> measure(n);
  for (std::size_t r = 0; r < B * H; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = S.data() + (r * n + i) * n;
      double mx = row[0], sm = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        mx = std::max(mx, row[j]);
        sm += row[j];
      }
      measure[i] = mx - sm / static_cast<double>(n);
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return measure[a] > measure[b]; });
    for (std::size_t i = 0; i < std::min(u, n); ++i) {
      mask[r * n + order[i]] = 1.0;
      full.selected.push_back(order[i]);
    }
  }
  if (u >= n) return full;
  Tensor sel = Tensor::from_data({B, H, n, 1}, mask);
  Tensor rest = Tensor::ones({B, H, n, 1}) - sel;
  AttentionOutput out;
  out.weights = full.weights;
  out.selected = std::move(full.selected);
  out.values = full.values * sel + mean(v, 2, true) * rest;
  return out;
}

AttentionOutput autocorrelation_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t B = q.size(0), H = q.size(1), n = q.size(2), dk = q.size(3);
  // Mean correlation over heads and feature channels: [B, n].
  Tensor corr = reshape(mean(reshape(circular_correlation(q, k), {B, H * dk, n}), 1), {B, 1, n});
  const std::size_t K = autocorr_top_k(n);
  const auto C = corr.data();
  std::vector<std::size_t> delays;
  std::vector<double> onehot(B * n * K, 0.0);
  std::vector<std::size_t> order(n);
  for (std::size_t b = 0; b < B; ++b) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return C[b * n + x] > C[b * n + y]; });
    for (std::size_t i = 0; i < K; ++i) {
      delays.push_back(order[i]);
      onehot[(b * n + order[i]) * K + i] = 1.0;
    }
  }
  Tensor picked = matmul(corr, Tensor::from_data({B, n, K}, std::move(onehot)));  // [B, 1, K]
  Tensor w = reshape(softmax(picked, -1), {B, K});
  AttentionOutput out;
  out.values = delay_aggregate(v, w, delays);
  return out;
}

AttentionOutput frequency_attention(const Tensor& v, const Tensor& kr, const Tensor& ki) {
  const std::size_t B = v.size(0), H = v.size(1), n = v.size(2), dk = v.size(3);
  const std::size_t bins = n / 2 + 1;
  const std::size_t M = kr.size(2);
  if (M > bins || kr.shape() != Shape{H, dk, M} || ki.shape() != kr.shape()) {
    throw ShapeError("frequency attention: kernel " + shape_to_string(kr.shape()) + " does not fit " +
                     shape_to_string(v.shape()));
  }
  auto [re, im] = rfft(permute(v, {0, 1, 3, 2}));  // [B, h, dk, bins]
  Tensor lr = slice(re, 3, 0, M), li = slice(im, 3, 0, M);
  Tensor yr = lr * kr - li * ki;
  Tensor yi = lr * ki + li * kr;
  if (M < bins) {
    Tensor pad = Tensor::zeros({B, H, dk, bins - M});
    yr = concat({yr, pad}, 3);
    yi = concat({yi, pad}, 3);
  }
  AttentionOutput out;
  out.values = permute(irfft(yr, yi, n), {0, 1, 3, 2});
  return out;
}

}  // namespace

AttentionOutput attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionKind kind,
                          const AttentionAux& aux) {
  if (q.dim() != 4 || k.shape() != q.shape() || v.dim() != 4 || v.size(0) != q.size(0) ||
      v.size(1) != q.size(1) || v.size(2) != k.size(2)) {
    throw ShapeError("attention: q, k, v must be [B, h, n, dk] and conform");
  }
  switch (kind) {
    case AttentionKind::self:
      return softmax_attention(scaled_scores(q, k), v);
    case AttentionKind::sparse:
      return sparse_attention(q, k, v, aux.top_u);
    case AttentionKind::auto_correlation:
      return autocorrelation_attention(q, k, v);
    case AttentionKind::frequency:
      if (!aux.kernel_re.defined()) throw ConfigError("frequency attention requires a spectral kernel");
      return frequency_attention(v, aux.kernel_re, aux.kernel_im);
    case AttentionKind::destationary: {
      if (!aux.tau.defined() || !aux.delta.defined()) {
        throw ConfigError("destationary attention requires normalization statistics");
      }
      const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(3)));
      Tensor raw = matmul(q, transpose(k, 2, 3));
      return softmax_attention((raw * aux.tau + aux.delta) * scale, v);
    }
  }
  throw ConfigError("unknown attention kind");
}

MultiHeadAttention::MultiHeadAttention(AttentionKind kind, std::size_t d_model, std::size_t heads,
                                       std::size_t n_tokens, std::mt19937_64& rng)
    : kind_(kind), d_model_(d_model), heads_(heads), n_tokens_(n_tokens) {
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("attention: d_model " + std::to_string(d_model) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (kind_ != AttentionKind::frequency) {
    wq_ = add_module("query", std::make_unique<Linear>(d_model, d_model, rng));
    wk_ = add_module("key", std::make_unique<Linear>(d_model, d_model, rng));
  }
  wv_ = add_module("value", std::make_unique<Linear>(d_model, d_model, rng));
  wo_ = add_module("output", std::make_unique<Linear>(d_model, d_model, rng));
  if (kind_ == AttentionKind::frequency) {
    const std::size_t M = frequency_modes(n_tokens);
    kernel_re_ = add_parameter("kernel_re", Tensor::ones({heads, d_model / heads, M}));
    kernel_im_ = add_parameter("kernel_im", Tensor::zeros({heads, d_model / heads, M}));
  }
}

Tensor MultiHeadAttention::split_heads(const Tensor& x) const {
  const std::size_t B = x.size(0), n = x.size(1);
  return permute(reshape(x, {B, n, heads_, d_model_ / heads_}), {0, 2, 1, 3});
}

Tensor MultiHeadAttention::merge_heads(const Tensor& x) const {
  const std::size_t B = x.size(0), n = x.size(2);
  return reshape(permute(x, {0, 2, 1, 3}), {B, n, d_model_});
}

Tensor MultiHeadAttention::forward(const Tensor& x, const AttentionAux& aux) const {
  if (x.dim() != 3 || x.size(2) != d_model_ || x.size(1) != n_tokens_) {
    throw ShapeError("attention: expected [B, " + std::to_string(n_tokens_) + ", " + std::to_string(d_model_) +
                     "], got " + shape_to_string(x.shape()));
  }
  Tensor v = split_heads(wv_->forward(x));
  AttentionOutput out;
  if (kind_ == AttentionKind::frequency) {
    AttentionAux a = aux;
    a.kernel_re = kernel_re_;
    a.kernel_im = kernel_im_;
    out = attention(v, v, v, kind_, a);
  } else {
    out = attention(split_heads(wq_->forward(x)), split_heads(wk_->forward(x)), v, kind_, aux);
  }
  return wo_->forward(merge_heads(out.values));
}

}  // namespace tsforge::nn
