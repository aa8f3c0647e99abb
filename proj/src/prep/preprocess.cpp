#include "tsforge/prep/preprocess.hpp"

#include <algorithm>

#include "tsforge/core/ops.hpp"
#include "tsforge/error.hpp"

namespace tsforge::prep {

namespace {

void check_batch(const Tensor& x, const char* who) {
  if (x.dim() != 3) throw ShapeError(std::string(who) + ": expected [B, L, C], got " + shape_to_string(x.shape()));
}

// Population mean and clamped std over the time axis, both [B, 1, C].
std::pair<Tensor, Tensor> moments(const Tensor& x) {
  Tensor mu = mean(x, 1, true);
  Tensor centered = x - mu;
  Tensor var = mean(square(centered), 1, true);
  return {mu, sqrt(clamp_min(var, kNormEps * kNormEps))};
}

}  // namespace

Normalizer::Normalizer(Normalization method, std::size_t channels, std::size_t seq_len)
    : method_(method), channels_(channels), seq_len_(seq_len) {
  switch (method_) {
    case Normalization::revin:
      gamma_ = add_parameter("gamma", Tensor::ones({channels}));
      beta_ = add_parameter("beta", Tensor::zeros({channels}));
      break;
    case Normalization::dishts: {
      std::vector<double> w(channels * seq_len * 2, 0.0);
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t t = 0; t < seq_len; ++t) w[(c * seq_len + t) * 2] = 1.0 / static_cast<double>(seq_len);
      }
      coeff_ = add_parameter("coeff", Tensor::from_data({channels, seq_len, 2}, std::move(w)));
      coeff_bias_ = add_parameter("coeff_bias", Tensor::zeros({channels, 1, 2}));
      break;
    }
    default:
      break;
  }
}

std::pair<Tensor, NormState> Normalizer::normalize(const Tensor& x) const {
  check_batch(x, "normalize");
  NormState state;
  state.method = method_;
  if (method_ == Normalization::none) return {x, state};
  if (x.size(2) != channels_) throw ShapeError("normalize: channel count mismatch");
  if (x.size(1) < 2) throw ShapeError("normalize: look-back window needs at least 2 steps");

  if (method_ == Normalization::dishts) {
    if (x.size(1) != seq_len_) throw ShapeError("normalize: DishTS window length mismatch");
    // [B, L, C] -> [B, C, 1, L] x [C, L, 2] -> [B, C, 1, 2]
    const std::size_t b = x.size(0);
    Tensor xt = reshape(permute(x, {0, 2, 1}), {b, channels_, 1, seq_len_});
    Tensor proj = add(matmul(xt, coeff_), coeff_bias_);
    Tensor level = permute(reshape(slice(proj, 3, 0, 1), {b, channels_, 1}), {0, 2, 1});
    Tensor log_adj = permute(reshape(slice(proj, 3, 1, 1), {b, channels_, 1}), {0, 2, 1});
    Tensor resid_var = mean(square(x - level), 1, true);
    Tensor scale = sqrt(clamp_min(resid_var, kNormEps * kNormEps)) * exp(log_adj);
    state.level = level;
    state.scale = scale;
    return {(x - level) / scale, state};
  }

  auto [mu, sigma] = moments(x);
  state.level = mu;
  state.scale = sigma;
  Tensor z = (x - mu) / sigma;
  if (method_ == Normalization::revin) z = z * gamma_ + beta_;
  return {z, state};
}

Tensor Normalizer::denormalize(const Tensor& y, const NormState& state) const {
  check_batch(y, "denormalize");
  if (state.method != method_) throw ConfigError("denormalize: state produced by a different method");
  if (method_ == Normalization::none) return y;
  if (state.level.size(0) != y.size(0) || state.level.size(2) != y.size(2)) {
    throw ShapeError("denormalize: state " + shape_to_string(state.level.shape()) + " does not match batch " +
                     shape_to_string(y.shape()));
  }
  Tensor z = y;
  if (method_ == Normalization::revin) z = (z - beta_) / (gamma_ + kNormEps * kNormEps);
  return z * state.scale + state.level;
}

Decomposer::Decomposer(Decomposition method, DecompParams params) : method_(method), params_(std::move(params)) {
  auto odd = [](std::size_t k) { return k > 0 && k % 2 == 1; };
  if (method_ == Decomposition::moving_average && !odd(params_.kernel)) {
    throw ConfigError("decompose: moving-average kernel must be odd");
  }
  if (method_ == Decomposition::mixture_of_experts) {
    if (params_.mixture_kernels.empty() || !std::all_of(params_.mixture_kernels.begin(), params_.mixture_kernels.end(), odd)) {
      throw ConfigError("decompose: mixture kernels must be a nonempty set of odd sizes");
    }
    gate_ = add_parameter("gate", Tensor::zeros({params_.mixture_kernels.size()}));
  }
  if (method_ == Decomposition::dft && params_.dft_cutoff == 0) throw ConfigError("decompose: DFT cutoff must be >= 1");
}

DecompResult Decomposer::decompose(const Tensor& x) const {
  check_batch(x, "decompose");
  DecompResult r;
  r.method = method_;
  const std::size_t len = x.size(1);
  switch (method_) {
    case Decomposition::none:
      r.seasonal = x;
      return r;
    case Decomposition::moving_average:
      if (params_.kernel > len) throw ConfigError("decompose: kernel longer than the series");
      r.trend = moving_average(x, 1, params_.kernel);
      break;
    case Decomposition::mixture_of_experts: {
      const std::size_t n = params_.mixture_kernels.size();
      Tensor w = softmax(gate_, 0);
      for (std::size_t i = 0; i < n; ++i) {
        if (params_.mixture_kernels[i] > len) throw ConfigError("decompose: kernel longer than the series");
        Tensor part = moving_average(x, 1, params_.mixture_kernels[i]) * slice(w, 0, i, 1);
        r.trend = r.trend.defined() ? r.trend + part : part;
      }
      break;
    }
    case Decomposition::dft: {
      const std::size_t bins = len / 2 + 1;
      if (params_.dft_cutoff >= bins) throw ConfigError("decompose: DFT cutoff must be below floor(L/2)+1");
      Tensor xt = permute(x, {0, 2, 1});  // [B, C, L]
      auto [re, im] = rfft(xt);
      std::vector<double> m(bins, 0.0);
      std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(params_.dft_cutoff), 1.0);
      Tensor mask = Tensor::from_data({bins}, std::move(m));
      r.trend = permute(irfft(re * mask, im * mask, len), {0, 2, 1});
      break;
    }
  }
  r.seasonal = x - r.trend;
  return r;
}

std::vector<Tensor> multiscale(const Tensor& x, bool enabled, const std::vector<std::size_t>& scales) {
  check_batch(x, "multiscale");
  if (!enabled) return {x};
  std::vector<Tensor> out;
  for (std::size_t s : scales) {
    if (s == 0) throw ConfigError("multiscale: scale must be positive");
    if (x.size(1) < s) throw ShapeError("multiscale: series shorter than scale " + std::to_string(s));
    out.push_back(s == 1 ? x : avg_pool(x, 1, s));
  }
  return out;
}

}  // namespace tsforge::prep
