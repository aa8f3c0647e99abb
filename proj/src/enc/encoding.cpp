#include "tsforge/enc/encoding.hpp"

#include <algorithm>
#include <cmath>

#include "tsforge/core/ops.hpp"
#include "tsforge/error.hpp"

namespace tsforge::enc {

Tensor apply_channel_independence(const Tensor& x, bool ci) {
  if (x.dim() != 3) throw ShapeError("channel independence: expected [B, L, C]");
  if (!ci) return x;
  const std::size_t b = x.size(0), l = x.size(1), c = x.size(2);
  return reshape(permute(x, {0, 2, 1}), {b * c, l, 1});
}

Tensor invert_channel_independence(const Tensor& y, std::size_t batch, std::size_t channels, bool ci) {
  if (!ci) return y;
  if (y.dim() != 3 || y.size(0) != batch * channels || y.size(2) != 1) {
    throw ShapeError("channel independence: cannot invert " + shape_to_string(y.shape()));
  }
  return permute(reshape(y, {batch, channels, y.size(1)}), {0, 2, 1});
}

Tensor repeat_for_channels(const Tensor& mark, std::size_t channels) {
  std::vector<std::size_t> idx;
  idx.reserve(mark.size(0) * channels);
  for (std::size_t b = 0; b < mark.size(0); ++b) idx.insert(idx.end(), channels, b);
  return index_select(mark, 0, idx);
}

Tensor timestamp_features(const std::vector<CalendarStamp>& stamps) {
  std::vector<double> v;
  v.reserve(stamps.size() * kTimeFeatures);
  for (const auto& s : stamps) {
    const double hour = std::min((s.hour + s.minute / 60.0) / 23.0, 1.0);
    v.push_back((s.month - 1) / 11.0 - 0.5);
    v.push_back((s.day - 1) / 30.0 - 0.5);
    v.push_back(s.weekday / 6.0 - 0.5);
    v.push_back(hour - 0.5);
  }
  return Tensor::from_data({stamps.size(), kTimeFeatures}, std::move(v));
}

std::size_t token_count(Embedding choice, std::size_t len, std::size_t channels, bool with_timestamps,
                        std::size_t patch_len, std::size_t stride) {
  switch (choice) {
    case Embedding::positional:
      return len;
    case Embedding::patch:
      if (patch_len > len) throw ConfigError("patch length " + std::to_string(patch_len) + " exceeds series length " + std::to_string(len));
      return (len - patch_len) / stride + 1;
    case Embedding::inverted:
      return channels + (with_timestamps ? 1 : 0);
  }
  return 0;
}

Tensor sinusoidal_positions(std::size_t len, std::size_t d_model) {
  std::vector<double> pe(len * d_model);
  for (std::size_t p = 0; p < len; ++p) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d_model));
      pe[p * d_model + i] = i % 2 == 0 ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq);
    }
  }
  return Tensor::from_data({len, d_model}, std::move(pe));
}

Tokenizer::Tokenizer(const TokenizerOptions& opt, std::mt19937_64& rng)
    : opt_(opt), n_tokens_(token_count(opt.choice, opt.seq_len, opt.channels, opt.with_timestamps, opt.patch_len, opt.stride)) {
  if (opt_.stride == 0) throw ConfigError("patch stride must be positive");
  const std::size_t marks = opt_.with_timestamps ? kTimeFeatures : 0;
  switch (opt_.choice) {
    case Embedding::positional:
      value_ = add_module("value", std::make_unique<Linear>(opt_.channels + marks, opt_.d_model, rng));
      positions_ = sinusoidal_positions(opt_.seq_len, opt_.d_model);
      break;
    case Embedding::patch:
      value_ = add_module("value", std::make_unique<Linear>(opt_.patch_len * (opt_.channels + marks), opt_.d_model, rng));
      positions_ = add_parameter("positions", Tensor::randn({n_tokens_, opt_.d_model}, rng, 0.02));
      for (std::size_t p = 0; p < n_tokens_; ++p) {
        for (std::size_t j = 0; j < opt_.patch_len; ++j) unfold_.push_back(p * opt_.stride + j);
      }
      break;
    case Embedding::inverted:
      value_ = add_module("value", std::make_unique<Linear>(opt_.seq_len, opt_.d_model, rng));
      if (opt_.with_timestamps) {
        mark_ = add_module("mark", std::make_unique<Linear>(opt_.seq_len * kTimeFeatures, opt_.d_model, rng));
      }
      break;
  }
}

TokenBatch Tokenizer::tokenize(const Tensor& x, const Tensor& mark, const Provenance& prov) const {
  if (x.dim() != 3 || x.size(1) != opt_.seq_len || x.size(2) != opt_.channels) {
    throw ShapeError("tokenize: expected [B, " + std::to_string(opt_.seq_len) + ", " + std::to_string(opt_.channels) +
                     "], got " + shape_to_string(x.shape()));
  }
  const std::size_t b = x.size(0);
  if (opt_.with_timestamps && (!mark.defined() || mark.shape() != Shape{b, opt_.seq_len, kTimeFeatures})) {
    throw ShapeError("tokenize: timestamp features misaligned with the window");
  }
  TokenBatch out;
  out.n_tokens = n_tokens_;
  out.provenance = prov;
  switch (opt_.choice) {
    case Embedding::positional: {
      Tensor in = opt_.with_timestamps ? concat({x, mark}, 2) : x;
      out.layout = Layout::pointwise;
      out.tokens = value_->forward(in) + positions_;
      break;
    }
    case Embedding::patch: {
      Tensor in = opt_.with_timestamps ? concat({x, mark}, 2) : x;
      const std::size_t width = in.size(2);
      Tensor patches = reshape(index_select(in, 1, unfold_), {b, n_tokens_, opt_.patch_len * width});
      out.layout = Layout::patch;
      out.tokens = value_->forward(patches) + positions_;
      break;
    }
    case Embedding::inverted: {
      Tensor tokens = value_->forward(permute(x, {0, 2, 1}));  // [B, C, d]
      if (opt_.with_timestamps) {
        Tensor extra = mark_->forward(reshape(mark, {b, 1, opt_.seq_len * kTimeFeatures}));
        tokens = concat({tokens, extra}, 1);
      }
      out.layout = Layout::inverted;
      out.tokens = tokens;
      break;
    }
  }
  return out;
}

ForecastHead::ForecastHead(Layout layout, std::size_t n_tokens, std::size_t d_model, std::size_t horizon,
                           std::size_t channels, bool ci, std::mt19937_64& rng)
    : layout_(layout), n_tokens_(n_tokens), d_model_(d_model), horizon_(horizon), channels_(channels), ci_(ci) {
  if (layout_ == Layout::inverted) {
    proj_ = add_module("proj", std::make_unique<Linear>(d_model, horizon, rng));
  } else {
    proj_ = add_module("proj", std::make_unique<Linear>(n_tokens * d_model, horizon * (ci ? 1 : channels), rng));
  }
}

Tensor ForecastHead::project(const TokenBatch& h) const {
  const Provenance& p = h.provenance;
  if (h.layout != layout_ || p.ci != ci_ || p.channels != channels_ || h.tokens.dim() != 3 ||
      h.tokens.size(1) != n_tokens_ || h.tokens.size(2) != d_model_) {
    throw ShapeError("project_head: token batch does not match the head");
  }
  const std::size_t rows = h.tokens.size(0);
  if (layout_ == Layout::inverted) {
    if (rows != p.batch) throw ShapeError("project_head: provenance mismatch");
    Tensor per_variate = slice(h.tokens, 1, 0, channels_);            // drop the timestamp token
    return permute(proj_->forward(per_variate), {0, 2, 1});           // [B, T, C]
  }
  if (rows != p.batch * (ci_ ? channels_ : 1)) throw ShapeError("project_head: provenance mismatch");
  Tensor flat = reshape(h.tokens, {rows, n_tokens_ * d_model_});
  Tensor y = proj_->forward(flat);
  if (ci_) return invert_channel_independence(reshape(y, {rows, horizon_, 1}), p.batch, channels_, true);
  return reshape(y, {p.batch, horizon_, channels_});
}

}  // namespace tsforge::enc
