#include "tsforge/model/forecaster.hpp"

#include <algorithm>
#include <random>

#include "tsforge/core/ops.hpp"
#include "tsforge/error.hpp"

namespace tsforge::model {

namespace {

enc::Layout layout_of(Embedding e) {
  switch (e) {
    case Embedding::inverted: return enc::Layout::inverted;
    case Embedding::patch: return enc::Layout::patch;
    default: return enc::Layout::pointwise;
  }
}

}  // namespace

void check_instantiable(const PipelineSpec& spec, std::size_t channels) {
  if (spec.network == NetworkType::llm || spec.network == NetworkType::tsfm) {
    throw ConfigError("LLM and TSFM backbones are not instantiable");
  }
  if (spec.series_attention == SeriesAttention::destationary &&
      spec.normalization != Normalization::stat && spec.normalization != Normalization::revin) {
    throw ConfigError("destationary attention needs normalization statistics");
  }
  if (spec.embedding == Embedding::inverted && spec.channel_independent) {
    throw ConfigError("inverted encoding needs channel-dependent input");
  }
  if (spec.embedding == Embedding::patch && spec.seq_len < enc::kPatchLen) {
    throw ConfigError("patch length exceeds sequence length");
  }
  if (channels == 0 || spec.seq_len == 0) throw ConfigError("empty input");
}

Forecaster::Forecaster(const PipelineSpec& spec, const ModelOptions& opt) : spec_(spec), opt_(opt) {
  check_instantiable(spec, opt.channels);
  const std::size_t div = std::max<std::size_t>(1, opt.width_divisor);
  d_model_ = std::max<std::size_t>(nn::kHeads, spec.d_model / div);
  d_ff_ = std::max<std::size_t>(1, spec.d_ff / div);
  std::mt19937_64 rng(opt.seed);
  const std::size_t C = opt.channels, L = spec.seq_len, T = opt.horizon;
  const bool ci = spec.channel_independent;

  norm_ = add_module("norm", std::make_unique<prep::Normalizer>(spec.normalization, C, L));
  decomp_ = add_module("decomp", std::make_unique<prep::Decomposer>(spec.decomposition));
  if (spec.decomposition != Decomposition::none) trend_ = add_module("trend", std::make_unique<Linear>(L, T, rng));

  for (std::size_t s : spec.multiscale ? prep::kDefaultScales : std::vector<std::size_t>{1}) {
    const std::size_t len = L / s;
    if (len == 0) continue;
    if (spec.embedding == Embedding::patch && len < enc::kPatchLen) continue;
    scales_.push_back(s);
    const std::string p = "scale" + std::to_string(s) + ".";
    enc::TokenizerOptions to{.choice = spec.embedding, .channels = ci ? 1 : C, .seq_len = len, .d_model = d_model_,
                             .with_timestamps = spec.timestamps};
    Branch b{s, nullptr, nullptr, nullptr};
    b.tokenizer = add_module(p + "tokenizer", std::make_unique<enc::Tokenizer>(to, rng));
    nn::BackboneSpec bs{.network = spec.network, .d_model = d_model_, .d_ff = d_ff_, .layers = spec.encoder_layers,
                        .series_attention = spec.series_attention, .feature_attention = spec.feature_attention,
                        .n_tokens = b.tokenizer->n_tokens(), .ci = ci,
                        .inverted = spec.embedding == Embedding::inverted, .channels = C,
                        .stats_dim = ci ? 2 : 2 * C};
    b.backbone = add_module(p + "backbone", nn::make_backbone(bs, rng));
    b.head = add_module(p + "head", std::make_unique<enc::ForecastHead>(layout_of(spec.embedding),
                                                                        b.tokenizer->n_tokens(), d_model_, T, C, ci,
                                                                        rng));
    branches_.push_back(b);
  }
}

// Per-row (level, log scale) statistics in the backbone's row layout.
Tensor Forecaster::stats_for(const prep::NormState& st, std::size_t batch) const {
  const std::size_t C = opt_.channels;
  const Tensor lvl = reshape(st.level.detach(), {batch, C});
  const Tensor lsc = log(reshape(st.scale.detach(), {batch, C}));
  if (!spec_.channel_independent) return concat({lvl, lsc}, 1);
  return concat({reshape(lvl, {batch * C, 1}), reshape(lsc, {batch * C, 1})}, 1);
}

Tensor Forecaster::forward(const Tensor& x, const Tensor& x_mark) const {
  if (x.dim() != 3 || x.size(1) != spec_.seq_len || x.size(2) != opt_.channels) {
    throw ShapeError("forecaster: expected input [B, " + std::to_string(spec_.seq_len) + ", " +
                     std::to_string(opt_.channels) + "]");
  }
  if (spec_.timestamps && (!x_mark.defined() || x_mark.dim() != 3 || x_mark.size(0) != x.size(0) ||
                           x_mark.size(1) != spec_.seq_len || x_mark.size(2) != enc::kTimeFeatures)) {
    throw ShapeError("forecaster: timestamps enabled but x_mark is not [B, L, 4]");
  }
  const std::size_t B = x.size(0), C = opt_.channels;
  const bool ci = spec_.channel_independent;
  auto [z, state] = norm_->normalize(x);
  const auto parts = decomp_->decompose(z);
  Tensor stats;
  if (spec_.series_attention == SeriesAttention::destationary) stats = stats_for(state, B);

  Tensor y;
  for (const auto& b : branches_) {
    Tensor xs = b.scale == 1 ? parts.seasonal : avg_pool(parts.seasonal, 1, b.scale);
    Tensor ms;
    if (spec_.timestamps) {
      ms = b.scale == 1 ? x_mark : avg_pool(x_mark, 1, b.scale);
      if (ci) ms = enc::repeat_for_channels(ms, C);
    }
    auto tokens = b.tokenizer->tokenize(enc::apply_channel_independence(xs, ci), ms, {B, C, ci});
    tokens.tokens = b.backbone->forward(tokens.tokens, stats);
    const Tensor out = b.head->project(tokens);
    y = y.defined() ? y + out : out;
  }
  if (trend_) y = y + permute(trend_->forward(permute(parts.trend, {0, 2, 1})), {0, 2, 1});
  return norm_->denormalize(y, state);
}

}  // namespace tsforge::model
