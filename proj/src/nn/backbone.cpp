#include <Eigen/Dense>
#include <cmath>

#include "tsforge/core/ops.hpp"
#include "tsforge/error.hpp"
#include "tsforge/nn/backbone.hpp"

namespace tsforge::nn {

using detail::make_result;
using detail::Node;
using detail::parent_grad;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

double sigmoid1(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Per-step activations kept for the backward pass.
struct GruTape {
  std::vector<double> r, z, c, ghn, hprev;  // each [n, B, H]
};

}  // namespace

Tensor gru_sequence(const Tensor& gx, const Tensor& w_h, const Tensor& b_h) {
  if (gx.dim() != 3 || w_h.dim() != 2 || w_h.size(1) != 3 * w_h.size(0) || gx.size(2) != w_h.size(1) ||
      b_h.numel() != w_h.size(1)) {
    throw ShapeError("gru_sequence: expected gx [B,n,3H], w_h [H,3H], b_h [3H]");
  }
  const std::size_t B = gx.size(0), n = gx.size(1), H = w_h.size(0), G = 3 * H;
  const auto BB = static_cast<Eigen::Index>(B), HH = static_cast<Eigen::Index>(H), GG = static_cast<Eigen::Index>(G);
  auto tape = std::make_shared<GruTape>();
  for (auto* v : {&tape->r, &tape->z, &tape->c, &tape->ghn, &tape->hprev}) v->resize(n * B * H);
  std::vector<double> out(B * n * H);
  RowMat h = RowMat::Zero(BB, HH);
  RowMat gh(BB, GG);
  const auto X = gx.data();
  const auto bias = b_h.data();
  ConstMapMat Wh(w_h.data().data(), HH, GG);
  for (std::size_t t = 0; t < n; ++t) {
    gh.noalias() = h * Wh;
    const std::size_t step = t * B * H;
    std::copy(h.data(), h.data() + B * H, tape->hprev.begin() + static_cast<std::ptrdiff_t>(step));
    for (std::size_t b = 0; b < B; ++b) {
      const double* x = X.data() + (b * n + t) * G;
      const double* g = gh.data() + b * G;
      for (std::size_t j = 0; j < H; ++j) {
        const std::size_t k = step + b * H + j;
        const double r = sigmoid1(x[j] + g[j] + bias[j]);
        const double z = sigmoid1(x[H + j] + g[H + j] + bias[H + j]);
        const double ghn = g[2 * H + j] + bias[2 * H + j];
        const double c = std::tanh(x[2 * H + j] + r * ghn);
        const double hn = (1.0 - z) * c + z * h(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j));
        tape->r[k] = r;
        tape->z[k] = z;
        tape->c[k] = c;
        tape->ghn[k] = ghn;
        out[(b * n + t) * H + j] = hn;
      }
    }
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t j = 0; j < H; ++j) h(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) = out[(b * n + t) * H + j];
    }
  }
  return make_result({B, n, H}, std::move(out), {gx, w_h, b_h},
                     [=](Node& o) {
                       auto ggx = parent_grad(o, 0);
                       auto gw = parent_grad(o, 1);
                       auto gb = parent_grad(o, 2);
                       ConstMapMat W(o.parents[1]->data.data(), HH, GG);
                       RowMat dh_next = RowMat::Zero(BB, HH);
                       RowMat dgh(BB, GG);
                       RowMat dgw = RowMat::Zero(HH, GG);
                       for (std::size_t t = n; t-- > 0;) {
                         const std::size_t step = t * B * H;
                         RowMat dh_prev(BB, HH);
                         for (std::size_t b = 0; b < B; ++b) {
                           for (std::size_t j = 0; j < H; ++j) {
                             const std::size_t k = step + b * H + j;
                             const auto bi = static_cast<Eigen::Index>(b), ji = static_cast<Eigen::Index>(j);
                             const double dh = o.grad[(b * n + t) * H + j] + dh_next(bi, ji);
                             const double r = tape->r[k], z = tape->z[k], c = tape->c[k];
                             const double dz = dh * (tape->hprev[k] - c);
                             const double dc = dh * (1.0 - z);
                             dh_prev(bi, ji) = dh * z;
                             const double dpre_n = dc * (1.0 - c * c);
                             const double dpre_r = dpre_n * tape->ghn[k] * r * (1.0 - r);
                             const double dpre_z = dz * z * (1.0 - z);
                             if (!ggx.empty()) {
                               double* gxrow = ggx.data() + (b * n + t) * G;
                               gxrow[j] += dpre_r;
                               gxrow[H + j] += dpre_z;
                               gxrow[2 * H + j] += dpre_n;
                             }
                             dgh(bi, ji) = dpre_r;
                             dgh(bi, static_cast<Eigen::Index>(H + j)) = dpre_z;
                             dgh(bi, static_cast<Eigen::Index>(2 * H + j)) = dpre_n * r;
                           }
                         }
                         ConstMapMat hprev(tape->hprev.data() + step, BB, HH);
                         dgw.noalias() += hprev.transpose() * dgh;
                         if (!gb.empty()) {
                           for (std::size_t b = 0; b < B; ++b) {
                             for (std::size_t g = 0; g < G; ++g) gb[g] += dgh(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(g));
                           }
                         }
                         dh_prev.noalias() += dgh * W.transpose();
                         dh_next = std::move(dh_prev);
                       }
                       if (!gw.empty()) {
                         MapMat(gw.data(), HH, GG) += dgw;
                       }
                     },
                     "gru_sequence");
}

void validate(const BackboneSpec& spec) {
  if (spec.network == NetworkType::llm || spec.network == NetworkType::tsfm) {
    throw ConfigError("LLM and TSFM backbones are not instantiable");
  }
  if ((spec.network == NetworkType::mlp || spec.network == NetworkType::rnn) &&
      (spec.series_attention != SeriesAttention::null || spec.feature_attention != FeatureAttention::null)) {
    throw ConfigError(spec.network == NetworkType::mlp ? "MLP excludes series attention" : "RNN excludes series attention");
  }
  if (spec.inverted && spec.feature_attention != FeatureAttention::null) {
    throw ConfigError("Inverted Encoding excludes feature attention");
  }
  if (spec.d_model == 0 || spec.d_ff == 0 || spec.layers == 0 || spec.n_tokens == 0) {
    throw ConfigError("backbone dimensions must be positive");
  }
}

std::unique_ptr<Backbone> make_backbone(const BackboneSpec& spec, std::mt19937_64& rng) {
  validate(spec);
  switch (spec.network) {
    case NetworkType::mlp: return std::make_unique<MlpBackbone>(spec, rng);
    case NetworkType::rnn: return std::make_unique<GruBackbone>(spec, rng);
    case NetworkType::transformer: return std::make_unique<TransformerBackbone>(spec, rng);
    default: break;
  }
  throw ConfigError("backbone not instantiable");
}

MlpBackbone::MlpBackbone(const BackboneSpec& spec, std::mt19937_64& rng) {
  validate(spec);
  for (std::size_t i = 0; i < spec.layers; ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    Block b;
    b.mix = add_module(p + "mix", std::make_unique<Linear>(spec.n_tokens, spec.n_tokens, rng));
    b.ln1 = add_module(p + "ln1", std::make_unique<LayerNorm>(spec.d_model));
    b.ff1 = add_module(p + "ff1", std::make_unique<Linear>(spec.d_model, spec.d_ff, rng));
    b.ff2 = add_module(p + "ff2", std::make_unique<Linear>(spec.d_ff, spec.d_model, rng));
    b.ln2 = add_module(p + "ln2", std::make_unique<LayerNorm>(spec.d_model));
    blocks_.push_back(b);
  }
}

Tensor MlpBackbone::forward(const Tensor& tokens, const Tensor&) const {
  Tensor x = tokens;
  for (const auto& b : blocks_) {
    Tensor mixed = transpose(b.mix->forward(transpose(x, 1, 2)), 1, 2);
    x = b.ln1->forward(x + mixed);
    x = b.ln2->forward(x + b.ff2->forward(gelu(b.ff1->forward(x))));
  }
  return x;
}

GruLayer::GruLayer(std::size_t input, std::size_t hidden, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_i_ = add_parameter("w_i", Tensor::uniform({input, 3 * hidden}, rng, -bound, bound));
  b_i_ = add_parameter("b_i", Tensor::uniform({3 * hidden}, rng, -bound, bound));
  w_h_ = add_parameter("w_h", Tensor::uniform({hidden, 3 * hidden}, rng, -bound, bound));
  b_h_ = add_parameter("b_h", Tensor::uniform({3 * hidden}, rng, -bound, bound));
}

Tensor GruLayer::forward(const Tensor& x) const { return gru_sequence(matmul(x, w_i_) + b_i_, w_h_, b_h_); }

GruBackbone::GruBackbone(const BackboneSpec& spec, std::mt19937_64& rng) {
  validate(spec);
  for (std::size_t i = 0; i < spec.layers; ++i) {
    layers_.push_back(add_module("gru" + std::to_string(i), std::make_unique<GruLayer>(spec.d_model, spec.d_model, rng)));
  }
}

Tensor GruBackbone::forward(const Tensor& tokens, const Tensor&) const {
  Tensor x = tokens;
  for (const auto* l : layers_) x = l->forward(x);
  return x;
}

TransformerBackbone::TransformerBackbone(const BackboneSpec& spec, std::mt19937_64& rng) : spec_(spec) {
  validate(spec);
  const bool has_series = spec.series_attention != SeriesAttention::null;
  const bool has_feature = spec.feature_attention != FeatureAttention::null && !spec.inverted;
  for (std::size_t i = 0; i < spec.layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    Layer l;
    if (has_series) {
      l.series = add_module(p + "series", std::make_unique<MultiHeadAttention>(attention_kind(spec.series_attention),
                                                                                spec.d_model, spec.heads, spec.n_tokens, rng));
      l.ln_series = add_module(p + "ln_series", std::make_unique<LayerNorm>(spec.d_model));
    }
    if (has_feature) {
      const auto kind = attention_kind(spec.feature_attention);
      if (spec.ci) {
        l.feature = add_module(p + "feature", std::make_unique<MultiHeadAttention>(kind, spec.d_model, spec.heads, spec.channels, rng));
      } else {
        // Channel-dependent tokens carry the variates inside d_model: attend across the feature axis.
        const std::size_t heads = spec.n_tokens % spec.heads == 0 ? spec.heads : 1;
        l.feature = add_module(p + "feature", std::make_unique<MultiHeadAttention>(kind, spec.n_tokens, heads, spec.d_model, rng));
      }
      l.ln_feature = add_module(p + "ln_feature", std::make_unique<LayerNorm>(spec.d_model));
    }
    l.ff1 = add_module(p + "ff1", std::make_unique<Linear>(spec.d_model, spec.d_ff, rng));
    l.ff2 = add_module(p + "ff2", std::make_unique<Linear>(spec.d_ff, spec.d_model, rng));
    l.ln_ff = add_module(p + "ln_ff", std::make_unique<LayerNorm>(spec.d_model));
    layers_.push_back(l);
  }
  if (spec.series_attention == SeriesAttention::destationary) {
    tau_hidden_ = add_module("tau_hidden", std::make_unique<Linear>(spec.stats_dim, spec.d_model, rng));
    tau_out_ = add_module("tau_out", std::make_unique<Linear>(spec.d_model, 1, rng));
    delta_hidden_ = add_module("delta_hidden", std::make_unique<Linear>(spec.stats_dim, spec.d_model, rng));
    delta_out_ = add_module("delta_out", std::make_unique<Linear>(spec.d_model, spec.n_tokens, rng));
  }
}

Tensor TransformerBackbone::feature_mix(const Layer& layer, const Tensor& x) const {
  const std::size_t rows = x.size(0), n = x.size(1), d = x.size(2);
  if (spec_.ci) {
    const std::size_t c = spec_.channels, b = rows / c;
    Tensor grouped = reshape(permute(reshape(x, {b, c, n, d}), {0, 2, 1, 3}), {b * n, c, d});
    Tensor mixed = layer.feature->forward(grouped);
    return reshape(permute(reshape(mixed, {b, n, c, d}), {0, 2, 1, 3}), {rows, n, d});
  }
  return transpose(layer.feature->forward(transpose(x, 1, 2)), 1, 2);
}

Tensor TransformerBackbone::forward(const Tensor& tokens, const Tensor& stats) const {
  if (tokens.dim() != 3 || tokens.size(1) != spec_.n_tokens || tokens.size(2) != spec_.d_model) {
    throw ShapeError("transformer: unexpected token shape " + shape_to_string(tokens.shape()));
  }
  AttentionAux aux;
  if (tau_hidden_) {
    if (!stats.defined() || stats.dim() != 2 || stats.size(0) != tokens.size(0) || stats.size(1) != spec_.stats_dim) {
      throw ConfigError("destationary attention requires normalization statistics");
    }
    const std::size_t rows = tokens.size(0);
    aux.tau = reshape(exp(tau_out_->forward(gelu(tau_hidden_->forward(stats)))), {rows, 1, 1, 1});
    aux.delta = reshape(delta_out_->forward(gelu(delta_hidden_->forward(stats))), {rows, 1, 1, spec_.n_tokens});
  }
  Tensor x = tokens;
  for (const auto& l : layers_) {
    if (l.series) x = l.ln_series->forward(x + l.series->forward(x, aux));
    if (l.feature) x = l.ln_feature->forward(x + feature_mix(l, x));
    x = l.ln_ff->forward(x + l.ff2->forward(gelu(l.ff1->forward(x))));
  }
  return x;
}

}  // namespace tsforge::nn
