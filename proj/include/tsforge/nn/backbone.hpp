#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <vector>

#include "tsforge/core/module.hpp"
#include "tsforge/core/tensor.hpp"
#include "tsforge/design/choices.hpp"

namespace tsforge::nn {

inline constexpr std::size_t kHeads = 4;
inline constexpr double kSparseFactor = 5.0;
inline constexpr std::size_t kFrequencyModes = 16;

enum class AttentionKind { self, sparse, auto_correlation, frequency, destationary };

AttentionKind attention_kind(SeriesAttention a);
AttentionKind attention_kind(FeatureAttention a);

/// Number of queries kept by ProbSparse attention: ceil(c ln n), at least 1.
std::size_t sparse_top_u(std::size_t n_tokens);
/// Number of delays aggregated by auto-correlation: ceil(ln n), at least 1.
std::size_t autocorr_top_k(std::size_t n_tokens);
/// Default retained modes for frequency attention: min(16, floor(n/2)), at least 1.
std::size_t frequency_modes(std::size_t n_tokens);

/// Side inputs for the attention variants that need them.
struct AttentionAux {
  Tensor tau;        // destationary: [B, 1, 1, 1], positive
  Tensor delta;      // destationary: [B, 1, 1, n]
  Tensor kernel_re;  // frequency: [h, dk, M]
  Tensor kernel_im;
  std::size_t top_u = 0;  // sparse: override of sparse_top_u when nonzero
};

struct AttentionOutput {
  Tensor values;   // [B, h, n, dk]
  Tensor weights;  // [B, h, n, n] for softmax variants
  std::vector<std::size_t> selected;  // sparse: u selected query indices per (b, h) row
};

/// q, k, v: [B, h, n, dk].
AttentionOutput attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionKind kind,
                          const AttentionAux& aux = {});

/// Circular cross-correlation along the token axis via the real FFT:
/// corr[b, h, j, tau] = sum_t q[b, h, (t + tau) mod n, j] k[b, h, t, j]. Returns [B, h, dk, n].
Tensor circular_correlation(const Tensor& q, const Tensor& k);

/// out[b, h, t] = sum_i w[b, i] v[b, h, (t + delays[b*k + i]) mod n]. v: [B, h, n, dk], w: [B, k].
Tensor delay_aggregate(const Tensor& v, const Tensor& w, const std::vector<std::size_t>& delays);

/// Fused GRU recurrence over a precomputed input projection. gx: [B, n, 3H]
/// holding the (reset, update, candidate) input terms; w_h: [H, 3H]; b_h: [3H].
/// Returns the hidden sequence [B, n, H] from a zero initial state.
Tensor gru_sequence(const Tensor& gx, const Tensor& w_h, const Tensor& b_h);

/// Multi-head attention over the token axis of [B, n, d].
class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention(AttentionKind kind, std::size_t d_model, std::size_t heads, std::size_t n_tokens,
                     std::mt19937_64& rng);

  Tensor forward(const Tensor& x, const AttentionAux& aux = {}) const;
  AttentionKind kind() const { return kind_; }
  std::size_t heads() const { return heads_; }
  Linear* query() { return wq_; }
  Linear* key() { return wk_; }
  Linear* value() { return wv_; }
  Linear* output() { return wo_; }

 private:
  Tensor split_heads(const Tensor& x) const;
  Tensor merge_heads(const Tensor& x) const;

  AttentionKind kind_;
  std::size_t d_model_, heads_, n_tokens_;
  Linear* wq_ = nullptr;
  Linear* wk_ = nullptr;
  Linear* wv_ = nullptr;
  Linear* wo_ = nullptr;
  Tensor kernel_re_, kernel_im_;
};

struct BackboneSpec {
  NetworkType network = NetworkType::transformer;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  std::size_t layers = 2;
  SeriesAttention series_attention = SeriesAttention::null;
  FeatureAttention feature_attention = FeatureAttention::null;
  std::size_t heads = kHeads;
  std::size_t n_tokens = 1;
  // Layout of the token batch: CI rows are series of `channels` grouped per sample.
  bool ci = false;
  bool inverted = false;
  std::size_t channels = 1;
  // Width of the per-row (mean, log std) vector consumed by destationary attention.
  std::size_t stats_dim = 2;
};

/// Maps [B', n, d] tokens to [B', n, d] representations.
class Backbone : public Module {
 public:
  /// `stats`: [B', stats_dim] normalization statistics (destationary attention only).
  virtual Tensor forward(const Tensor& tokens, const Tensor& stats = {}) const = 0;
};

void validate(const BackboneSpec& spec);
std::unique_ptr<Backbone> make_backbone(const BackboneSpec& spec, std::mt19937_64& rng);

class MlpBackbone : public Backbone {
 public:
  MlpBackbone(const BackboneSpec& spec, std::mt19937_64& rng);
  Tensor forward(const Tensor& tokens, const Tensor& stats = {}) const override;
  Linear& mixer(std::size_t layer) { return *blocks_[layer].mix; }
  Linear& ffn_out(std::size_t layer) { return *blocks_[layer].ff2; }

 private:
  struct Block {
    Linear* mix;
    LayerNorm* ln1;
    Linear* ff1;
    Linear* ff2;
    LayerNorm* ln2;
  };
  std::vector<Block> blocks_;
};

class GruLayer : public Module {
 public:
  GruLayer(std::size_t input, std::size_t hidden, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  Tensor& input_weight() { return w_i_; }
  Tensor& input_bias() { return b_i_; }
  Tensor& hidden_weight() { return w_h_; }
  Tensor& hidden_bias() { return b_h_; }

 private:
  Tensor w_i_, b_i_, w_h_, b_h_;
};

class GruBackbone : public Backbone {
 public:
  GruBackbone(const BackboneSpec& spec, std::mt19937_64& rng);
  Tensor forward(const Tensor& tokens, const Tensor& stats = {}) const override;
  GruLayer& layer(std::size_t i) { return *layers_[i]; }

 private:
  std::vector<GruLayer*> layers_;
};

class TransformerBackbone : public Backbone {
 public:
  TransformerBackbone(const BackboneSpec& spec, std::mt19937_64& rng);
  Tensor forward(const Tensor& tokens, const Tensor& stats = {}) const override;
  MultiHeadAttention* series_attention(std::size_t layer) { return layers_[layer].series; }

 private:
  struct Layer {
    MultiHeadAttention* series = nullptr;
    LayerNorm* ln_series = nullptr;
    MultiHeadAttention* feature = nullptr;
    LayerNorm* ln_feature = nullptr;
    Linear* ff1;
    Linear* ff2;
    LayerNorm* ln_ff;
  };
  Tensor feature_mix(const Layer& layer, const Tensor& x) const;

  BackboneSpec spec_;
  std::vector<Layer> layers_;
  // Destationary factor projections from the normalization statistics.
  Linear* tau_hidden_ = nullptr;
  Linear* tau_out_ = nullptr;
  Linear* delta_hidden_ = nullptr;
  Linear* delta_out_ = nullptr;
};

}  // namespace tsforge::nn
