#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <vector>

#include "tsforge/core/module.hpp"
#include "tsforge/core/tensor.hpp"
#include "tsforge/design/choices.hpp"

namespace tsforge::enc {

inline constexpr std::size_t kPatchLen = 16;
inline constexpr std::size_t kPatchStride = 8;
inline constexpr std::size_t kTimeFeatures = 4;

/// [B, L, C] -> [B*C, L, 1] when `ci`, identity otherwise.
Tensor apply_channel_independence(const Tensor& x, bool ci);
/// Inverse of apply_channel_independence for a [B*C, T, 1] batch.
Tensor invert_channel_independence(const Tensor& y, std::size_t batch, std::size_t channels, bool ci);
/// Repeats [B, L, F] side-channel rows so they line up with the CI layout.
Tensor repeat_for_channels(const Tensor& mark, std::size_t channels);

struct CalendarStamp {
  int year = 1970;
  int month = 1;    // 1..12
  int day = 1;      // 1..31
  int weekday = 0;  // 0 = Monday
  int hour = 0;
  int minute = 0;
};

/// [T, 4] calendar features (month, day-of-month, weekday, hour), each in [-0.5, 0.5].
Tensor timestamp_features(const std::vector<CalendarStamp>& stamps);

enum class Layout { pointwise, patch, inverted };

struct Provenance {
  std::size_t batch = 0;
  std::size_t channels = 0;
  bool ci = false;
};

struct TokenBatch {
  Tensor tokens;  // [B', n_tokens, d_model]
  Layout layout = Layout::pointwise;
  std::size_t n_tokens = 0;
  Provenance provenance;
};

/// Number of tokens produced for a series of length `len`.
std::size_t token_count(Embedding choice, std::size_t len, std::size_t channels, bool with_timestamps,
                        std::size_t patch_len = kPatchLen, std::size_t stride = kPatchStride);

/// [L, d] fixed sinusoidal position table.
Tensor sinusoidal_positions(std::size_t len, std::size_t d_model);

struct TokenizerOptions {
  Embedding choice = Embedding::positional;
  std::size_t channels = 1;  // per-token channel count after any CI reshape
  std::size_t seq_len = 96;
  std::size_t d_model = 64;
  bool with_timestamps = false;
  std::size_t patch_len = kPatchLen;
  std::size_t stride = kPatchStride;
};

class Tokenizer : public Module {
 public:
  Tokenizer(const TokenizerOptions& opt, std::mt19937_64& rng);

  /// x: [B', L, channels]; mark: [B', L, 4] when timestamps are enabled.
  TokenBatch tokenize(const Tensor& x, const Tensor& mark, const Provenance& prov) const;
  const TokenizerOptions& options() const { return opt_; }
  std::size_t n_tokens() const { return n_tokens_; }

 private:
  TokenizerOptions opt_;
  std::size_t n_tokens_;
  Linear* value_ = nullptr;
  Linear* mark_ = nullptr;  // inverted layout: timestamp token
  Tensor positions_;        // fixed (pointwise) or learnable (patch)
  std::vector<std::size_t> unfold_;
};

/// Linear map from token representations to a T-step forecast per series.
class ForecastHead : public Module {
 public:
  ForecastHead(Layout layout, std::size_t n_tokens, std::size_t d_model, std::size_t horizon, std::size_t channels,
               bool ci, std::mt19937_64& rng);

  /// Returns [B, T, C].
  Tensor project(const TokenBatch& h) const;
  Linear& linear() { return *proj_; }

 private:
  Layout layout_;
  std::size_t n_tokens_, d_model_, horizon_, channels_;
  bool ci_;
  Linear* proj_;
};

}  // namespace tsforge::enc
