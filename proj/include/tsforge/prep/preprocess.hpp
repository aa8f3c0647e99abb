#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "tsforge/core/module.hpp"
#include "tsforge/core/tensor.hpp"
#include "tsforge/design/choices.hpp"

namespace tsforge::prep {

inline constexpr double kNormEps = 1e-5;

/// Statistics captured by normalize and consumed by denormalize. `level` and
/// `scale` are [B, 1, C]; they are undefined for Normalization::none.
struct NormState {
  Normalization method = Normalization::none;
  Tensor level;
  Tensor scale;
};

/// Series normalization over the look-back window of a [B, L, C] batch.
class Normalizer : public Module {
 public:
  Normalizer(Normalization method, std::size_t channels, std::size_t seq_len);

  std::pair<Tensor, NormState> normalize(const Tensor& x) const;
  /// Inverts normalize for a [B, T, C] batch using the look-back statistics.
  Tensor denormalize(const Tensor& y, const NormState& state) const;

  Normalization method() const { return method_; }
  Tensor& affine_weight() { return gamma_; }
  Tensor& affine_bias() { return beta_; }

 private:
  Normalization method_;
  std::size_t channels_, seq_len_;
  Tensor gamma_, beta_;  // RevIN, [C]
  Tensor coeff_;         // DishTS, [C, L, 2]: level and log-scale projections
  Tensor coeff_bias_;    // DishTS, [C, 1, 2]
};

struct DecompResult {
  Decomposition method = Decomposition::none;
  Tensor seasonal;
  Tensor trend;  // undefined for Decomposition::none
};

struct DecompParams {
  std::size_t kernel = 25;
  std::vector<std::size_t> mixture_kernels{13, 17, 25};
  std::size_t dft_cutoff = 3;
};

/// Seasonal/trend split along the time axis of a [B, L, C] batch.
class Decomposer : public Module {
 public:
  Decomposer(Decomposition method, DecompParams params = {});

  DecompResult decompose(const Tensor& x) const;
  Decomposition method() const { return method_; }
  Tensor& gate() { return gate_; }

 private:
  Decomposition method_;
  DecompParams params_;
  Tensor gate_;  // MoEMA, one logit per kernel
};

inline const std::vector<std::size_t> kDefaultScales{1, 2, 4};

/// Average-pooled copies of a [B, L, C] batch, one per scale (stride = scale).
std::vector<Tensor> multiscale(const Tensor& x, bool enabled, const std::vector<std::size_t>& scales = kDefaultScales);

}  // namespace tsforge::prep
