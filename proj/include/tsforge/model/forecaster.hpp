#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tsforge/core/module.hpp"
#include "tsforge/design/choices.hpp"
#include "tsforge/enc/encoding.hpp"
#include "tsforge/nn/backbone.hpp"
#include "tsforge/prep/preprocess.hpp"

namespace tsforge::model {

/// Anything trainable that maps a look-back batch to a forecast.
class ForecastModel : public Module {
 public:
  /// x: [B, L, C]; x_mark: [B, L, 4] or undefined. Returns [B, T, C].
  virtual Tensor forward(const Tensor& x, const Tensor& x_mark = {}) const = 0;
  virtual bool uses_timestamps() const { return false; }
};

struct ModelOptions {
  std::size_t channels = 1;
  std::size_t horizon = 24;
  std::uint64_t seed = 0;
  // d_model and d_ff are divided by this (at least 4 and 1 remain).
  std::size_t width_divisor = 1;
};

/// Throws ConfigError when `spec` cannot be instantiated.
void check_instantiable(const PipelineSpec& spec, std::size_t channels);

/// The forecasting pipeline described by one design configuration:
/// normalize, decompose, multiscale branches of tokenizer + backbone + head,
/// linear trend path, denormalize.
class Forecaster : public ForecastModel {
 public:
  Forecaster(const PipelineSpec& spec, const ModelOptions& opt);

  Tensor forward(const Tensor& x, const Tensor& x_mark = {}) const override;
  bool uses_timestamps() const override { return spec_.timestamps; }

  const PipelineSpec& spec() const { return spec_; }
  const std::vector<std::size_t>& scales() const { return scales_; }
  std::size_t d_model() const { return d_model_; }

 private:
  struct Branch {
    std::size_t scale;
    enc::Tokenizer* tokenizer;
    nn::Backbone* backbone;
    enc::ForecastHead* head;
  };
  Tensor stats_for(const prep::NormState& st, std::size_t batch) const;

  PipelineSpec spec_;
  ModelOptions opt_;
  std::size_t d_model_, d_ff_;
  std::vector<std::size_t> scales_;
  prep::Normalizer* norm_;
  prep::Decomposer* decomp_;
  Linear* trend_ = nullptr;
  std::vector<Branch> branches_;
};

}  // namespace tsforge::model
