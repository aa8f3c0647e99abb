#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tsforge/core/module.hpp"
#include "tsforge/design/space.hpp"
#include "tsforge/meta/features.hpp"
#include "tsforge/meta/rank.hpp"

namespace tsforge::meta {

/// 1 - Pearson correlation of two equally long samples. Throws DomainError
/// when the target has zero variance.
double pearson_loss_value(std::span<const double> pred, std::span<const double> target);
/// Differentiable in `pred`; `target` is treated as a constant.
Tensor pearson_loss(const Tensor& pred, const Tensor& target);

struct MetaOptions {
  std::size_t embedding_dim = 16;
  std::size_t hidden = 128;
  std::size_t epochs = 100;
  std::size_t batch_size = 512;
  double learning_rate = 1e-3;
  std::size_t patience = 10;
  bool resample = false;  // equalize per-dataset sample counts
  bool all_horizons = false;  // pool horizons, horizon becomes an input
  std::uint64_t seed = 0;
};

/// One training row: a dataset's features, a configuration and its normalized rank.
struct MetaSample {
  std::string group;  // dataset id
  std::size_t horizon = 0;
  const std::vector<double>* features = nullptr;
  design::PipelineConfig config;
  double target = 0.0;
};

/// Rows of `ranks` whose dataset has features; only `horizon` unless all
/// horizons are pooled. Failed cells keep their (worst) rank.
std::vector<MetaSample> build_samples(const RankMatrix& ranks,
                                      const std::map<std::string, MetaFeatureVector>& features,
                                      std::size_t horizon, bool all_horizons);

/// Maps (meta-features, configuration) to a predicted normalized rank.
class MetaPredictor : public Module {
 public:
  MetaPredictor(std::size_t feature_dim, const MetaOptions& options);

  const MetaOptions& options() const { return options_; }
  std::size_t feature_dim() const { return feature_dim_; }
  bool trained() const { return trained_; }

  /// Fits the input scaler on the given raw feature rows.
  void fit_scaler(const std::vector<const std::vector<double>*>& rows);
  Tensor forward(const std::vector<const std::vector<double>*>& features, std::span<const std::size_t> horizons,
                 const std::vector<design::PipelineConfig>& configs) const;
  std::vector<double> predict(const std::vector<double>& features, std::size_t horizon,
                              const std::vector<design::PipelineConfig>& configs) const;

  void mark_trained() { trained_ = true; }
  std::string to_json() const;
  static std::unique_ptr<MetaPredictor> from_json(const std::string& text);

 private:
  std::vector<double> scaled(const std::vector<double>& raw, std::size_t horizon) const;

  MetaOptions options_;
  std::size_t feature_dim_;
  std::vector<std::size_t> offsets_;  // first embedding row of each design dimension
  std::vector<double> shift_, scale_;
  bool trained_ = false;
  Tensor table_;
  Linear* hidden_ = nullptr;
  Linear* out_ = nullptr;
};

struct MetaTrainResult {
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double train_correlation = 0.0;
  std::size_t skipped_batches = 0;
};

/// Pearson-loss training with Adam and early stopping on a held-out dataset
/// (or on a random fifth of the rows when fewer than three datasets are given).
/// Throws TrainingError when every target is equal.
MetaTrainResult train_meta(MetaPredictor& model, const std::vector<MetaSample>& samples);

struct Recommendation {
  design::PipelineConfig config;
  std::uint64_t hash = 0;
  double score = 0.0;
};

/// The k candidates with the smallest predicted rank, ties broken by config hash.
std::vector<Recommendation> recommend(const MetaPredictor& model, const std::vector<double>& features,
                                      std::size_t horizon, const std::vector<design::PipelineConfig>& candidates,
                                      std::size_t k);

}  // namespace tsforge::meta
