#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tsforge/core/tensor.hpp"
#include "tsforge/design/choices.hpp"
#include "tsforge/model/forecaster.hpp"

namespace tsforge::train {

inline constexpr double kHuberDelta = 1.0;
inline constexpr std::size_t kDefaultBatch = 32;
inline constexpr std::size_t kDefaultPatience = 3;
inline constexpr double kClipNorm = 5.0;

/// Mean-reduced training loss; shapes must match.
Tensor loss(const Tensor& pred, const Tensor& target, LossKind kind);

/// Learning rate for a 1-based epoch.
double lr_schedule(double base_lr, std::size_t epoch, LrStrategy strategy);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamOptions opt = {});

  /// Applies one update from the current gradients. Throws TrainingError on
  /// non-finite gradients; parameters without gradients are left untouched.
  void step(double lr);
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

struct Batch {
  Tensor x;     // [B, L, C]
  Tensor mark;  // [B, L, 4] or undefined
  Tensor y;     // [B, T, C]
};

/// Stride-1 sliding windows over a [N, C] array: window i reads x from rows
/// [i, i+L) and y from rows [i+L, i+L+T).
struct Windows {
  Tensor series;  // [N, C]
  Tensor marks;   // [N, 4] or undefined
  std::size_t seq_len = 0;
  std::size_t horizon = 0;

  std::size_t count() const;
  Batch gather(std::span<const std::size_t> index) const;
  Batch window(std::size_t i) const;
};

/// Up to `cap` window indices spread evenly over [0, n); all of them when cap is 0 or >= n.
std::vector<std::size_t> spread_indices(std::size_t n, std::size_t cap);

struct TrainConfig {
  std::size_t epochs = 10;
  LossKind loss = LossKind::mse;
  double learning_rate = 1e-3;
  LrStrategy lr_strategy = LrStrategy::null;
  std::size_t batch_size = kDefaultBatch;
  std::size_t patience = kDefaultPatience;
  std::uint64_t seed = 0;
  double clip_norm = kClipNorm;
  // Compute budget: 0 disables each cap.
  std::size_t max_batches_per_epoch = 0;
  std::size_t max_eval_windows = 0;
};

TrainConfig train_config(const PipelineSpec& spec, std::uint64_t seed);

struct TrainResult {
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  bool early_stopped = false;
  std::vector<double> train_loss;  // mean per epoch
  std::vector<double> val_loss;
};

/// Trains with shuffled mini-batches, the epoch learning-rate schedule,
/// global-norm clipping and early stopping on validation loss, then restores
/// the best-validation weights. Throws TrainingError on divergence.
TrainResult train(model::ForecastModel& model, const Windows& train_set, const Windows& val_set,
                  const TrainConfig& cfg);

/// Mean loss over (a spread subset of) the windows, without recording a graph.
double evaluate_loss(const model::ForecastModel& model, const Windows& set, LossKind kind,
                     std::size_t batch_size = kDefaultBatch, std::size_t max_windows = 0);

/// Forecasts for the given windows, [n, T, C].
Tensor predict(const model::ForecastModel& model, const Windows& set, std::span<const std::size_t> index,
               std::size_t batch_size = kDefaultBatch);

struct MetricReport {
  double mse = 0.0;
  double mae = 0.0;
  double smape = 0.0;
  std::optional<double> mape;  // undefined when a target is zero
  std::optional<double> mase;  // undefined when the seasonal-difference scale is zero
  std::optional<double> owa;   // undefined when MASE or the baseline is
  std::size_t horizon = 0;
  std::size_t periodicity = 1;
};

/// Forecast accuracy of pred against target ([H, C] each). MASE is scaled by
/// the mean absolute lag-m difference of `history` ([N, C], N > m) per channel;
/// OWA normalizes SMAPE and MASE by the Naive2 forecast from the same history.
MetricReport metrics(const Tensor& pred, const Tensor& target, const Tensor& history, std::size_t m);

/// Autocorrelation test at lag m with a 90% two-sided threshold.
bool seasonality_test(std::span<const double> x, std::size_t m);
/// Seasonally adjusted naive forecast [H, C] from history [N, C].
Tensor naive2_forecast(const Tensor& history, std::size_t horizon, std::size_t m);

}  // namespace tsforge::train
