#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <random>

#include "support/metrics_reference.hpp"
#include "tsforge/core/ops.hpp"
#include "tsforge/error.hpp"
#include "tsforge/train/train.hpp"

using namespace tsforge;
using namespace tsforge::train;

namespace {

Tensor randn(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::randn(std::move(s), rng);
}

// Per-channel linear map from the look-back window to the horizon.
class LinearForecast : public model::ForecastModel {
 public:
  LinearForecast(std::size_t len, std::size_t horizon, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    proj_ = add_module("proj", std::make_unique<Linear>(len, horizon, rng));
  }
  Tensor forward(const Tensor& x, const Tensor& = {}) const override {
    return permute(proj_->forward(permute(x, {0, 2, 1})), {0, 2, 1});
  }
  Linear& proj() { return *proj_; }

 private:
  Linear* proj_;
};

// No parameters: forecasts the last observed value.
class Persistence : public model::ForecastModel {
 public:
  Tensor forward(const Tensor& x, const Tensor& = {}) const override {
    const std::size_t T = 3;
    return concat(std::vector<Tensor>(T, slice(x, 1, x.size(1) - 1, 1)), 1);
  }
};

class Exploding : public model::ForecastModel {
 public:
  Exploding() { w_ = add_parameter("w", Tensor::full({1}, 1.0)); }
  Tensor forward(const Tensor& x, const Tensor& = {}) const override {
    return slice(x, 1, 0, 3) * (w_ * std::numeric_limits<double>::quiet_NaN());
  }

 private:
  Tensor w_;
};

Windows sine_windows(std::size_t n, std::size_t len, std::size_t horizon, double phase) {
  std::vector<double> v(n * 2);
  for (std::size_t t = 0; t < n; ++t) {
    v[t * 2] = std::sin(0.3 * t + phase);
    v[t * 2 + 1] = 0.5 * std::cos(0.17 * t + phase);
  }
  return {Tensor::from_data({n, 2}, std::move(v)), {}, len, horizon};
}

reference::Matrix to_matrix(const Tensor& t) {
  reference::Matrix m(t.size(0), std::vector<double>(t.size(1)));
  for (std::size_t i = 0; i < t.size(0); ++i) {
    for (std::size_t j = 0; j < t.size(1); ++j) m[i][j] = t.at({i, j});
  }
  return m;
}

}  // namespace

TEST(Loss, Values) {
  const Tensor p = Tensor::from_data({1}, {0.0}), t = Tensor::from_data({1}, {2.0});
  EXPECT_DOUBLE_EQ(loss(p, t, LossKind::mse).item(), 4.0);
  EXPECT_DOUBLE_EQ(loss(p, t, LossKind::mae).item(), 2.0);
  EXPECT_DOUBLE_EQ(loss(p, t, LossKind::huber).item(), 1.5);
  EXPECT_DOUBLE_EQ(loss(Tensor::from_data({1}, {0.5}), Tensor::zeros({1}), LossKind::huber).item(), 0.125);
  for (auto k : {LossKind::mse, LossKind::mae, LossKind::huber}) {
    EXPECT_EQ(loss(t, t, k).item(), 0.0);
    EXPECT_THROW(loss(Tensor::zeros({2}), Tensor::zeros({3}), k), ShapeError);
  }
}

TEST(Loss, NonNegativeAndScaling) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ua(-4.0, 4.0);
  for (int s = 0; s < 50; ++s) {
    const Tensor p = randn({4, 3}, s), t = randn({4, 3}, s + 100);
    const double a = ua(rng);
    for (auto k : {LossKind::mse, LossKind::mae, LossKind::huber}) EXPECT_GT(loss(p, t, k).item(), 0.0);
    EXPECT_NEAR(loss(p * a, t * a, LossKind::mse).item(), a * a * loss(p, t, LossKind::mse).item(), 1e-12);
    EXPECT_NEAR(loss(p * a, t * a, LossKind::mae).item(), std::abs(a) * loss(p, t, LossKind::mae).item(), 1e-12);
  }
}

TEST(Schedule, StepDecay) {
  EXPECT_EQ(lr_schedule(1e-3, 1, LrStrategy::type1), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(1e-3, 3, LrStrategy::type1), 2.5e-4);
  for (std::size_t e = 1; e < 20; ++e) EXPECT_EQ(lr_schedule(1e-4, e, LrStrategy::null), 1e-4);
  EXPECT_THROW(lr_schedule(1e-3, 0, LrStrategy::null), ConfigError);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor w = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  sum(w * 0.0).backward();
  Adam opt({w});
  opt.step(0.1);
  EXPECT_EQ(w.data()[0], 1.0);
  EXPECT_EQ(w.data()[1], -2.0);
  EXPECT_EQ(w.data()[2], 0.5);
}

TEST(Adam, FirstStepHasMagnitudeLr) {
  for (double g : {1.0, -3.0, 1e-3}) {
    Tensor w = Tensor::from_data({1}, {0.0}, true);
    sum(w * g).backward();
    Adam opt({w});
    opt.step(0.001);
    EXPECT_NEAR(w.data()[0], g > 0 ? -0.001 : 0.001, 1e-8);
  }
}

TEST(Adam, ConvergesOnQuadratic) {
  Tensor w = Tensor::from_data({1}, {0.0}, true);
  Adam opt({w});
  for (int i = 0; i < 200; ++i) {
    w.zero_grad();
    sum(square(w - 3.0)).backward();
    opt.step(0.1);
  }
  EXPECT_LT(std::abs(w.data()[0] - 3.0), 1e-2);
}

TEST(Adam, UpdateOpposesGradientSign) {
  // While the gradient keeps its sign (no overshoot), every update points downhill.
  for (double start : {-5.0, 9.0}) {
    Tensor w = Tensor::from_data({1}, {start}, true);
    Adam opt({w});
    for (int i = 0; i < 300; ++i) {
      w.zero_grad();
      sum(square(w - 3.0)).backward();
      const double g = w.grad()[0];
      const double before = w.data()[0];
      opt.step(1e-3);
      EXPECT_EQ(std::signbit(w.data()[0] - before), !std::signbit(g));
    }
  }
}

TEST(Adam, NonFiniteGradientAborts) {
  Tensor w = Tensor::from_data({1}, {0.0}, true);
  w.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  Adam opt({w});
  EXPECT_THROW(opt.step(0.1), TrainingError);
}

TEST(Clip, GlobalNorm) {
  Tensor a = Tensor::from_data({2}, {0.0, 0.0}, true), b = Tensor::from_data({1}, {0.0}, true);
  a.mutable_grad()[0] = 3.0;
  a.mutable_grad()[1] = 4.0;
  b.mutable_grad()[0] = 12.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm({a, b}, 5.0), 13.0);
  EXPECT_NEAR(grad_norm({a, b}), 5.0, 1e-12);
  EXPECT_NEAR(a.grad()[0], 3.0 * 5.0 / 13.0, 1e-12);
}

TEST(Windows, CountsAndContent) {
  const Windows w = sine_windows(200, 96, 24, 0.0);
  EXPECT_EQ(w.count(), 81u);
  const Batch last = w.window(80);
  EXPECT_EQ(last.y.at({0, 23, 1}), w.series.at({199, 1}));
  EXPECT_EQ(last.x.at({0, 95, 0}), w.series.at({175, 0}));
  EXPECT_EQ(last.y.at({0, 0, 0}), w.series.at({176, 0}));
  EXPECT_THROW(w.window(81), DataError);
  EXPECT_EQ(spread_indices(10, 3), (std::vector<std::size_t>{0, 3, 6}));
  EXPECT_EQ(spread_indices(3, 0).size(), 3u);
}

TEST(Train, ParameterFreeModelStopsAtPatience) {
  Persistence m;
  const auto tr = sine_windows(100, 16, 3, 0.0), va = sine_windows(60, 16, 3, 1.0);
  TrainConfig cfg;
  cfg.epochs = 20;
  const auto r = train::train(m, tr, va, cfg);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.val_loss.size(), 1 + cfg.patience);
  EXPECT_EQ(r.best_epoch, 1u);
  for (double v : r.val_loss) EXPECT_EQ(v, r.val_loss[0]);
  EXPECT_EQ(r.steps, 0u);
}

TEST(Train, LinearModelFitsLinearRecurrence) {
  // Sinusoids satisfy an exact linear recurrence, so some linear map from the
  // window to the horizon has zero error; least squares confirms it first.
  const std::size_t L = 8, T = 2;
  const auto tr = sine_windows(240, L, T, 0.0), va = sine_windows(80, L, T, 2.0);
  {
    const std::size_t n = tr.count();
    Eigen::MatrixXd X(2 * n, L + 1), Y(2 * n, T);
    for (std::size_t i = 0; i < n; ++i) {
      const Batch b = tr.window(i);
      for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t j = 0; j < L; ++j) X(2 * i + c, j) = b.x.at({0, j, c});
        X(2 * i + c, L) = 1.0;
        for (std::size_t j = 0; j < T; ++j) Y(2 * i + c, j) = b.y.at({0, j, c});
      }
    }
    const Eigen::MatrixXd W = X.colPivHouseholderQr().solve(Y);
    EXPECT_LT((X * W - Y).squaredNorm() / static_cast<double>(Y.size()), 1e-20);
  }
  LinearForecast m(L, T, 3);
  TrainConfig cfg;
  cfg.epochs = 2000;
  cfg.patience = 2000;
  cfg.learning_rate = 3e-2;
  const auto r = train::train(m, tr, va, cfg);
  EXPECT_LT(evaluate_loss(m, tr, LossKind::mse), 1e-6);
  EXPECT_LT(r.best_val_loss, 1e-5);
}

TEST(Train, DeterministicAndRestoresBest) {
  const auto tr = sine_windows(150, 12, 3, 0.0), va = sine_windows(60, 12, 3, 1.0);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.seed = 11;
  cfg.learning_rate = 0.05;  // noisy enough to make later epochs worse sometimes
  cfg.batch_size = 8;
  LinearForecast a(12, 3, 1), b(12, 3, 1);
  const auto ra = train::train(a, tr, va, cfg), rb = train::train(b, tr, va, cfg);
  EXPECT_EQ(ra.train_loss, rb.train_loss);
  EXPECT_EQ(ra.val_loss, rb.val_loss);
  EXPECT_EQ(evaluate_loss(a, va, cfg.loss, cfg.batch_size), ra.best_val_loss);
  EXPECT_EQ(*std::min_element(ra.val_loss.begin(), ra.val_loss.end()), ra.best_val_loss);
}

TEST(Train, BudgetCaps) {
  const auto tr = sine_windows(400, 12, 3, 0.0), va = sine_windows(60, 12, 3, 1.0);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.patience = 10;
  cfg.max_batches_per_epoch = 2;
  LinearForecast m(12, 3, 1);
  EXPECT_EQ(train::train(m, tr, va, cfg).steps, 6u);
}

TEST(Train, DivergenceIsReported) {
  Exploding m;
  const auto tr = sine_windows(100, 16, 3, 0.0), va = sine_windows(60, 16, 3, 1.0);
  EXPECT_THROW(train::train(m, tr, va, TrainConfig{}), TrainingError);
}

TEST(Metrics, Identities) {
  const Tensor y = Tensor::from_data({3, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  const Tensor hist = randn({20, 2}, 1);
  const auto r = metrics(y, y, hist, 1);
  EXPECT_EQ(r.mse, 0.0);
  EXPECT_EQ(r.mae, 0.0);
  EXPECT_EQ(r.smape, 0.0);
  EXPECT_EQ(*r.mase, 0.0);
  EXPECT_EQ(*r.mape, 0.0);
  const auto s = metrics(Tensor::from_data({1, 1}, {1.0}), Tensor::from_data({1, 1}, {2.0}),
                         Tensor::from_data({3, 1}, {0.0, 1.0, 3.0}), 1);
  EXPECT_NEAR(s.smape, 200.0 / 3.0, 1e-12);
  EXPECT_NEAR(*s.mape, 50.0, 1e-12);
  EXPECT_NEAR(*s.mase, 1.0 / 1.5, 1e-12);
}

TEST(Metrics, SeasonalNaiveOnOwnHistoryHasUnitMase) {
  const std::size_t m = 4, N = 40;
  const Tensor hist = randn({N, 3}, 2);
  std::vector<double> pred, target;
  for (std::size_t t = m; t < N; ++t) {
    for (std::size_t c = 0; c < 3; ++c) {
      pred.push_back(hist.at({t - m, c}));
      target.push_back(hist.at({t, c}));
    }
  }
  // One channel at a time, so the per-channel scale matches its own numerator.
  for (std::size_t c = 0; c < 3; ++c) {
    const Tensor h = slice(hist, 1, c, 1);
    std::vector<double> p, y;
    for (std::size_t t = m; t < N; ++t) {
      p.push_back(hist.at({t - m, c}));
      y.push_back(hist.at({t, c}));
    }
    const auto r = metrics(Tensor::from_data({N - m, 1}, p), Tensor::from_data({N - m, 1}, y), h, m);
    EXPECT_NEAR(*r.mase, 1.0, 1e-12);
  }
}

TEST(Metrics, UndefinedCases) {
  const Tensor flat = Tensor::full({10, 1}, 2.0);
  const auto r = metrics(Tensor::full({2, 1}, 1.0), Tensor::full({2, 1}, 2.0), flat, 1);
  EXPECT_FALSE(r.mase.has_value());
  EXPECT_FALSE(r.owa.has_value());
  const auto z = metrics(Tensor::full({2, 1}, 1.0), Tensor::zeros({2, 1}), randn({10, 1}, 0), 1);
  EXPECT_FALSE(z.mape.has_value());
  EXPECT_NEAR(z.smape, 200.0, 1e-12);
  EXPECT_FALSE(metrics(Tensor::full({2, 1}, 1.0), Tensor::zeros({2, 1}), randn({3, 1}, 0), 3).mase.has_value());
  EXPECT_THROW(metrics(Tensor::zeros({2, 1}), Tensor::zeros({3, 1}), flat, 1), ShapeError);
}

TEST(Metrics, ScaleRelationsAndRanges) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ua(0.1, 5.0);
  for (int s = 0; s < 50; ++s) {
    const Tensor p = randn({6, 2}, s), y = randn({6, 2}, s + 1000), h = randn({30, 2}, s + 2000);
    const double a = ua(rng);
    const auto r = metrics(p, y, h, 2), ra = metrics(p * a, y * a, h * a, 2);
    EXPECT_NEAR(ra.mse, a * a * r.mse, 1e-10);
    EXPECT_NEAR(ra.mae, a * r.mae, 1e-12);
    EXPECT_NEAR(*ra.mase, *r.mase, 1e-10);
    EXPECT_GE(r.smape, 0.0);
    EXPECT_LE(r.smape, 200.0);
    EXPECT_GE(*r.owa, 0.0);
  }
}

TEST(Metrics, OwaOfBaselineIsOne) {
  std::vector<double> v;
  for (std::size_t t = 0; t < 60; ++t) v.push_back(10.0 + 3.0 * std::sin(2.0 * M_PI * t / 6.0) + 0.3 * std::cos(t));
  const Tensor hist = Tensor::from_data({48, 1}, {v.begin(), v.begin() + 48});
  const Tensor truth = Tensor::from_data({12, 1}, {v.begin() + 48, v.end()});
  EXPECT_TRUE(seasonality_test(std::span(v).first(48), 6));
  const Tensor base = naive2_forecast(hist, 12, 6);
  EXPECT_NEAR(*metrics(base, truth, hist, 6).owa, 1.0, 1e-12);
  // The adjusted forecast follows the season rather than staying flat.
  EXPECT_GT(std::abs(base.at({1, 0}) - base.at({4, 0})), 3.0);
}

TEST(Metrics, MatchesIndependentReference) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> um(1, 12);
  std::uniform_real_distribution<double> shift(-1.0, 6.0);
  for (int s = 0; s < 100; ++s) {
    const std::size_t m = um(rng), H = 1 + s % 13, C = 1 + s % 3, N = 3 * m + 10 + s % 7;
    std::vector<double> h(N * C);
    for (std::size_t t = 0; t < N; ++t) {
      for (std::size_t c = 0; c < C; ++c) h[t * C + c] = std::sin(2.0 * M_PI * t / m + c) + 0.3 * randn({1}, s * 97 + t).item() + shift(rng);
    }
    const Tensor hist = Tensor::from_data({N, C}, h);
    const Tensor pred = randn({H, C}, s + 1), truth = randn({H, C}, s + 2) + 1.0;
    const auto got = metrics(pred, truth, hist, m);
    const auto want = reference::compute(to_matrix(pred), to_matrix(truth), to_matrix(hist), m);
    EXPECT_NEAR(got.mse, want.mse, 1e-10);
    EXPECT_NEAR(got.mae, want.mae, 1e-10);
    EXPECT_NEAR(got.smape, want.smape, 1e-10);
    ASSERT_EQ(got.mape.has_value(), want.mape.has_value());
    if (got.mape) EXPECT_NEAR(*got.mape, *want.mape, 1e-10);
    ASSERT_EQ(got.mase.has_value(), want.mase.has_value());
    if (got.mase) EXPECT_NEAR(*got.mase, *want.mase, 1e-10);
    ASSERT_EQ(got.owa.has_value(), want.owa.has_value());
    if (got.owa) EXPECT_NEAR(*got.owa, *want.owa, 1e-10);
  }
}
