#include "tsforge/train/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "tsforge/core/ops.hpp"
#include "tsforge/error.hpp"

namespace tsforge::train {

Tensor loss(const Tensor& pred, const Tensor& target, LossKind kind) {
  if (pred.shape() != target.shape()) throw ShapeError("loss: prediction and target shapes differ");
  const Tensor r = pred - target;
  switch (kind) {
    case LossKind::mse: return mean(square(r));
    case LossKind::mae: return mean(abs(r));
    case LossKind::huber: return mean(huber(r, kHuberDelta));
  }
  throw ConfigError("loss: unknown kind");
}

double lr_schedule(double base_lr, std::size_t epoch, LrStrategy strategy) {
  if (epoch == 0) throw ConfigError("lr_schedule: epochs are 1-based");
  if (strategy == LrStrategy::null) return base_lr;
  return base_lr * std::pow(0.5, static_cast<double>(epoch - 1));
}

Adam::Adam(std::vector<Tensor> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  for (const auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw TrainingError("adam: non-finite gradient");
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
      v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opt_.eps);
    }
  }
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (std::isfinite(norm) && norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= s;
    }
  }
  return norm;
}

std::size_t Windows::count() const {
  if (!series.defined()) return 0;
  const std::size_t n = series.size(0);
  return n < seq_len + horizon ? 0 : n - seq_len - horizon + 1;
}

Batch Windows::gather(std::span<const std::size_t> index) const {
  const std::size_t C = series.size(1), L = seq_len, T = horizon, B = index.size();
  const std::size_t n = count();
  std::vector<double> x(B * L * C), y(B * T * C), mk;
  const bool has_marks = marks.defined();
  if (has_marks) mk.resize(B * L * marks.size(1));
  const auto S = series.data();
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t i = index[b];
    if (i >= n) throw DataError("windows: index out of range");
    std::copy_n(S.begin() + static_cast<std::ptrdiff_t>(i * C), L * C, x.begin() + static_cast<std::ptrdiff_t>(b * L * C));
    std::copy_n(S.begin() + static_cast<std::ptrdiff_t>((i + L) * C), T * C, y.begin() + static_cast<std::ptrdiff_t>(b * T * C));
    if (has_marks) {
      const std::size_t F = marks.size(1);
      std::copy_n(marks.data().begin() + static_cast<std::ptrdiff_t>(i * F), L * F,
                  mk.begin() + static_cast<std::ptrdiff_t>(b * L * F));
    }
  }
  Batch out{Tensor::from_data({B, L, C}, std::move(x)), {}, Tensor::from_data({B, T, C}, std::move(y))};
  if (has_marks) out.mark = Tensor::from_data({B, L, marks.size(1)}, std::move(mk));
  return out;
}

Batch Windows::window(std::size_t i) const {
  const std::size_t idx[1] = {i};
  return gather(idx);
}

std::vector<std::size_t> spread_indices(std::size_t n, std::size_t cap) {
  std::vector<std::size_t> out;
  if (cap == 0 || cap >= n) {
    out.resize(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  for (std::size_t i = 0; i < cap; ++i) out.push_back(i * n / cap);
  return out;
}

TrainConfig train_config(const PipelineSpec& spec, std::uint64_t seed) {
  TrainConfig c;
  c.epochs = spec.epochs;
  c.loss = spec.loss;
  c.learning_rate = spec.learning_rate;
  c.lr_strategy = spec.lr_strategy;
  c.seed = seed;
  return c;
}

namespace {

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> s;
  for (const auto& p : params) s.emplace_back(p.data().begin(), p.data().end());
  return s;
}

void restore(const std::vector<Tensor>& params, const std::vector<std::vector<double>>& s) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    std::copy(s[i].begin(), s[i].end(), p.mutable_data().begin());
  }
}

Tensor mark_for(const model::ForecastModel& m, const Batch& b) { return m.uses_timestamps() ? b.mark : Tensor(); }

}  // namespace

double evaluate_loss(const model::ForecastModel& model, const Windows& set, LossKind kind, std::size_t batch_size,
                     std::size_t max_windows) {
  const auto idx = spread_indices(set.count(), max_windows);
  if (idx.empty()) throw DataError("evaluate: no windows");
  NoGradGuard guard;
  double total = 0.0;
  for (std::size_t s = 0; s < idx.size(); s += batch_size) {
    const std::size_t e = std::min(idx.size(), s + batch_size);
    const Batch b = set.gather(std::span(idx).subspan(s, e - s));
    total += loss(model.forward(b.x, mark_for(model, b)), b.y, kind).item() * static_cast<double>(e - s);
  }
  return total / static_cast<double>(idx.size());
}

Tensor predict(const model::ForecastModel& model, const Windows& set, std::span<const std::size_t> index,
               std::size_t batch_size) {
  NoGradGuard guard;
  std::vector<Tensor> parts;
  for (std::size_t s = 0; s < index.size(); s += batch_size) {
    const std::size_t e = std::min(index.size(), s + batch_size);
    const Batch b = set.gather(index.subspan(s, e - s));
    parts.push_back(model.forward(b.x, mark_for(model, b)));
  }
  if (parts.empty()) throw DataError("predict: no windows");
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

TrainResult train(model::ForecastModel& model, const Windows& train_set, const Windows& val_set,
                  const TrainConfig& cfg) {
  const std::size_t n = train_set.count();
  if (n == 0 || val_set.count() == 0) throw DataError("train: empty training or validation windows");
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw ConfigError("train: batch size and epochs must be positive");
  const auto params = model.parameters();
  Adam opt(params);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult res;
  res.best_val_loss = std::numeric_limits<double>::infinity();
  auto best = snapshot(params);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_schedule(cfg.learning_rate, epoch, cfg.lr_strategy);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    if (cfg.max_batches_per_epoch > 0) batches = std::min(batches, cfg.max_batches_per_epoch);
    double epoch_loss = 0.0;
    for (std::size_t k = 0; k < batches; ++k) {
      const std::size_t s = k * cfg.batch_size, e = std::min(n, s + cfg.batch_size);
      const Batch b = train_set.gather(std::span(order).subspan(s, e - s));
      model.zero_grad();
      const Tensor l = loss(model.forward(b.x, mark_for(model, b)), b.y, cfg.loss);
      const double lv = l.item();
      if (!std::isfinite(lv)) throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch));
      epoch_loss += lv;
      if (l.requires_grad()) {
        l.backward();
        if (cfg.clip_norm > 0.0) clip_grad_norm(params, cfg.clip_norm);
        opt.step(lr);
        ++res.steps;
      }
    }
    res.train_loss.push_back(epoch_loss / static_cast<double>(batches));
    const double val = evaluate_loss(model, val_set, cfg.loss, cfg.batch_size, cfg.max_eval_windows);
    if (!std::isfinite(val)) throw TrainingError("train: non-finite validation loss at epoch " + std::to_string(epoch));
    res.val_loss.push_back(val);
    if (val < res.best_val_loss) {
      res.best_val_loss = val;
      res.best_epoch = epoch;
      best = snapshot(params);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }
  restore(params, best);
  model.zero_grad();
  return res;
}

namespace {

std::vector<double> column(const Tensor& t, std::size_t c) {
  const std::size_t N = t.size(0), C = t.size(1);
  std::vector<double> out(N);
  for (std::size_t i = 0; i < N; ++i) out[i] = t.data()[i * C + c];
  return out;
}

double acf(std::span<const double> x, std::size_t k) {
  const double mu = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    den += (x[i] - mu) * (x[i] - mu);
    if (i + k < x.size()) num += (x[i] - mu) * (x[i + k] - mu);
  }
  return den == 0.0 ? 0.0 : num / den;
}

// Classical decomposition seasonal indices: centred moving average of order m
// (2 x m for even m), detrended ratios (or differences) averaged per position.
std::vector<double> seasonal_indices(const std::vector<double>& h, std::size_t m, bool multiplicative) {
  const std::size_t N = h.size(), k = m / 2;
  std::vector<double> sum(m, 0.0), cnt(m, 0.0);
  for (std::size_t t = k; t + k < N; ++t) {
    double ma = 0.0;
    if (m % 2 == 1) {
      for (std::size_t j = t - k; j <= t + k; ++j) ma += h[j];
    } else {
      ma = 0.5 * (h[t - k] + h[t + k]);
      for (std::size_t j = t - k + 1; j < t + k; ++j) ma += h[j];
    }
    ma /= static_cast<double>(m);
    sum[t % m] += multiplicative ? h[t] / ma : h[t] - ma;
    cnt[t % m] += 1.0;
  }
  std::vector<double> idx(m);
  for (std::size_t p = 0; p < m; ++p) idx[p] = cnt[p] > 0 ? sum[p] / cnt[p] : (multiplicative ? 1.0 : 0.0);
  const double avg = std::accumulate(idx.begin(), idx.end(), 0.0) / static_cast<double>(m);
  for (double& v : idx) v = multiplicative ? v / avg : v - avg;
  return idx;
}

}  // namespace

bool seasonality_test(std::span<const double> x, std::size_t m) {
  if (m <= 1 || x.size() <= m) return false;
  double s = 0.0;
  for (std::size_t k = 1; k < m; ++k) s += acf(x, k) * acf(x, k);
  const double limit = 1.645 * std::sqrt((1.0 + 2.0 * s) / static_cast<double>(x.size()));
  return std::abs(acf(x, m)) > limit;
}

Tensor naive2_forecast(const Tensor& history, std::size_t horizon, std::size_t m) {
  if (history.dim() != 2 || history.size(0) == 0) throw ShapeError("naive2: history must be [N, C] with N >= 1");
  const std::size_t N = history.size(0), C = history.size(1);
  std::vector<double> out(horizon * C);
  for (std::size_t c = 0; c < C; ++c) {
    const auto h = column(history, c);
    const bool seasonal = m > 1 && N >= 3 * m && seasonality_test(h, m);
    if (!seasonal) {
      for (std::size_t i = 0; i < horizon; ++i) out[i * C + c] = h.back();
      continue;
    }
    const bool mult = std::all_of(h.begin(), h.end(), [](double v) { return v > 0.0; });
    const auto idx = seasonal_indices(h, m, mult);
    const double last = mult ? h.back() / idx[(N - 1) % m] : h.back() - idx[(N - 1) % m];
    for (std::size_t i = 0; i < horizon; ++i) {
      const double s = idx[(N + i) % m];
      out[i * C + c] = mult ? last * s : last + s;
    }
  }
  return Tensor::from_data({horizon, C}, std::move(out));
}

namespace {

struct Scaled {
  double smape = 0.0;
  std::optional<double> mase;
};

Scaled scaled_errors(std::span<const double> p, std::span<const double> y, const std::vector<double>& scale,
                     std::size_t H, std::size_t C) {
  Scaled s;
  double ratio = 0.0;
  bool defined = true;
  for (std::size_t c = 0; c < C; ++c) {
    if (!(scale[c] > 0.0)) defined = false;
  }
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      const double a = p[i * C + c], b = y[i * C + c];
      const double den = std::abs(a) + std::abs(b);
      if (den > 0.0) s.smape += std::abs(a - b) / den;
      if (defined) ratio += std::abs(a - b) / scale[c];
    }
  }
  const double n = static_cast<double>(H * C);
  s.smape *= 200.0 / n;
  if (defined) s.mase = ratio / n;
  return s;
}

}  // namespace

MetricReport metrics(const Tensor& pred, const Tensor& target, const Tensor& history, std::size_t m) {
  if (pred.shape() != target.shape() || pred.dim() != 2 || pred.size(0) == 0) {
    throw ShapeError("metrics: prediction and target must both be [H, C] with H >= 1");
  }
  const std::size_t H = pred.size(0), C = pred.size(1);
  if (history.dim() != 2 || history.size(1) != C) throw ShapeError("metrics: history must be [N, C]");
  if (m == 0) throw ConfigError("metrics: periodicity must be positive");
  MetricReport r;
  r.horizon = H;
  r.periodicity = m;
  const auto p = pred.data(), y = target.data();
  double se = 0.0, ae = 0.0, pe = 0.0;
  bool mape_ok = true;
  for (std::size_t i = 0; i < H * C; ++i) {
    const double d = p[i] - y[i];
    se += d * d;
    ae += std::abs(d);
    if (y[i] == 0.0) mape_ok = false;
    else pe += std::abs(d) / std::abs(y[i]);
  }
  const double n = static_cast<double>(H * C);
  r.mse = se / n;
  r.mae = ae / n;
  if (mape_ok) r.mape = 100.0 * pe / n;

  const std::size_t N = history.size(0);
  std::vector<double> scale(C, 0.0);
  if (N > m) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t j = m; j < N; ++j) s += std::abs(history.data()[j * C + c] - history.data()[(j - m) * C + c]);
      scale[c] = s / static_cast<double>(N - m);
    }
  }
  const Scaled model = scaled_errors(p, y, scale, H, C);
  r.smape = model.smape;
  r.mase = model.mase;
  if (r.mase) {
    const Tensor base = naive2_forecast(history, H, m);
    const Scaled naive = scaled_errors(base.data(), y, scale, H, C);
    if (naive.smape > 0.0 && naive.mase && *naive.mase > 0.0) {
      r.owa = 0.5 * (r.smape / naive.smape + *r.mase / *naive.mase);
    }
  }
  return r;
}

}  // namespace tsforge::train
