#include "tsforge/meta/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"

#include "tsforge/core/ops.hpp"
#include "tsforge/error.hpp"
#include "tsforge/train/train.hpp"

namespace tsforge::meta {

namespace {

constexpr double kClip = 5.0;
constexpr double kTinyVariance = 1e-300;

double signed_log(double v) { return std::copysign(std::log1p(std::abs(v)), v); }

std::vector<std::size_t> choice_offsets() {
  const auto& space = design::DesignSpace::standard();
  std::vector<std::size_t> off;
  std::size_t acc = 0;
  for (const auto& d : space.dimensions()) {
    off.push_back(acc);
    acc += d.choices.size();
  }
  off.push_back(acc);
  return off;
}

double correlation(std::span<const double> a, std::span<const double> b) {
  return 1.0 - pearson_loss_value(a, b);
}

}  // namespace

double pearson_loss_value(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.size() < 2) throw ShapeError("pearson loss needs two equal samples of size >= 2");
  const double n = static_cast<double>(pred.size());
  const double mp = std::accumulate(pred.begin(), pred.end(), 0.0) / n;
  const double mt = std::accumulate(target.begin(), target.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - mp, b = target[i] - mt;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (std::all_of(target.begin(), target.end(), [&](double v) { return v == target[0]; })) {
    throw DomainError("pearson loss: target has zero variance");
  }
  if (sxx == 0.0) return 1.0;
  return 1.0 - sxy / (std::sqrt(sxx) * std::sqrt(syy));
}

Tensor pearson_loss(const Tensor& pred, const Tensor& target) {
  if (pred.numel() != target.numel() || pred.numel() < 2) throw ShapeError("pearson loss needs two equal samples of size >= 2");
  const auto T = target.data();
  const double n = static_cast<double>(T.size());
  const double mt = std::accumulate(T.begin(), T.end(), 0.0) / n;
  std::vector<double> tc(T.size());
  double syy = 0.0;
  for (std::size_t i = 0; i < T.size(); ++i) {
    tc[i] = T[i] - mt;
    syy += tc[i] * tc[i];
  }
  if (std::all_of(T.begin(), T.end(), [&](double v) { return v == T[0]; })) {
    throw DomainError("pearson loss: target has zero variance");
  }
  const Tensor p = reshape(pred, {pred.numel()});
  const Tensor pc = p - mean(p);
  const Tensor t = Tensor::from_data({tc.size()}, tc) * (1.0 / std::sqrt(syy));
  const Tensor num = sum(pc * t);
  const Tensor den = sqrt(sum(square(pc)) + kTinyVariance);
  return Tensor::scalar(1.0) - num / den;
}

std::vector<MetaSample> build_samples(const RankMatrix& ranks, const std::map<std::string, MetaFeatureVector>& features,
                                      std::size_t horizon, bool all_horizons) {
  const auto& space = design::DesignSpace::standard();
  std::vector<design::PipelineConfig> configs;
  for (const auto& t : ranks.config_text) configs.push_back(design::parse_config(space, t));
  std::vector<MetaSample> out;
  for (std::size_t i = 0; i < ranks.rows.size(); ++i) {
    const auto& [id, h] = ranks.rows[i];
    if (!all_horizons && h != horizon) continue;
    const auto it = features.find(id);
    if (it == features.end()) continue;
    for (std::size_t j = 0; j < configs.size(); ++j) {
      out.push_back({id, h, &it->second.values, configs[j], ranks.rank[i][j]});
    }
  }
  return out;
}

MetaPredictor::MetaPredictor(std::size_t feature_dim, const MetaOptions& options)
    : options_(options), feature_dim_(feature_dim), offsets_(choice_offsets()) {
  std::mt19937_64 rng(options.seed ^ 0x3e7aULL);
  const std::size_t in = feature_dim + (options.all_horizons ? 1 : 0);
  shift_.assign(in, 0.0);
  scale_.assign(in, 1.0);
  table_ = add_parameter("embedding", Tensor::randn({offsets_.back(), options.embedding_dim}, rng, 0.1));
  hidden_ = add_module("hidden", std::make_unique<Linear>(in + options.embedding_dim, options.hidden, rng));
  out_ = add_module("out", std::make_unique<Linear>(options.hidden, 1, rng));
}

void MetaPredictor::fit_scaler(const std::vector<const std::vector<double>*>& rows) {
  if (rows.empty()) throw DataError("fit_scaler: no rows");
  for (std::size_t f = 0; f < feature_dim_; ++f) {
    double m = 0.0, s = 0.0;
    for (const auto* r : rows) m += signed_log(r->at(f));
    m /= static_cast<double>(rows.size());
    for (const auto* r : rows) s += (signed_log(r->at(f)) - m) * (signed_log(r->at(f)) - m);
    s = std::sqrt(s / static_cast<double>(rows.size()));
    shift_[f] = m;
    scale_[f] = s > 1e-12 ? s : 1.0;
  }
}

std::vector<double> MetaPredictor::scaled(const std::vector<double>& raw, std::size_t horizon) const {
  if (raw.size() != feature_dim_) {
    throw ShapeError("meta predictor: expected " + std::to_string(feature_dim_) + " features, got " +
                     std::to_string(raw.size()));
  }
  std::vector<double> x(shift_.size());
  for (std::size_t f = 0; f < feature_dim_; ++f) {
    x[f] = std::clamp((signed_log(raw[f]) - shift_[f]) / scale_[f], -kClip, kClip);
  }
  if (options_.all_horizons) x.back() = std::log(static_cast<double>(std::max<std::size_t>(horizon, 1))) / 4.0;
  return x;
}

Tensor MetaPredictor::forward(const std::vector<const std::vector<double>*>& features,
                              std::span<const std::size_t> horizons,
                              const std::vector<design::PipelineConfig>& configs) const {
  const std::size_t B = configs.size();
  if (features.size() != B || horizons.size() != B) throw ShapeError("meta predictor: batch size mismatch");
  const std::size_t D = offsets_.size() - 1;
  const std::size_t in = shift_.size();
  std::vector<double> x;
  x.reserve(B * in);
  std::vector<std::size_t> idx;
  idx.reserve(B * D);
  for (std::size_t b = 0; b < B; ++b) {
    const auto s = scaled(*features[b], horizons[b]);
    x.insert(x.end(), s.begin(), s.end());
    if (configs[b].choices.size() != D) throw ConfigError("meta predictor: config arity mismatch");
    for (std::size_t d = 0; d < D; ++d) idx.push_back(offsets_[d] + configs[b].choices[d]);
  }
  const Tensor emb = sum(reshape(index_select(table_, 0, idx), {B, D, options_.embedding_dim}), 1);
  const Tensor h = gelu(hidden_->forward(concat({Tensor::from_data({B, in}, std::move(x)), emb}, 1)));
  return reshape(out_->forward(h), {B});
}

std::vector<double> MetaPredictor::predict(const std::vector<double>& features, std::size_t horizon,
                                           const std::vector<design::PipelineConfig>& configs) const {
  if (configs.empty()) return {};
  NoGradGuard guard;
  const std::vector<const std::vector<double>*> f(configs.size(), &features);
  const std::vector<std::size_t> h(configs.size(), horizon);
  const Tensor y = forward(f, h, configs);
  return {y.data().begin(), y.data().end()};
}

std::string MetaPredictor::to_json() const {
  nlohmann::json j;
  j["format"] = "tsforge-meta-predictor";
  j["feature_version"] = kFeatureVersion;
  j["feature_dim"] = feature_dim_;
  j["options"] = {{"embedding_dim", options_.embedding_dim}, {"hidden", options_.hidden},
                  {"epochs", options_.epochs},               {"batch_size", options_.batch_size},
                  {"learning_rate", options_.learning_rate}, {"patience", options_.patience},
                  {"resample", options_.resample},           {"all_horizons", options_.all_horizons},
                  {"seed", options_.seed}};
  j["trained"] = trained_;
  j["shift"] = shift_;
  j["scale"] = scale_;
  nlohmann::json params = nlohmann::json::object();
  for (const auto& p : named_parameters()) {
    params[p.name] = {{"shape", p.tensor.shape()},
                      {"data", std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())}};
  }
  j["parameters"] = params;
  return j.dump(1);
}

std::unique_ptr<MetaPredictor> MetaPredictor::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("meta predictor: bad JSON: ") + e.what());
  }
  if (j.value("format", "") != "tsforge-meta-predictor") throw DataError("meta predictor: unknown format");
  if (j.at("feature_version").get<int>() != kFeatureVersion) throw DataError("meta predictor: feature version mismatch");
  MetaOptions o;
  const auto& jo = j.at("options");
  o.embedding_dim = jo.at("embedding_dim");
  o.hidden = jo.at("hidden");
  o.epochs = jo.at("epochs");
  o.batch_size = jo.at("batch_size");
  o.learning_rate = jo.at("learning_rate");
  o.patience = jo.at("patience");
  o.resample = jo.at("resample");
  o.all_horizons = jo.at("all_horizons");
  o.seed = jo.at("seed");
  auto model = std::make_unique<MetaPredictor>(j.at("feature_dim").get<std::size_t>(), o);
  model->shift_ = j.at("shift").get<std::vector<double>>();
  model->scale_ = j.at("scale").get<std::vector<double>>();
  model->trained_ = j.at("trained");
  const auto& params = j.at("parameters");
  for (auto& p : model->named_parameters()) {
    if (!params.contains(p.name)) throw DataError("meta predictor: missing parameter " + p.name);
    const auto data = params[p.name].at("data").get<std::vector<double>>();
    if (data.size() != p.tensor.numel()) throw DataError("meta predictor: size mismatch for " + p.name);
    std::copy(data.begin(), data.end(), p.tensor.mutable_data().begin());
  }
  return model;
}

MetaTrainResult train_meta(MetaPredictor& model, const std::vector<MetaSample>& samples) {
  const MetaOptions& opt = model.options();
  std::set<std::string> group_set;
  for (const auto& s : samples) group_set.insert(s.group);
  if (group_set.size() < 2) throw DataError("train_meta: need at least 2 training datasets");
  {
    const double t0 = samples.front().target;
    if (std::all_of(samples.begin(), samples.end(), [&](const auto& s) { return s.target == t0; })) {
      throw TrainingError("train_meta: all targets are equal (zero rank variance), Pearson loss undefined");
    }
  }
  std::mt19937_64 rng(opt.seed ^ 0x7a11ULL);
  const std::vector<std::string> groups(group_set.begin(), group_set.end());

  std::vector<std::size_t> tr, va;
  if (groups.size() >= 3) {
    const std::string& held = groups[opt.seed % groups.size()];
    for (std::size_t i = 0; i < samples.size(); ++i) (samples[i].group == held ? va : tr).push_back(i);
  } else {
    std::vector<std::size_t> all(samples.size());
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    const std::size_t nv = std::max<std::size_t>(2, samples.size() / 5);
    va.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(nv));
    tr.assign(all.begin() + static_cast<std::ptrdiff_t>(nv), all.end());
  }
  if (opt.resample) {
    std::map<std::string, std::vector<std::size_t>> by;
    for (auto i : tr) by[samples[i].group].push_back(i);
    std::size_t lo = tr.size();
    for (const auto& [g, v] : by) lo = std::min(lo, v.size());
    tr.clear();
    for (auto& [g, v] : by) {
      std::shuffle(v.begin(), v.end(), rng);
      tr.insert(tr.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo));
    }
    std::sort(tr.begin(), tr.end());
  }

  std::vector<const std::vector<double>*> feats;
  for (auto i : tr) feats.push_back(samples[i].features);
  model.fit_scaler(feats);

  auto run = [&](std::span<const std::size_t> idx) {
    std::vector<const std::vector<double>*> f;
    std::vector<std::size_t> h;
    std::vector<design::PipelineConfig> c;
    std::vector<double> t;
    for (auto i : idx) {
      f.push_back(samples[i].features);
      h.push_back(samples[i].horizon);
      c.push_back(samples[i].config);
      t.push_back(samples[i].target);
    }
    const std::size_t n = t.size();
    return std::make_pair(model.forward(f, h, c), Tensor::from_data({n}, std::move(t)));
  };
  auto eval = [&](std::span<const std::size_t> idx) {
    NoGradGuard guard;
    auto [p, t] = run(idx);
    try {
      return pearson_loss_value(p.data(), t.data());
    } catch (const DomainError&) {
      return 1.0;
    }
  };

  auto params = model.parameters();
  train::Adam adam(params);
  MetaTrainResult res;
  res.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best;
  std::size_t since = 0;
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(tr.begin(), tr.end(), rng);
    for (std::size_t s = 0; s < tr.size(); s += opt.batch_size) {
      const std::span<const std::size_t> batch(tr.data() + s, std::min(opt.batch_size, tr.size() - s));
      if (batch.size() < 2) continue;
      model.zero_grad();
      auto [p, t] = run(batch);
      Tensor loss;
      try {
        loss = pearson_loss(p, t);
      } catch (const DomainError&) {
        ++res.skipped_batches;
        continue;
      }
      loss.backward();
      adam.step(opt.learning_rate);
    }
    res.epochs = epoch;
    const double v = eval(va);
    if (v < res.best_val_loss) {
      res.best_val_loss = v;
      res.best_epoch = epoch;
      best.clear();
      for (const auto& p : params) best.emplace_back(p.data().begin(), p.data().end());
      since = 0;
    } else if (++since >= opt.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < params.size() && !best.empty(); ++i) {
    std::copy(best[i].begin(), best[i].end(), params[i].mutable_data().begin());
  }
  {
    NoGradGuard guard;
    auto [p, t] = run(tr);
    try {
      res.train_correlation = correlation(p.data(), t.data());
    } catch (const DomainError&) {
      res.train_correlation = 0.0;
    }
  }
  model.mark_trained();
  return res;
}

std::vector<Recommendation> recommend(const MetaPredictor& model, const std::vector<double>& features,
                                      std::size_t horizon, const std::vector<design::PipelineConfig>& candidates,
                                      std::size_t k) {
  if (!model.trained()) throw ConfigError("recommend: meta predictor is not trained");
  const auto& space = design::DesignSpace::standard();
  const auto& rules = design::default_rules();
  for (const auto& c : candidates) {
    if (!design::is_valid(space, rules, c)) throw ConfigError("recommend: invalid candidate " + design::compact_text(space, c));
  }
  const auto scores = model.predict(features, horizon, candidates);
  std::vector<Recommendation> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out.push_back({candidates[i], design::config_hash(space, candidates[i]), scores[i]});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score < b.score : a.hash < b.hash;
  });
  out.resize(std::min(k, out.size()));
  return out;
}

}  // namespace tsforge::meta
