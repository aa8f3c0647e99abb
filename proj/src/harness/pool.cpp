#include "tsforge/harness/pool.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "tsforge/core/ops.hpp"
#include "tsforge/error.hpp"
#include "tsforge/model/forecaster.hpp"

namespace tsforge::harness {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Training allocates and frees many large activation buffers; keeping them on
// the heap instead of fresh mmap pages avoids a page-fault storm per step.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)done;
#endif
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

double parse_num(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw DataError("ledger: bad number '" + s + "'");
  return v;
}

std::optional<double> parse_opt(const std::string& s) {
  if (s == "NA") return std::nullopt;
  return parse_num(s);
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == '\t') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace

std::uint64_t cell_seed(std::uint64_t global_seed, const std::string& dataset_id, std::uint64_t config_hash,
                        std::size_t horizon) {
  const std::string text = std::to_string(global_seed) + "|" + dataset_id + "|" + design::hash_hex(config_hash) + "|" +
                           std::to_string(horizon);
  return design::fnv1a64(text);
}

std::size_t effective_batch(const PipelineSpec& spec, std::size_t channels, const Budget& budget) {
  if (budget.max_attention_cells == 0 || spec.network != NetworkType::transformer) return budget.batch_size;
  const bool ci = spec.channel_independent;
  const std::size_t n = enc::token_count(spec.embedding, spec.seq_len, ci ? 1 : channels, spec.timestamps);
  const std::size_t cost = (ci ? channels : 1) * nn::kHeads * n * n;
  return std::clamp<std::size_t>(budget.max_attention_cells / cost, 1, budget.batch_size);
}

namespace {

// Undo the train-split standardization of a [..., C] array.
Tensor restore_scale(const Tensor& x, const Dataset& data) {
  std::vector<double> v(x.data().begin(), x.data().end());
  const std::size_t C = data.channels();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = v[i] * data.stddev[i % C] + data.mean[i % C];
  return Tensor::from_data(x.shape(), std::move(v));
}

}  // namespace

ExperimentRecord run_cell(const Dataset& data, const design::PipelineConfig& config, std::size_t horizon,
                          std::uint64_t seed, const Budget& budget, bool inject_nan) {
  tune_allocator();
  const auto& space = design::DesignSpace::standard();
  ExperimentRecord rec;
  rec.key = {data.id, design::config_hash(space, config), horizon, seed};
  rec.config_text = design::compact_text(space, config);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const PipelineSpec spec = design::to_spec(config);
    model::Forecaster model(spec, {.channels = data.channels(), .horizon = horizon, .seed = seed,
                                   .width_divisor = budget.width_divisor});
    if (inject_nan) {
      auto params = model.parameters();
      if (!params.empty()) params.front().mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    }
    const auto tr = data.windows(Split::train, spec.seq_len, horizon);
    const auto va = data.windows(Split::val, spec.seq_len, horizon);
    const auto te = data.windows(Split::test, spec.seq_len, horizon);
    train::TrainConfig cfg = train::train_config(spec, seed ^ 0x5eedULL);
    if (budget.max_epochs > 0) cfg.epochs = std::min(cfg.epochs, budget.max_epochs);
    cfg.batch_size = effective_batch(spec, data.channels(), budget);
    cfg.patience = budget.patience;
    cfg.max_batches_per_epoch = budget.max_batches_per_epoch;
    cfg.max_eval_windows = budget.max_eval_windows;
    const auto result = train::train(model, tr, va, cfg);
    rec.val_loss = result.best_val_loss;
    rec.epochs = result.val_loss.size();

    const auto idx = train::spread_indices(te.count(), budget.max_test_windows);
    Tensor pred = train::predict(model, te, idx, cfg.batch_size);
    auto batch = te.gather(idx);
    if (!all_finite(pred)) throw TrainingError("non-finite forecast");
    if (budget.denormalize) {
      pred = restore_scale(pred, data);
      batch.y = restore_scale(batch.y, data);
      batch.x = restore_scale(batch.x, data);
    }
    const std::size_t n = idx.size(), T = horizon, C = data.channels(), L = spec.seq_len;
    const auto P = pred.data(), Y = batch.y.data();
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
      se += (P[i] - Y[i]) * (P[i] - Y[i]);
      ae += std::abs(P[i] - Y[i]);
    }
    rec.mse = se / static_cast<double>(P.size());
    rec.mae = ae / static_cast<double>(P.size());
    // Scale-dependent metrics per window (history = the look-back), averaged.
    double smape = 0.0, mape = 0.0, mase = 0.0, owa = 0.0;
    std::size_t n_mape = 0, n_mase = 0, n_owa = 0;
    for (std::size_t w = 0; w < n; ++w) {
      const auto r = train::metrics(reshape(slice(pred, 0, w, 1), {T, C}), reshape(slice(batch.y, 0, w, 1), {T, C}),
                                    reshape(slice(batch.x, 0, w, 1), {L, C}), data.periodicity);
      smape += r.smape;
      if (r.mape) mape += *r.mape, ++n_mape;
      if (r.mase) mase += *r.mase, ++n_mase;
      if (r.owa) owa += *r.owa, ++n_owa;
    }
    rec.smape = smape / static_cast<double>(n);
    if (n_mape == n) rec.mape = mape / static_cast<double>(n);
    if (n_mase > 0) rec.mase = mase / static_cast<double>(n_mase);
    if (n_owa > 0) rec.owa = owa / static_cast<double>(n_owa);
  } catch (const std::exception& e) {
    rec.status = Status::failed;
    rec.mse = rec.mae = rec.smape = rec.val_loss = 0.0;
    rec.mape = rec.mase = rec.owa = std::nullopt;
    rec.error = sanitize(e.what());
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

const std::string& Ledger::header() {
  static const std::string h =
      "dataset_id\tconfig_hash\thorizon\tseed\tstatus\tmse\tmae\tsmape\tmape\tmase\towa\tval_loss\tepochs\terror\tconfig";
  return h;
}

std::string Ledger::format(const ExperimentRecord& r) {
  const bool ok = r.status == Status::ok;
  std::ostringstream s;
  s << r.key.dataset_id << '\t' << design::hash_hex(r.key.config_hash) << '\t' << r.key.horizon << '\t'
    << r.key.seed << '\t' << (ok ? "ok" : "failed") << '\t' << (ok ? num(r.mse) : "NA") << '\t'
    << (ok ? num(r.mae) : "NA") << '\t' << (ok ? num(r.smape) : "NA") << '\t' << opt_num(r.mape) << '\t'
    << opt_num(r.mase) << '\t' << opt_num(r.owa) << '\t' << (ok ? num(r.val_loss) : "NA") << '\t' << r.epochs
    << '\t' << (r.error.empty() ? "-" : sanitize(r.error)) << '\t' << r.config_text;
  return s.str();
}

ExperimentRecord Ledger::parse(const std::string& line) {
  const auto f = split_tabs(line);
  if (f.size() != 15) throw DataError("ledger: expected 15 fields, got " + std::to_string(f.size()));
  ExperimentRecord r;
  r.key.dataset_id = f[0];
  r.key.config_hash = std::stoull(f[1], nullptr, 16);
  r.key.horizon = std::stoul(f[2]);
  r.key.seed = std::stoull(f[3]);
  if (f[4] != "ok" && f[4] != "failed") throw DataError("ledger: bad status '" + f[4] + "'");
  r.status = f[4] == "ok" ? Status::ok : Status::failed;
  if (r.status == Status::ok) {
    r.mse = parse_num(f[5]);
    r.mae = parse_num(f[6]);
    r.smape = parse_num(f[7]);
    r.val_loss = parse_num(f[11]);
  }
  r.mape = parse_opt(f[8]);
  r.mase = parse_opt(f[9]);
  r.owa = parse_opt(f[10]);
  r.epochs = std::stoul(f[12]);
  r.error = f[13] == "-" ? "" : f[13];
  r.config_text = f[14];
  return r;
}

Ledger::Ledger(std::string path) : path_(std::move(path)) {
  if (path_.empty()) return;
  namespace fs = std::filesystem;
  if (!fs::exists(path_) || fs::file_size(path_) == 0) {
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot create ledger " + path_);
    out << header() << '\n';
    return;
  }
  std::string text;
  {
    std::ifstream in(path_, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  const std::size_t last_nl = text.rfind('\n');
  if (last_nl == std::string::npos) {
    // Not even a complete header: start over.
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    out << header() << '\n';
    return;
  }
  if (last_nl + 1 != text.size()) {
    text.resize(last_nl + 1);
    fs::resize_file(path_, text.size());
  }
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != header()) throw DataError("ledger " + path_ + ": unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ExperimentRecord r = parse(line);
    if (!keys_.insert(r.key).second) throw DataError("ledger " + path_ + ": duplicate key for " + r.key.dataset_id);
    records_.push_back(std::move(r));
  }
}

void Ledger::append(const ExperimentRecord& r) {
  if (keys_.count(r.key)) throw DataError("ledger: duplicate key " + r.key.dataset_id + "/" + design::hash_hex(r.key.config_hash));
  if (!path_.empty()) {
    const std::string row = format(r) + "\n";
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
    out.flush();
    if (!out) throw DataError("ledger: write failed for " + path_);
    std::ofstream timing(path_ + ".timing", std::ios::binary | std::ios::app);
    timing << r.key.dataset_id << '\t' << design::hash_hex(r.key.config_hash) << '\t' << r.key.horizon << '\t'
           << r.key.seed << '\t' << num(r.wall_seconds) << '\n';
  }
  keys_.insert(r.key);
  records_.push_back(r);
}

std::vector<ExperimentRecord> read_ledger(const std::string& path) {
  if (!std::filesystem::exists(path)) throw DataError("no ledger at " + path);
  return Ledger(path).records();
}

std::size_t PerformanceMatrix::row_of(const std::string& dataset_id, std::size_t horizon) const {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first == dataset_id && rows[i].second == horizon) return i;
  }
  throw DataError("performance matrix: no row for " + dataset_id + " horizon " + std::to_string(horizon));
}

std::size_t PerformanceMatrix::column_of(std::uint64_t config_hash) const {
  const auto it = std::find(configs.begin(), configs.end(), config_hash);
  if (it == configs.end()) throw DataError("performance matrix: unknown config " + design::hash_hex(config_hash));
  return static_cast<std::size_t>(it - configs.begin());
}

PerformanceMatrix performance_matrix(const std::vector<ExperimentRecord>& records) {
  PerformanceMatrix pm;
  std::map<std::pair<std::string, std::size_t>, std::size_t> row_index;
  std::map<std::uint64_t, std::size_t> col_index;
  for (const auto& r : records) {
    const auto rk = std::make_pair(r.key.dataset_id, r.key.horizon);
    if (!row_index.count(rk)) {
      row_index[rk] = pm.rows.size();
      pm.rows.push_back(rk);
    }
    if (!col_index.count(r.key.config_hash)) {
      col_index[r.key.config_hash] = pm.configs.size();
      pm.configs.push_back(r.key.config_hash);
      pm.config_text.push_back(r.config_text);
    }
  }
  const double inf = std::numeric_limits<double>::infinity();
  pm.mse.assign(pm.rows.size(), std::vector<double>(pm.configs.size(), inf));
  for (const auto& r : records) {
    if (r.status != Status::ok || !std::isfinite(r.mse)) continue;
    pm.mse[row_index[{r.key.dataset_id, r.key.horizon}]][col_index[r.key.config_hash]] = r.mse;
  }
  return pm;
}

PoolResult run_pool(const std::vector<DatasetSpec>& datasets, const std::vector<design::PipelineConfig>& configs,
                    const std::vector<std::size_t>& horizons, const PoolOptions& options) {
  const auto& space = design::DesignSpace::standard();
  const auto& rules = design::default_rules();
  for (const auto& c : configs) {
    if (!design::is_valid(space, rules, c)) {
      throw ConfigError("run_pool: invalid config " + design::compact_text(space, c));
    }
  }
  std::vector<Dataset> data;
  for (const auto& d : datasets) data.push_back(ingest(d));

  struct Cell {
    std::size_t dataset, config, horizon;
    CellKey key;
  };
  std::vector<Cell> cells;
  std::set<CellKey> wanted;
  for (std::size_t d = 0; d < data.size(); ++d) {
    for (std::size_t h : horizons) {
      for (std::size_t c = 0; c < configs.size(); ++c) {
        const std::uint64_t hash = design::config_hash(space, configs[c]);
        Cell cell{d, c, h, {data[d].id, hash, h, cell_seed(options.seed, data[d].id, hash, h)}};
        if (!wanted.insert(cell.key).second) continue;  // duplicate config in the list
        cells.push_back(cell);
      }
    }
  }

  Ledger ledger(options.ledger_path);
  PoolResult res;
  std::vector<char> existing(cells.size(), 0);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (ledger.contains(cells[i].key)) {
      existing[i] = 1;
      ++res.skipped;
    }
  }

  std::mutex mu;
  std::map<std::size_t, ExperimentRecord> done;
  std::size_t commit = 0;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  auto flush = [&] {
    while (commit < cells.size() && !stop) {
      if (existing[commit]) {
        ++commit;
        continue;
      }
      auto it = done.find(commit);
      if (it == done.end()) break;
      ledger.append(it->second);
      ++res.ran;
      if (it->second.status == Status::failed) ++res.failed;
      if (options.on_commit) options.on_commit(it->second);
      done.erase(it);
      ++commit;
      if (options.stop_after > 0 && res.ran >= options.stop_after && commit < cells.size()) {
        stop = true;
        res.interrupted = true;
      }
    }
  };
  auto worker = [&] {
    for (;;) {
      if (stop) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      if (existing[i]) continue;
      const Cell& cell = cells[i];
      const bool inject = options.inject_failure && options.inject_failure(cell.key);
      ExperimentRecord rec =
          run_cell(data[cell.dataset], configs[cell.config], cell.horizon, cell.key.seed, options.budget, inject);
      std::lock_guard lock(mu);
      done.emplace(i, std::move(rec));
      flush();
    }
  };
  {
    std::lock_guard lock(mu);
    flush();
  }
  const std::size_t jobs = std::max<std::size_t>(1, options.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }

  std::vector<ExperimentRecord> mine;
  for (const auto& r : ledger.records()) {
    if (wanted.count(r.key)) mine.push_back(r);
  }
  res.matrix = performance_matrix(mine);
  return res;
}

}  // namespace tsforge::harness
