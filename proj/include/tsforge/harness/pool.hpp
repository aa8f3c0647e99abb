#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "tsforge/design/space.hpp"
#include "tsforge/harness/data.hpp"

namespace tsforge::harness {

/// Desk-scale compute caps applied to every training run. Zero disables a cap.
struct Budget {
  std::size_t width_divisor = 8;
  std::size_t max_epochs = 0;
  std::size_t max_batches_per_epoch = 0;
  std::size_t max_eval_windows = 0;
  std::size_t max_test_windows = 0;
  std::size_t batch_size = train::kDefaultBatch;
  std::size_t patience = train::kDefaultPatience;
  // Upper bound on attention score entries (rows x heads x n^2) per batch;
  // transformer batches shrink to fit, down to one sample.
  std::size_t max_attention_cells = 0;
  // Score forecasts on the original data scale instead of the standardized one.
  bool denormalize = false;

  /// Caps sized so a 6 x 64 x 1 grid trains in well under an hour on one core.
  static Budget desk() {
    Budget b;
    b.max_epochs = 3;
    b.max_batches_per_epoch = 6;
    b.max_eval_windows = 32;
    b.max_test_windows = 64;
    b.max_attention_cells = std::size_t{1} << 20;
    return b;
  }
};

/// Batch size for `spec` under the budget's attention cap.
std::size_t effective_batch(const PipelineSpec& spec, std::size_t channels, const Budget& budget);

struct CellKey {
  std::string dataset_id;
  std::uint64_t config_hash = 0;
  std::size_t horizon = 0;
  std::uint64_t seed = 0;
  friend auto operator<=>(const CellKey&, const CellKey&) = default;
  friend bool operator==(const CellKey&, const CellKey&) = default;
};

enum class Status { ok, failed };

struct ExperimentRecord {
  CellKey key;
  std::string config_text;  // compact canonical form
  Status status = Status::ok;
  double mse = 0.0, mae = 0.0, smape = 0.0;
  std::optional<double> mape, mase, owa;
  double val_loss = 0.0;
  std::size_t epochs = 0;
  std::string error;
  double wall_seconds = 0.0;  // kept out of the ledger text (see Ledger)
};

/// Seed of one (dataset, config, horizon) cell under a global seed.
std::uint64_t cell_seed(std::uint64_t global_seed, const std::string& dataset_id, std::uint64_t config_hash,
                        std::size_t horizon);

/// Trains and evaluates one configuration on one dataset. Never throws for
/// model or training failures: those come back with status failed.
ExperimentRecord run_cell(const Dataset& data, const design::PipelineConfig& config, std::size_t horizon,
                          std::uint64_t seed, const Budget& budget, bool inject_nan = false);

/// Append-only tab-separated results file with a header row. The primary key
/// (dataset_id, config_hash, horizon, seed) is unique. Wall times go to a
/// sibling ".timing" file so the ledger itself is reproducible byte for byte.
class Ledger {
 public:
  static const std::string& header();
  static std::string format(const ExperimentRecord& r);
  static ExperimentRecord parse(const std::string& line);

  /// Opens or creates the ledger; an incomplete trailing row is discarded.
  explicit Ledger(std::string path);
  bool contains(const CellKey& key) const { return keys_.count(key) > 0; }
  /// Throws DataError on a duplicate key.
  void append(const ExperimentRecord& r);
  const std::vector<ExperimentRecord>& records() const { return records_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<ExperimentRecord> records_;
  std::set<CellKey> keys_;
};

std::vector<ExperimentRecord> read_ledger(const std::string& path);

/// MSE per (dataset, horizon) row and configuration column. Failed or missing
/// cells hold +infinity.
struct PerformanceMatrix {
  std::vector<std::pair<std::string, std::size_t>> rows;  // (dataset_id, horizon)
  std::vector<std::uint64_t> configs;
  std::vector<std::string> config_text;
  std::vector<std::vector<double>> mse;

  std::size_t row_of(const std::string& dataset_id, std::size_t horizon) const;
  std::size_t column_of(std::uint64_t config_hash) const;
};

PerformanceMatrix performance_matrix(const std::vector<ExperimentRecord>& records);

struct PoolOptions {
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
  std::string ledger_path;
  Budget budget;
  // Test hooks: force a cell to diverge; stop after this many newly committed cells.
  std::function<bool(const CellKey&)> inject_failure;
  std::size_t stop_after = 0;
  std::function<void(const ExperimentRecord&)> on_commit;
};

struct PoolResult {
  PerformanceMatrix matrix;
  std::size_t ran = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  bool interrupted = false;
};

/// Runs every (dataset, config, horizon) cell not yet in the ledger on a
/// bounded worker pool. Rows are committed in cell order, so an interrupted
/// ledger is always a prefix of the complete one.
PoolResult run_pool(const std::vector<DatasetSpec>& datasets, const std::vector<design::PipelineConfig>& configs,
                    const std::vector<std::size_t>& horizons, const PoolOptions& options);

}  // namespace tsforge::harness
