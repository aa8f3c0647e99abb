#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tsforge/core/tensor.hpp"
#include "tsforge/enc/encoding.hpp"
#include "tsforge/train/train.hpp"

namespace tsforge::harness {

/// A multivariate series with one timestamp per row.
struct SeriesData {
  std::vector<std::string> columns;
  std::vector<std::int64_t> times;  // seconds since the Unix epoch, strictly increasing
  Tensor values;                    // [N, C]
};

enum class Family { sin_trend, ar2_season, level_shift, correlated, random_walk, heteroskedastic };

std::string_view to_string(Family f);
Family parse_family(std::string_view name);
const std::vector<Family>& all_families();

inline constexpr std::size_t kSyntheticLength = 2000;
inline constexpr std::size_t kSyntheticPeriod = 24;

/// Deterministic synthetic series: hourly stamps from 2020-01-01, daily (24-step) seasonality.
SeriesData synthesize(Family family, std::size_t length, std::size_t channels, std::uint64_t seed);

/// Parses "YYYY-MM-DD", "YYYY-MM-DD HH:MM[:SS]" or "YYYY-MM-DDTHH:MM[:SS]" (UTC).
std::int64_t parse_timestamp(std::string_view text);
enc::CalendarStamp calendar(std::int64_t seconds);
/// [N, 4] calendar features of the stamps.
Tensor time_marks(const std::vector<std::int64_t>& times);

/// Reads a delimiter-separated file: header row, ISO-8601 timestamp first,
/// numeric columns after. Rejects non-monotone or gapped timestamps.
SeriesData read_series(const std::string& path, char delimiter = ',');
SeriesData parse_series(std::string_view text, char delimiter = ',');
void write_series(const std::string& path, const SeriesData& data, char delimiter = ',');

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct SyntheticSource {
  Family family = Family::sin_trend;
  std::size_t length = kSyntheticLength;
  std::size_t channels = 3;
  std::uint64_t seed = 0;
};

struct DatasetSpec {
  std::string id;
  std::optional<std::string> path;          // file source
  std::optional<SyntheticSource> synthetic;  // generator source
  std::string frequency = "h";
  std::size_t periodicity = kSyntheticPeriod;
  SplitRatios ratios;
};

enum class Split { train, val, test };

/// A dataset standardized with train-split statistics.
struct Dataset {
  std::string id;
  std::size_t periodicity = 1;
  Tensor values;  // [N, C], standardized
  Tensor marks;   // [N, 4]
  std::vector<double> mean, stddev;
  std::size_t train_end = 0, val_end = 0;

  std::size_t channels() const { return values.size(1); }
  std::size_t length() const { return values.size(0); }
  /// Rows of one split (no context).
  Tensor split_values(Split s) const;
  /// Windows whose targets lie in split `s`; val and test windows draw their
  /// look-back from the rows before the split.
  train::Windows windows(Split s, std::size_t seq_len, std::size_t horizon) const;
};

Dataset ingest(const DatasetSpec& spec);

/// Stride-1 windows over one array ([N, C] values, [N, 4] marks or undefined).
train::Windows make_windows(const Tensor& values, const Tensor& marks, std::size_t seq_len, std::size_t horizon);

/// Six synthetic datasets, one per family, with C alternating 3 and 7.
std::vector<DatasetSpec> synthetic_suite(std::uint64_t seed, std::size_t length = kSyntheticLength);

}  // namespace tsforge::harness
