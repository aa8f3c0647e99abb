#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tsforge/harness/pool.hpp"

namespace tsforge::harness {

/// Linear-interpolation percentile (p in [0, 1]) of unsorted values: the value
/// at fractional position p * (n - 1) of the sorted sample.
double percentile(std::span<const double> values, double p);

enum class Grouping { dataset_horizon, dataset, all };

Grouping parse_grouping(std::string_view name);

/// MSE summary of the configurations that share one design choice.
struct ChoiceSummary {
  std::string dataset_id = "*";  // "*" when pooled
  std::string horizon = "*";
  std::string dimension;
  std::string choice;
  std::size_t count = 0;
  std::size_t failed = 0;
  double best = 0.0, q25 = 0.0, median = 0.0, q75 = 0.0, iqr = 0.0;
};

struct Report {
  std::vector<ChoiceSummary> rows;
  std::vector<std::string> notices;  // groups omitted because no successful cell fell in them
};

/// Per design dimension and choice statistics of the successful cells.
/// Throws DataError on an empty ledger.
Report build_report(const std::vector<ExperimentRecord>& records, Grouping grouping);

void write_report(std::ostream& out, const Report& report);
const std::string& report_header();

}  // namespace tsforge::harness
