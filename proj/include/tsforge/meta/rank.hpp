#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tsforge/harness/pool.hpp"

namespace tsforge::meta {

/// Average ranks of one row divided by its length: the smallest value maps to
/// 1/m, ties share the mean of their ranks. +inf (failed) ranks last.
std::vector<double> rank_row(std::span<const double> values);

/// Row-normalized ranks of a performance matrix; smaller is better.
struct RankMatrix {
  std::vector<std::pair<std::string, std::size_t>> rows;  // (dataset_id, horizon)
  std::vector<std::uint64_t> configs;
  std::vector<std::string> config_text;
  std::vector<std::vector<double>> rank;
};

RankMatrix rank_normalize(const harness::PerformanceMatrix& pm);

/// One line per ledger cell: dataset_id, config_hash, horizon, mse, mae, rank.
void write_rank_table(std::ostream& out, const std::vector<harness::ExperimentRecord>& records);

}  // namespace tsforge::meta
