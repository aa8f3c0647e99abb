#include "tsforge/meta/rank.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "tsforge/error.hpp"

namespace tsforge::meta {

std::vector<double> rank_row(std::span<const double> values) {
  const std::size_t m = values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  for (double v : values) {
    if (std::isnan(v)) throw DomainError("rank_row: NaN entry");
  }
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m;) {
    std::size_t j = i;
    while (j + 1 < m && values[order[j + 1]] == values[order[i]]) ++j;
    // 1-based ranks i+1 .. j+1 share their mean.
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = r / static_cast<double>(m);
    i = j + 1;
  }
  return out;
}

RankMatrix rank_normalize(const harness::PerformanceMatrix& pm) {
  RankMatrix r;
  r.rows = pm.rows;
  r.configs = pm.configs;
  r.config_text = pm.config_text;
  for (const auto& row : pm.mse) r.rank.push_back(rank_row(row));
  return r;
}

void write_rank_table(std::ostream& out, const std::vector<harness::ExperimentRecord>& records) {
  const auto pm = harness::performance_matrix(records);
  const auto rm = rank_normalize(pm);
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "dataset_id\tconfig_hash\thorizon\tmse\tmae\trank\n";
  for (const auto& rec : records) {
    const std::size_t i = pm.row_of(rec.key.dataset_id, rec.key.horizon);
    const std::size_t j = pm.column_of(rec.key.config_hash);
    const bool ok = rec.status == harness::Status::ok;
    out << rec.key.dataset_id << '\t' << design::hash_hex(rec.key.config_hash) << '\t' << rec.key.horizon << '\t'
        << (ok ? num(rec.mse) : "NA") << '\t' << (ok ? num(rec.mae) : "NA") << '\t' << num(rm.rank[i][j]) << '\n';
  }
}

}  // namespace tsforge::meta
