#include "tsforge/harness/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <tuple>

#include "tsforge/error.hpp"

namespace tsforge::harness {

double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw DataError("percentile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("percentile: p must lie in [0, 1]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

Grouping parse_grouping(std::string_view name) {
  if (name == "dataset_horizon") return Grouping::dataset_horizon;
  if (name == "dataset") return Grouping::dataset;
  if (name == "all") return Grouping::all;
  throw ConfigError("unknown grouping '" + std::string(name) + "' (dataset_horizon, dataset, all)");
}

Report build_report(const std::vector<ExperimentRecord>& records, Grouping grouping) {
  if (records.empty()) throw DataError("report: ledger is empty");
  const auto& space = design::DesignSpace::standard();

  struct Bucket {
    std::vector<double> mse;
    std::size_t failed = 0;
  };
  // (dataset, horizon, dimension index, choice index)
  using Key = std::tuple<std::string, std::string, std::size_t, std::size_t>;
  std::map<Key, Bucket> buckets;
  std::map<std::pair<std::string, std::string>, bool> groups;

  for (const auto& r : records) {
    const auto config = design::parse_config(space, r.config_text);
    std::string ds = "*", hz = "*";
    if (grouping != Grouping::all) ds = r.key.dataset_id;
    if (grouping == Grouping::dataset_horizon) hz = std::to_string(r.key.horizon);
    groups.emplace(std::make_pair(ds, hz), true);
    const bool ok = r.status == Status::ok && std::isfinite(r.mse);
    for (std::size_t d = 0; d < space.size(); ++d) {
      auto& b = buckets[{ds, hz, d, config.choices[d]}];
      if (ok) {
        b.mse.push_back(r.mse);
      } else {
        ++b.failed;
      }
    }
  }

  Report rep;
  for (const auto& [g, _] : groups) {
    for (std::size_t d = 0; d < space.size(); ++d) {
      for (std::size_t c = 0; c < space[d].choices.size(); ++c) {
        const auto it = buckets.find({g.first, g.second, d, c});
        if (it == buckets.end()) continue;  // choice never sampled in this group
        const Bucket& b = it->second;
        if (b.mse.empty()) {
          rep.notices.push_back("omitted " + g.first + "/" + g.second + " " + space[d].key + "=" +
                                space[d].choices[c] + ": no successful cells (" + std::to_string(b.failed) +
                                " failed)");
          continue;
        }
        ChoiceSummary s;
        s.dataset_id = g.first;
        s.horizon = g.second;
        s.dimension = space[d].key;
        s.choice = space[d].choices[c];
        s.count = b.mse.size();
        s.failed = b.failed;
        s.best = *std::min_element(b.mse.begin(), b.mse.end());
        s.q25 = percentile(b.mse, 0.25);
        s.median = percentile(b.mse, 0.5);
        s.q75 = percentile(b.mse, 0.75);
        s.iqr = s.q75 - s.q25;
        rep.rows.push_back(std::move(s));
      }
    }
  }
  return rep;
}

const std::string& report_header() {
  static const std::string h = "dataset_id\thorizon\tdimension\tchoice\tcount\tfailed\tbest\tq25\tmedian\tq75\tiqr";
  return h;
}

void write_report(std::ostream& out, const Report& report) {
  out << report_header() << '\n';
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& s : report.rows) {
    out << s.dataset_id << '\t' << s.horizon << '\t' << s.dimension << '\t' << s.choice << '\t' << s.count << '\t'
        << s.failed << '\t' << num(s.best) << '\t' << num(s.q25) << '\t' << num(s.median) << '\t' << num(s.q75)
        << '\t' << num(s.iqr) << '\n';
  }
}

}  // namespace tsforge::harness
