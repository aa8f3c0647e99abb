#include "tsforge/harness/data.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "tsforge/core/ops.hpp"
#include "tsforge/error.hpp"

namespace tsforge::harness {

namespace {

constexpr std::int64_t kEpoch2020 = 1577836800;  // 2020-01-01T00:00:00Z

constexpr std::pair<Family, std::string_view> kFamilyNames[] = {
    {Family::sin_trend, "sin_trend"},   {Family::ar2_season, "ar2_season"},
    {Family::level_shift, "level_shift"}, {Family::correlated, "correlated"},
    {Family::random_walk, "random_walk"}, {Family::heteroskedastic, "heteroskedastic"},
};

std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string> split_fields(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == delim) {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(Family f) {
  for (const auto& [k, v] : kFamilyNames) {
    if (k == f) return v;
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  for (const auto& [k, v] : kFamilyNames) {
    if (v == name) return k;
  }
  throw ConfigError("unknown synthetic family: " + std::string(name));
}

const std::vector<Family>& all_families() {
  static const std::vector<Family> f{Family::sin_trend,  Family::ar2_season,  Family::level_shift,
                                     Family::correlated, Family::random_walk, Family::heteroskedastic};
  return f;
}

SeriesData synthesize(Family family, std::size_t length, std::size_t channels, std::uint64_t seed) {
  if (length == 0 || channels == 0) throw ConfigError("synthesize: empty series requested");
  std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(family) + 1)));
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const std::size_t N = length, C = channels;
  const double P = static_cast<double>(kSyntheticPeriod);
  const double two_pi = 2.0 * M_PI;
  std::vector<double> v(N * C, 0.0);
  std::vector<double> phase(C), amp(C);
  for (std::size_t c = 0; c < C; ++c) {
    phase[c] = two_pi * ud(rng);
    amp[c] = 0.5 + ud(rng);
  }
  auto season = [&](std::size_t t, std::size_t c) { return amp[c] * std::sin(two_pi * static_cast<double>(t) / P + phase[c]); };

  switch (family) {
    case Family::sin_trend:
      for (std::size_t c = 0; c < C; ++c) {
        const double slope = (ud(rng) - 0.5) * 4.0 / static_cast<double>(N);
        const double weekly = 0.3 * ud(rng);
        for (std::size_t t = 0; t < N; ++t) {
          v[t * C + c] = season(t, c) + weekly * std::sin(two_pi * t / (7.0 * P)) + slope * t + 0.1 * nd(rng);
        }
      }
      break;
    case Family::ar2_season:
      for (std::size_t c = 0; c < C; ++c) {
        double x1 = 0.0, x2 = 0.0;
        for (std::size_t t = 0; t < N; ++t) {
          const double x = 0.6 * x1 - 0.25 * x2 + 0.4 * nd(rng);
          x2 = x1;
          x1 = x;
          v[t * C + c] = x + season(t, c);
        }
      }
      break;
    case Family::level_shift: {
      // Shared regime boundaries, per-channel jumps in level and scale.
      std::vector<std::size_t> bounds{0};
      while (bounds.back() < N) bounds.push_back(bounds.back() + 150 + static_cast<std::size_t>(ud(rng) * 250));
      for (std::size_t c = 0; c < C; ++c) {
        double level = 0.0, scale = 1.0;
        std::size_t seg = 1;
        for (std::size_t t = 0; t < N; ++t) {
          if (t == bounds[seg]) {
            level += 3.0 * nd(rng);
            scale = 0.5 + 1.5 * ud(rng);
            ++seg;
          }
          v[t * C + c] = level + scale * (season(t, c) + 0.2 * nd(rng));
        }
      }
      break;
    }
    case Family::correlated: {
      double f1 = 0.0, f2 = 0.0;
      std::vector<double> l1(C), l2(C);
      for (std::size_t c = 0; c < C; ++c) {
        l1[c] = nd(rng);
        l2[c] = nd(rng);
      }
      for (std::size_t t = 0; t < N; ++t) {
        f1 = 0.9 * f1 + 0.3 * nd(rng) + 0.3 * std::sin(two_pi * t / P);
        f2 = 0.7 * f2 + 0.3 * nd(rng);
        for (std::size_t c = 0; c < C; ++c) v[t * C + c] = l1[c] * f1 + l2[c] * f2 + 0.1 * nd(rng);
      }
      break;
    }
    case Family::random_walk:
      for (std::size_t c = 0; c < C; ++c) {
        double x = 0.0;
        const double drift = 0.02 * nd(rng);
        for (std::size_t t = 0; t < N; ++t) {
          x += drift + 0.3 * nd(rng);
          v[t * C + c] = x + 0.3 * season(t, c);
        }
      }
      break;
    case Family::heteroskedastic:
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t t = 0; t < N; ++t) {
          const double sigma = 0.1 + 0.9 * std::abs(std::sin(two_pi * t / 500.0 + phase[c]));
          v[t * C + c] = season(t, c) + sigma * nd(rng);
        }
      }
      break;
  }
  SeriesData out;
  for (std::size_t c = 0; c < C; ++c) out.columns.push_back("x" + std::to_string(c));
  out.times.resize(N);
  for (std::size_t t = 0; t < N; ++t) out.times[t] = kEpoch2020 + static_cast<std::int64_t>(t) * 3600;
  out.values = Tensor::from_data({N, C}, std::move(v));
  return out;
}

std::int64_t parse_timestamp(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  const std::string str(text);
  int n = std::sscanf(str.c_str(), "%d-%d-%d%*[ T]%d:%d:%d", &y, &mo, &d, &h, &mi, &s);
  if (n != 3 && n != 5 && n != 6) throw DataError("bad timestamp: " + str);
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60) throw DataError("bad timestamp: " + str);
  const auto days = sys_days(ymd).time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + s;
}

enc::CalendarStamp calendar(std::int64_t seconds) {
  using namespace std::chrono;
  std::int64_t days = seconds / 86400, rem = seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  const sys_days sd{std::chrono::days{days}};
  const year_month_day ymd{sd};
  enc::CalendarStamp st;
  st.year = static_cast<int>(ymd.year());
  st.month = static_cast<int>(static_cast<unsigned>(ymd.month()));
  st.day = static_cast<int>(static_cast<unsigned>(ymd.day()));
  st.weekday = static_cast<int>(weekday{sd}.iso_encoding()) - 1;
  st.hour = static_cast<int>(rem / 3600);
  st.minute = static_cast<int>((rem % 3600) / 60);
  return st;
}

Tensor time_marks(const std::vector<std::int64_t>& times) {
  std::vector<enc::CalendarStamp> stamps;
  stamps.reserve(times.size());
  for (auto t : times) stamps.push_back(calendar(t));
  return enc::timestamp_features(stamps);
}

SeriesData parse_series(std::string_view text, char delimiter) {
  SeriesData out;
  std::vector<double> vals;
  std::size_t line_no = 0, C = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line, delimiter);
    if (out.columns.empty() && line_no == 1) {
      if (fields.size() < 2) throw DataError("line 1: header needs a timestamp and at least one value column");
      out.columns.assign(fields.begin() + 1, fields.end());
      C = out.columns.size();
      continue;
    }
    if (fields.size() != C + 1) {
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(C + 1) + " fields, got " +
                      std::to_string(fields.size()));
    }
    std::int64_t ts;
    try {
      ts = parse_timestamp(fields[0]);
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!out.times.empty()) {
      if (ts <= out.times.back()) throw DataError("line " + std::to_string(line_no) + ": timestamps not increasing");
      if (out.times.size() >= 2 && ts - out.times.back() != out.times[1] - out.times[0]) {
        throw DataError("line " + std::to_string(line_no) + ": gap in timestamps");
      }
    }
    out.times.push_back(ts);
    for (std::size_t c = 0; c < C; ++c) {
      const std::string& f = fields[c + 1];
      char* stop = nullptr;
      const double v = std::strtod(f.c_str(), &stop);
      if (f.empty() || stop != f.c_str() + f.size() || !std::isfinite(v)) {
        throw DataError("line " + std::to_string(line_no) + ": non-numeric value '" + f + "' in column " +
                        out.columns[c]);
      }
      vals.push_back(v);
    }
  }
  if (out.columns.empty()) throw DataError("empty file");
  if (out.times.empty()) throw DataError("no data rows");
  out.values = Tensor::from_data({out.times.size(), C}, std::move(vals));
  return out;
}

SeriesData read_series(const std::string& path, char delimiter) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_series(ss.str(), delimiter);
}

void write_series(const std::string& path, const SeriesData& data, char delimiter) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "date";
  for (const auto& c : data.columns) out << delimiter << c;
  out << '\n';
  const std::size_t C = data.columns.size();
  char buf[64];
  for (std::size_t t = 0; t < data.times.size(); ++t) {
    const auto st = calendar(data.times[t]);
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d %02d:%02d:%02d", st.year, st.month, st.day, st.hour, st.minute,
                  static_cast<int>(((data.times[t] % 60) + 60) % 60));
    out << buf;
    for (std::size_t c = 0; c < C; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", data.values.data()[t * C + c]);
      out << delimiter << buf;
    }
    out << '\n';
  }
}

Tensor Dataset::split_values(Split s) const {
  switch (s) {
    case Split::train: return slice(values, 0, 0, train_end);
    case Split::val: return slice(values, 0, train_end, val_end - train_end);
    case Split::test: return slice(values, 0, val_end, length() - val_end);
  }
  throw ConfigError("unknown split");
}

train::Windows Dataset::windows(Split s, std::size_t seq_len, std::size_t horizon) const {
  std::size_t start = 0, end = train_end;
  if (s != Split::train) {
    const std::size_t lo = s == Split::val ? train_end : val_end;
    if (lo < seq_len) throw DataError(id + ": not enough history before the split for L=" + std::to_string(seq_len));
    start = lo - seq_len;
    end = s == Split::val ? val_end : length();
  }
  return make_windows(slice(values, 0, start, end - start), slice(marks, 0, start, end - start), seq_len, horizon);
}

train::Windows make_windows(const Tensor& values, const Tensor& marks, std::size_t seq_len, std::size_t horizon) {
  if (seq_len == 0 || horizon == 0) throw ConfigError("make_windows: L and T must be positive");
  if (values.dim() != 2 || values.size(0) < seq_len + horizon) {
    throw DataError("make_windows: split of length " + std::to_string(values.dim() == 2 ? values.size(0) : 0) +
                    " is shorter than L + T = " + std::to_string(seq_len + horizon));
  }
  if (marks.defined() && marks.size(0) != values.size(0)) throw ShapeError("make_windows: marks length differs");
  return {values, marks, seq_len, horizon};
}

Dataset ingest(const DatasetSpec& spec) {
  if (spec.path.has_value() == spec.synthetic.has_value()) {
    throw ConfigError("dataset " + spec.id + ": exactly one of path or synthetic source is required");
  }
  const auto& r = spec.ratios;
  if (r.train <= 0.0 || r.val <= 0.0 || r.test <= 0.0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw ConfigError("dataset " + spec.id + ": split ratios must be positive and sum to 1");
  }
  const SeriesData raw = spec.path ? read_series(*spec.path)
                                   : synthesize(spec.synthetic->family, spec.synthetic->length,
                                                spec.synthetic->channels, spec.synthetic->seed);
  const std::size_t N = raw.values.size(0), C = raw.values.size(1);
  Dataset ds;
  ds.id = spec.id;
  ds.periodicity = spec.periodicity;
  ds.train_end = static_cast<std::size_t>(std::floor(r.train * static_cast<double>(N)));
  ds.val_end = ds.train_end + static_cast<std::size_t>(std::floor(r.val * static_cast<double>(N)));
  if (ds.train_end < 2 || ds.val_end <= ds.train_end || ds.val_end >= N) {
    throw DataError("dataset " + spec.id + ": too short to split");
  }
  ds.mean.assign(C, 0.0);
  ds.stddev.assign(C, 0.0);
  const auto X = raw.values.data();
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t t = 0; t < ds.train_end; ++t) s += X[t * C + c];
    const double mu = s / static_cast<double>(ds.train_end);
    double ss = 0.0;
    for (std::size_t t = 0; t < ds.train_end; ++t) ss += (X[t * C + c] - mu) * (X[t * C + c] - mu);
    const double sd = std::sqrt(ss / static_cast<double>(ds.train_end));
    ds.mean[c] = mu;
    ds.stddev[c] = sd > 0.0 ? sd : 1.0;
  }
  std::vector<double> z(N * C);
  for (std::size_t t = 0; t < N; ++t) {
    for (std::size_t c = 0; c < C; ++c) z[t * C + c] = (X[t * C + c] - ds.mean[c]) / ds.stddev[c];
  }
  ds.values = Tensor::from_data({N, C}, std::move(z));
  ds.marks = time_marks(raw.times);
  return ds;
}

std::vector<DatasetSpec> synthetic_suite(std::uint64_t seed, std::size_t length) {
  std::vector<DatasetSpec> out;
  std::size_t i = 0;
  for (Family f : all_families()) {
    DatasetSpec s;
    s.id = std::string(to_string(f));
    s.synthetic = SyntheticSource{f, length, i % 2 == 0 ? 3u : 7u, seed + i};
    out.push_back(s);
    ++i;
  }
  return out;
}

}  // namespace tsforge::harness
