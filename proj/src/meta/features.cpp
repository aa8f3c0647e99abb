#include "tsforge/meta/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tsforge/core/fft.hpp"
#include "tsforge/error.hpp"

namespace tsforge::meta {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double var_of(std::span<const double> x) {
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

double quantile_sorted(const std::vector<double>& v, double p) {
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<double> sorted(std::span<const double> x) {
  std::vector<double> v(x.begin(), x.end());
  std::sort(v.begin(), v.end());
  return v;
}

double median_of(std::span<const double> x) { return quantile_sorted(sorted(x), 0.5); }

// Least-squares slope of y on x.
double ls_slope(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

std::vector<double> diffs(std::span<const double> x) {
  std::vector<double> d(x.size() - 1);
  for (std::size_t i = 0; i + 1 < x.size(); ++i) d[i] = x[i + 1] - x[i];
  return d;
}

// Counts per bin over [lo, hi]; the top edge belongs to the last bin.
std::vector<double> histogram(std::span<const double> x, std::size_t bins, double lo, double hi) {
  std::vector<double> h(bins, 0.0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : x) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - lo) / width) : 0;
    h[std::min(b, bins - 1)] += 1.0;
  }
  return h;
}

double histogram_entropy(std::span<const double> x, std::size_t bins) {
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  if (*mx == *mn) return 0.0;
  const auto h = histogram(x, bins, *mn, *mx);
  double e = 0.0;
  for (double c : h) {
    if (c > 0) {
      const double p = c / static_cast<double>(x.size());
      e -= p * std::log(p);
    }
  }
  return e / std::log(static_cast<double>(bins));
}

std::size_t local_maxima(std::span<const double> x) {
  std::size_t n = 0;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) n += x[i - 1] < x[i] && x[i] > x[i + 1];
  return n;
}

std::size_t local_minima(std::span<const double> x) {
  std::size_t n = 0;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) n += x[i - 1] > x[i] && x[i] < x[i + 1];
  return n;
}

double first_acf_below_inv_e(std::span<const double> x) {
  const double m = mean_of(x);
  double c0 = 0.0;
  for (double v : x) c0 += (v - m) * (v - m);
  if (c0 == 0.0) return 0.0;
  const double target = 1.0 / std::numbers::e;
  for (std::size_t k = 1; k < x.size(); ++k) {
    double c = 0.0;
    for (std::size_t t = 0; t + k < x.size(); ++t) c += (x[t] - m) * (x[t + k] - m);
    if (c / c0 < target) return static_cast<double>(k);
  }
  return static_cast<double>(x.size());
}

std::size_t neighbourhood_peaks(std::span<const double> x, std::size_t n) {
  std::size_t peaks = 0;
  for (std::size_t i = n; i + n < x.size(); ++i) {
    bool peak = true;
    for (std::size_t j = i - n; j <= i + n && peak; ++j) peak = j == i || x[j] < x[i];
    peaks += peak;
  }
  return peaks;
}

void temporal(std::span<const double> x, std::vector<double>& f) {
  const std::size_t L = x.size();
  const auto d = diffs(x);
  double energy = 0.0, auc = 0.0, centroid = 0.0, distance = 0.0, sad = 0.0;
  for (std::size_t t = 0; t < L; ++t) {
    energy += x[t] * x[t];
    centroid += static_cast<double>(t) * x[t] * x[t];
  }
  for (std::size_t t = 0; t + 1 < L; ++t) auc += 0.5 * (x[t] + x[t + 1]);
  for (double v : d) {
    distance += std::sqrt(1.0 + v * v);
    sad += std::abs(v);
  }
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  std::vector<double> t(L);
  std::iota(t.begin(), t.end(), 0.0);
  f.push_back(energy);
  f.push_back(auc);
  f.push_back(first_acf_below_inv_e(x));
  f.push_back(energy / static_cast<double>(L));
  f.push_back(energy > 0.0 ? centroid / energy / static_cast<double>(L) : 0.0);
  f.push_back(distance);
  f.push_back(static_cast<double>(local_minima(x)));
  f.push_back(static_cast<double>(local_maxima(x)));
  f.push_back(static_cast<double>(neighbourhood_peaks(x, 10)));
  f.push_back(*mx - *mn);
  f.push_back(std::sqrt(energy / static_cast<double>(L)));
  f.push_back(ls_slope(t, x));
  f.push_back(sad);
  f.push_back(zero_crossings(x));
}

void statistical(std::span<const double> x, std::vector<double>& f) {
  const std::size_t L = x.size();
  const auto s = sorted(x);
  const double m = mean_of(x);
  const double var = var_of(x);
  const double sd = std::sqrt(var);
  const double med = quantile_sorted(s, 0.5);
  f.push_back(s.back());
  f.push_back(m);
  f.push_back(med);
  f.push_back(s.front());
  f.push_back(sd);
  f.push_back(var);
  for (int k = 0; k < 10; ++k) f.push_back(quantile_sorted(s, (k + 0.5) / 10.0));
  const double q50 = med, q75 = quantile_sorted(s, 0.75), q25 = quantile_sorted(s, 0.25);
  f.push_back(q75 > q50 ? 0.25 / (q75 - q50) : std::numeric_limits<double>::infinity());
  if (s.back() > s.front()) {
    const auto h = histogram(x, 10, s.front(), s.back());
    const auto b = static_cast<std::size_t>(std::max_element(h.begin(), h.end()) - h.begin());
    const double width = (s.back() - s.front()) / 10.0;
    f.push_back(s.front() + (static_cast<double>(b) + 0.5) * width);
  } else {
    f.push_back(s.front());
  }
  f.push_back(q75 - q25);
  double m3 = 0.0, m4 = 0.0, mad = 0.0;
  for (double v : x) {
    const double c = v - m;
    m3 += c * c * c;
    m4 += c * c * c * c;
    mad += std::abs(c);
  }
  m3 /= static_cast<double>(L);
  m4 /= static_cast<double>(L);
  f.push_back(var > 0.0 ? m4 / (var * var) - 3.0 : 0.0);
  f.push_back(mad / static_cast<double>(L));
  std::vector<double> dev(L);
  for (std::size_t i = 0; i < L; ++i) dev[i] = std::abs(x[i] - med);
  f.push_back(median_of(dev));
  const auto d = diffs(x);
  std::vector<double> ad(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) ad[i] = std::abs(d[i]);
  f.push_back(mean_of(ad));
  f.push_back(median_of(ad));
  f.push_back(mean_of(d));
  f.push_back(median_of(d));
  f.push_back(var > 0.0 ? m3 / std::pow(var, 1.5) : 0.0);
}

// Frequency at which the cumulative share of `w` first reaches `share`.
double cumulative_cutoff(const std::vector<double>& freq, const std::vector<double>& w, double share) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (acc >= share * total) return freq[i];
  }
  return freq.back();
}

void spectral(std::span<const double> x, std::vector<double>& f) {
  const std::size_t L = x.size();
  f.push_back(histogram_entropy(x, 10));
  const auto spec = fft::rfft(x);
  // Non-DC bins only.
  std::vector<double> freq, mag, pow;
  for (std::size_t k = 1; k < spec.size(); ++k) {
    freq.push_back(static_cast<double>(k) / static_cast<double>(L));
    mag.push_back(std::abs(spec[k]));
    pow.push_back(std::norm(spec[k]));
  }
  const double total = std::accumulate(pow.begin(), pow.end(), 0.0);
  const double mag_total = std::accumulate(mag.begin(), mag.end(), 0.0);
  if (total <= 0.0 || mag_total <= 0.0) {
    f.insert(f.end(), 16, 0.0);
    return;
  }
  const std::size_t K = mag.size();
  const auto top = static_cast<std::size_t>(std::max_element(mag.begin(), mag.end()) - mag.begin());
  f.push_back(freq[top]);
  f.push_back(cumulative_cutoff(freq, pow, 0.95));
  f.push_back(*std::max_element(pow.begin(), pow.end()) / static_cast<double>(L));
  f.push_back(cumulative_cutoff(freq, pow, 0.5));
  std::vector<double> p(K);
  for (std::size_t k = 0; k < K; ++k) p[k] = pow[k] / total;
  double centroid = 0.0;
  for (std::size_t k = 0; k < K; ++k) centroid += freq[k] * p[k];
  f.push_back(centroid);
  double dec_num = 0.0, dec_den = 0.0;
  for (std::size_t k = 1; k < K; ++k) {
    dec_num += (mag[k] - mag[0]) / static_cast<double>(k);
    dec_den += mag[k];
  }
  f.push_back(dec_den > 0.0 ? dec_num / dec_den : 0.0);
  double ent = 0.0;
  for (double v : p) {
    if (v > 0.0) ent -= v * std::log(v);
  }
  f.push_back(K > 1 ? ent / std::log(static_cast<double>(K)) : 0.0);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double c = freq[k] - centroid;
    m2 += c * c * p[k];
    m3 += c * c * c * p[k];
    m4 += c * c * c * c * p[k];
  }
  const double spread = std::sqrt(m2);
  f.push_back(spread > 0.0 ? m4 / (m2 * m2) : 0.0);
  f.push_back(spread > 0.0 ? m3 / (m2 * spread) : 0.0);
  f.push_back(ls_slope(freq, mag));
  f.push_back(spread);
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k + 1 < K; ++k) {
    ab += mag[k] * mag[k + 1];
    aa += mag[k] * mag[k];
    bb += mag[k + 1] * mag[k + 1];
  }
  f.push_back(aa > 0.0 && bb > 0.0 ? 1.0 - ab / std::sqrt(aa * bb) : 0.0);
  f.push_back(cumulative_cutoff(freq, mag, 0.85));
  f.push_back(cumulative_cutoff(freq, mag, 0.05));
  f.push_back(cumulative_cutoff(freq, pow, 0.975) - cumulative_cutoff(freq, pow, 0.025));
  f.push_back(static_cast<double>(local_maxima(mag)));
}

void fractal(std::span<const double> x, std::vector<double>& f) {
  double sad = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) sad += std::abs(x[i + 1] - x[i]);
  f.push_back(dfa_exponent(x));
  f.push_back(higuchi_dimension(x));
  f.push_back(hurst_exponent(x));
  f.push_back(lempel_ziv(x));
  f.push_back(std::log1p(sad));
  f.push_back(petrosian_dimension(x));
}

// Expected R/S of white noise at window n (Anis-Lloyd with Peters' factor).
double expected_rs(std::size_t n) {
  const double nd = static_cast<double>(n);
  double s = 0.0;
  for (std::size_t i = 1; i < n; ++i) s += std::sqrt((nd - static_cast<double>(i)) / static_cast<double>(i));
  const double front = (nd - 0.5) / nd;
  if (n <= 340) {
    return front * std::exp(std::lgamma((nd - 1.0) / 2.0) - std::lgamma(nd / 2.0)) / std::sqrt(std::numbers::pi) * s;
  }
  return front / std::sqrt(nd * std::numbers::pi / 2.0) * s;
}

std::string format_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double absolute_energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

double zero_crossings(std::span<const double> x) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) n += x[i] * x[i + 1] < 0.0;
  return static_cast<double>(n);
}

double hurst_exponent(std::span<const double> x) {
  const std::size_t L = x.size();
  if (L < kMinFeatureLength) throw DataError("hurst: series shorter than " + std::to_string(kMinFeatureLength));
  std::vector<double> log_n, log_rs, log_ers;
  for (std::size_t n = 16; n <= L / 2; n *= 2) {
    const std::size_t chunks = L / n;
    double rs_sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
      const auto w = x.subspan(c * n, n);
      const double m = mean_of(w);
      double y = 0.0, lo = 0.0, hi = 0.0, ss = 0.0;
      for (double v : w) {
        y += v - m;
        lo = std::min(lo, y);
        hi = std::max(hi, y);
        ss += (v - m) * (v - m);
      }
      const double sd = std::sqrt(ss / static_cast<double>(n));
      if (sd > 0.0) {
        rs_sum += (hi - lo) / sd;
        ++used;
      }
    }
    if (used == 0) continue;
    log_n.push_back(std::log(static_cast<double>(n)));
    log_rs.push_back(std::log(rs_sum / static_cast<double>(used)));
    log_ers.push_back(std::log(expected_rs(n)));
  }
  if (log_n.size() < 2) return 0.5;
  return 0.5 + ls_slope(log_n, log_rs) - ls_slope(log_n, log_ers);
}

double dfa_exponent(std::span<const double> x) {
  const std::size_t L = x.size();
  const double m = mean_of(x);
  std::vector<double> y(L);
  double acc = 0.0;
  for (std::size_t i = 0; i < L; ++i) y[i] = acc += x[i] - m;
  std::vector<std::size_t> scales;
  const double lo = std::log(4.0), hi = std::log(static_cast<double>(L) / 4.0);
  for (int i = 0; i < 12; ++i) {
    const auto n = static_cast<std::size_t>(std::round(std::exp(lo + (hi - lo) * i / 11.0)));
    if (n >= 4 && (scales.empty() || n != scales.back())) scales.push_back(n);
  }
  std::vector<double> ln, lf;
  for (std::size_t n : scales) {
    const std::size_t w = L / n;
    double total = 0.0;
    std::vector<double> t(n);
    std::iota(t.begin(), t.end(), 0.0);
    for (std::size_t c = 0; c < w; ++c) {
      const std::span<const double> seg(y.data() + c * n, n);
      const double b = ls_slope(t, seg);
      const double a = mean_of(seg) - b * (static_cast<double>(n) - 1.0) / 2.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = seg[i] - (a + b * static_cast<double>(i));
        total += r * r;
      }
    }
    const double F = std::sqrt(total / static_cast<double>(w * n));
    if (F <= 0.0) return 0.0;
    ln.push_back(std::log(static_cast<double>(n)));
    lf.push_back(std::log(F));
  }
  return ln.size() >= 2 ? ls_slope(ln, lf) : 0.0;
}

double higuchi_dimension(std::span<const double> x, std::size_t k_max) {
  const std::size_t N = x.size();
  std::vector<double> lk, ll;
  for (std::size_t k = 1; k <= k_max && k < N; ++k) {
    double Lk = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      const std::size_t steps = (N - 1 - m) / k;
      if (steps == 0) continue;
      double len = 0.0;
      for (std::size_t i = 1; i <= steps; ++i) len += std::abs(x[m + i * k] - x[m + (i - 1) * k]);
      Lk += len * static_cast<double>(N - 1) / (static_cast<double>(steps * k)) / static_cast<double>(k);
    }
    Lk /= static_cast<double>(k);
    if (Lk <= 0.0) return 1.0;  // a flat curve
    lk.push_back(std::log(static_cast<double>(k)));
    ll.push_back(std::log(Lk));
  }
  return -ls_slope(lk, ll);
}

double lempel_ziv(std::span<const double> x) {
  const double med = median_of(x);
  std::string s(x.size(), '0');
  for (std::size_t i = 0; i < x.size(); ++i) s[i] = x[i] > med ? '1' : '0';
  // Kaspar-Schuster LZ76 phrase count.
  const std::size_t n = s.size();
  std::size_t c = 1, l = 1, i = 0, k = 1, k_max = 1;
  while (true) {
    if (s[i + k - 1] == s[l + k - 1]) {
      ++k;
      if (l + k > n) {
        ++c;
        break;
      }
    } else {
      k_max = std::max(k, k_max);
      ++i;
      if (i == l) {
        ++c;
        l += k_max;
        if (l + 1 > n) break;
        i = 0;
        k = 1;
        k_max = 1;
      } else {
        k = 1;
      }
    }
  }
  const double nd = static_cast<double>(n);
  return static_cast<double>(c) * std::log2(nd) / nd;
}

double petrosian_dimension(std::span<const double> x) {
  const auto d = diffs(x);
  std::size_t changes = 0;
  for (std::size_t i = 0; i + 1 < d.size(); ++i) changes += d[i] * d[i + 1] < 0.0;
  const double n = static_cast<double>(x.size());
  return std::log10(n) / (std::log10(n) + std::log10(n / (n + 0.4 * static_cast<double>(changes))));
}

double shifting_metric(std::span<const double> x, std::size_t window) {
  const std::size_t L = x.size();
  const std::size_t w = window > 0 ? window : std::clamp<std::size_t>(L / 10, 32, 512);
  if (L < 2 * w) {
    throw DataError("shifting_metric: length " + std::to_string(L) + " below two windows of " + std::to_string(w));
  }
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  if (*mx == *mn) return 0.0;
  constexpr std::size_t kBins = 16;
  constexpr double kSmooth = 1e-6;
  const std::size_t n_win = L / w;
  std::vector<std::vector<double>> dist;
  for (std::size_t i = 0; i < n_win; ++i) {
    auto h = histogram(x.subspan(i * w, w), kBins, *mn, *mx);
    double z = 0.0;
    for (auto& v : h) z += v = v / static_cast<double>(w) + kSmooth;
    for (auto& v : h) v /= z;
    dist.push_back(std::move(h));
  }
  double kl = 0.0;
  for (std::size_t i = 0; i + 1 < n_win; ++i) {
    for (std::size_t b = 0; b < kBins; ++b) {
      const double p = dist[i][b], q = dist[i + 1][b];
      kl += (p - q) * std::log(p / q);  // KL(p||q) + KL(q||p)
    }
  }
  kl /= static_cast<double>(n_win - 1);
  return 1.0 - std::exp(-kl);
}

const std::vector<std::string>& base_feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n = {"abs_energy",   "auc",          "autocorr_1e",       "average_power",
                                  "centroid",     "signal_distance", "neg_turning",   "pos_turning",
                                  "neighbourhood_peaks", "peak_to_peak", "rms",        "slope",
                                  "sum_abs_diff", "zero_crossings",  "max",           "mean",
                                  "median",       "min",          "std",               "var"};
    for (int k = 0; k < 10; ++k) n.push_back("ecdf_p" + std::to_string(k * 10 + 5));
    for (const char* s : {"ecdf_slope", "hist_mode", "iqr", "kurtosis", "mad_mean", "mad_median",
                          "mean_abs_diff", "median_abs_diff", "mean_diff", "median_diff", "skewness",
                          "entropy", "fundamental_freq", "max_freq", "max_power", "median_freq",
                          "spectral_centroid", "spectral_decrease", "spectral_entropy", "spectral_kurtosis",
                          "spectral_skewness", "spectral_slope", "spectral_spread", "spectral_variation",
                          "spectral_rolloff", "spectral_rollon", "power_bandwidth", "spectral_pos_turning",
                          "dfa", "higuchi_fd", "hurst", "lempel_ziv", "max_fractal_length", "petrosian_fd"}) {
      n.emplace_back(s);
    }
    return n;
  }();
  return names;
}

const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& b : base_feature_names()) {
      for (const char* agg : {"mean_", "std_", "min_", "q25_", "median_", "q75_", "max_"}) n.push_back(agg + b);
    }
    n.emplace_back("shifting");
    n.emplace_back("log_channels");
    n.emplace_back("log_length");
    return n;
  }();
  return names;
}

std::vector<double> channel_features(std::span<const double> x) {
  if (x.size() < kMinFeatureLength) {
    throw DataError("meta features need at least " + std::to_string(kMinFeatureLength) + " steps, got " +
                    std::to_string(x.size()));
  }
  std::vector<double> f;
  f.reserve(base_feature_names().size());
  temporal(x, f);
  statistical(x, f);
  spectral(x, f);
  fractal(x, f);
  if (f.size() != base_feature_names().size()) throw Error("feature catalogue size mismatch");
  return f;
}

MetaFeatureVector extract_meta_features(const Tensor& series) {
  if (series.dim() != 2) throw ShapeError("extract_meta_features expects [L, C]");
  const std::size_t L = series.size(0), C = series.size(1);
  if (L < kMinFeatureLength) {
    throw DataError("meta features need at least " + std::to_string(kMinFeatureLength) + " steps, got " +
                    std::to_string(L));
  }
  const auto X = series.data();
  const std::size_t B = base_feature_names().size();
  std::vector<std::vector<double>> per(B, std::vector<double>(C));
  double shift = 0.0;
  bool shift_ok = true;
  std::vector<double> col(L);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < L; ++t) col[t] = X[t * C + c];
    const auto f = channel_features(col);
    for (std::size_t b = 0; b < B; ++b) per[b][c] = f[b];
    try {
      shift += shifting_metric(col);
    } catch (const DataError&) {
      shift_ok = false;
    }
  }
  std::vector<double> raw;
  raw.reserve(feature_names().size());
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> v;
    for (double e : per[b]) {
      if (std::isfinite(e)) v.push_back(e);
    }
    if (v.empty()) {
      raw.insert(raw.end(), 7, kNaN);
      continue;
    }
    std::sort(v.begin(), v.end());
    const double m = mean_of(v);
    raw.push_back(m);
    raw.push_back(std::sqrt(var_of(v)));
    raw.push_back(v.front());
    raw.push_back(quantile_sorted(v, 0.25));
    raw.push_back(quantile_sorted(v, 0.5));
    raw.push_back(quantile_sorted(v, 0.75));
    raw.push_back(v.back());
  }
  raw.push_back(shift_ok ? shift / static_cast<double>(C) : kNaN);
  raw.push_back(std::log(static_cast<double>(C)));
  raw.push_back(std::log(static_cast<double>(L)));

  MetaFeatureVector out;
  out.values.resize(raw.size());
  out.missing.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const bool ok = std::isfinite(raw[i]);
    out.values[i] = ok ? raw[i] : 0.0;
    out.missing[i] = ok ? 0 : 1;
  }
  return out;
}

MetaFeatureVector dataset_features(const harness::Dataset& data) {
  const std::size_t C = data.channels(), N = data.train_end;
  std::vector<double> raw(N * C);
  const auto V = data.values.data();
  for (std::size_t t = 0; t < N; ++t) {
    for (std::size_t c = 0; c < C; ++c) raw[t * C + c] = V[t * C + c] * data.stddev[c] + data.mean[c];
  }
  return extract_meta_features(Tensor::from_data({N, C}, std::move(raw)));
}

void write_features(std::ostream& out, const std::vector<std::pair<std::string, MetaFeatureVector>>& rows) {
  out << "dataset_id\tversion";
  for (const auto& n : feature_names()) out << '\t' << n;
  out << "\tmissing\n";
  for (const auto& [id, v] : rows) {
    out << id << '\t' << v.version;
    for (double x : v.values) out << '\t' << format_num(x);
    std::string miss;
    for (std::size_t i = 0; i < v.missing.size(); ++i) {
      if (v.missing[i]) miss += (miss.empty() ? "" : ",") + std::to_string(i);
    }
    out << '\t' << (miss.empty() ? "-" : miss) << '\n';
  }
}

std::vector<std::pair<std::string, MetaFeatureVector>> read_features(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("features: empty input");
  std::vector<std::string> head;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) head.push_back(cell);
  }
  const auto& names = feature_names();
  if (head.size() != names.size() + 3 || !std::equal(names.begin(), names.end(), head.begin() + 2)) {
    throw DataError("features: header does not match feature version " + std::to_string(kFeatureVersion));
  }
  std::vector<std::pair<std::string, MetaFeatureVector>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() != head.size()) throw DataError("features: line " + std::to_string(line_no) + " has wrong width");
    MetaFeatureVector v;
    v.version = std::stoi(f[1]);
    if (v.version != kFeatureVersion) throw DataError("features: unsupported version on line " + std::to_string(line_no));
    v.values.resize(names.size());
    v.missing.assign(names.size(), 0);
    for (std::size_t i = 0; i < names.size(); ++i) v.values[i] = std::stod(f[i + 2]);
    if (f.back() != "-") {
      std::stringstream ms(f.back());
      std::string idx;
      while (std::getline(ms, idx, ',')) v.missing.at(std::stoul(idx)) = 1;
    }
    rows.emplace_back(f[0], std::move(v));
  }
  return rows;
}

}  // namespace tsforge::meta
