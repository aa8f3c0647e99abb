#include "tsforge/core/fft.hpp"

#include <cmath>
#include <map>
#include <numbers>

#include "tsforge/error.hpp"

namespace tsforge::fft {

namespace {

struct Plan {
  std::size_t n = 0;
  std::vector<std::size_t> factors;  // ascending primes, product == n
  std::vector<Complex> twiddles;     // exp(-2 pi i j / n)
};

const Plan& plan_for(std::size_t n) {
  thread_local std::map<std::size_t, Plan> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;

  Plan plan;
  plan.n = n;
  std::size_t rest = n;
  for (std::size_t p = 2; p * p <= rest; ++p) {
    while (rest % p == 0) {
      plan.factors.push_back(p);
      rest /= p;
    }
  }
  if (rest > 1) plan.factors.push_back(rest);
  plan.twiddles.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
    plan.twiddles[j] = {std::cos(angle), std::sin(angle)};
  }
  return cache.emplace(n, std::move(plan)).first->second;
}

// j < plan.n always holds at the call sites.
Complex twiddle(const Plan& plan, std::size_t j, bool inverse) {
  const Complex w = plan.twiddles[j];
  return inverse ? std::conj(w) : w;
}

// Plain product; std::complex operator* goes through the Annex G NaN path.
inline Complex mul(Complex a, Complex b) {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

// Decimation in time: split into p interleaved subsequences, transform each
// into its block of `out`, then combine with radix-p butterflies in place.
void recurse(const Complex* in, std::size_t stride, Complex* out, std::size_t n, const Plan& plan,
             std::size_t level, bool inverse, std::vector<Complex>& scratch) {
  if (n == 1) {
    out[0] = in[0];
    return;
  }
  if (n == 2) {
    out[0] = in[0] + in[stride];
    out[1] = in[0] - in[stride];
    return;
  }
  const std::size_t p = plan.factors[level];
  const std::size_t m = n / p;
  for (std::size_t r = 0; r < p; ++r) {
    recurse(in + r * stride, stride * p, out + r * m, m, plan, level + 1, inverse, scratch);
  }
  const std::size_t step = plan.n / n;  // W_n^j == W_N^(j*step)
  const std::size_t base = scratch.size();
  scratch.resize(base + p);
  Complex* t = scratch.data() + base;
  if (p == 2) {
    for (std::size_t k = 0; k < m; ++k) {
      const Complex a = out[k];
      const Complex b = mul(out[k + m], twiddle(plan, k * step, inverse));
      out[k] = a + b;
      out[k + m] = a - b;
    }
  } else {
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t r = 0; r < p; ++r) t[r] = mul(out[k + r * m], twiddle(plan, r * k * step, inverse));
      for (std::size_t q = 0; q < p; ++q) {
        Complex acc = 0.0;
        for (std::size_t r = 0; r < p; ++r) acc += mul(t[r], twiddle(plan, (r * q % p) * m * step, inverse));
        out[k + q * m] = acc;
      }
    }
  }
  scratch.resize(base);
}

}  // namespace

void transform(std::span<Complex> data, bool inverse) {
  const std::size_t n = data.size();
  if (n <= 1) return;
  const Plan& plan = plan_for(n);
  thread_local std::vector<Complex> input;
  thread_local std::vector<Complex> scratch;
  input.assign(data.begin(), data.end());
  scratch.clear();
  recurse(input.data(), 1, data.data(), n, plan, 0, inverse, scratch);
}

std::vector<Complex> rfft(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) throw ShapeError("rfft of empty sequence");
  std::vector<Complex> buf(x.begin(), x.end());
  transform(buf, false);
  buf.resize(n / 2 + 1);
  return buf;
}

std::vector<double> irfft(std::span<const Complex> half_spectrum, std::size_t n) {
  if (n == 0) throw ShapeError("irfft to empty sequence");
  const std::size_t bins = n / 2 + 1;
  if (half_spectrum.size() != bins) {
    throw ShapeError("irfft: expected " + std::to_string(bins) + " bins for length " + std::to_string(n));
  }
  std::vector<Complex> full(n);
  full[0] = {half_spectrum[0].real(), 0.0};
  for (std::size_t k = 1; k < bins; ++k) {
    full[k] = half_spectrum[k];
    if (n - k != k) full[n - k] = std::conj(half_spectrum[k]);
  }
  if (n % 2 == 0) full[n / 2] = {half_spectrum[n / 2].real(), 0.0};
  transform(full, true);
  std::vector<double> out(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < n; ++t) out[t] = full[t].real() * scale;
  return out;
}

}  // namespace tsforge::fft
