#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"
#include "tsforge/core/fft.hpp"
#include "tsforge/core/module.hpp"
#include "tsforge/core/ops.hpp"
#include "tsforge/error.hpp"

using namespace tsforge;
using tsforge::testing::grad_check;
using tsforge::testing::project;

namespace {

// O(L^2) DFT, the oracle for the FFT kernel.
std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(a), std::sin(a));
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace

TEST(Elementwise, AddVectors) {
  auto y = add(Tensor::from_data({2}, {1, 2}), Tensor::from_data({2}, {3, 4}));
  EXPECT_EQ(y.data()[0], 4.0);
  EXPECT_EQ(y.data()[1], 6.0);
}

TEST(Elementwise, MulByOnesIsIdentity) {
  std::mt19937_64 rng(1);
  auto x = Tensor::randn({3, 4}, rng);
  auto y = elementwise(ElementwiseOp::mul, x, Tensor::ones({3, 4}));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Elementwise, ExpGradAtZero) {
  auto x = Tensor::scalar(0.0, true);
  exp(x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(Elementwise, DomainErrors) {
  EXPECT_THROW(log(Tensor::from_data({2}, {1.0, 0.0})), DomainError);
  EXPECT_THROW(div(Tensor::ones({2}), Tensor::from_data({2}, {1.0, 0.0})), DomainError);
  EXPECT_THROW(add(Tensor::ones({2, 3}), Tensor::ones({4})), ShapeError);
  EXPECT_THROW(elementwise(ElementwiseOp::add, Tensor::ones({2})), ShapeError);
}

TEST(Elementwise, TrailingBroadcast) {
  auto a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor::from_data({3}, {10, 20, 30});
  auto y = add(a, b);
  EXPECT_EQ(y.at({1, 2}), 36.0);
  auto c = Tensor::from_data({2, 1}, {100, 200});
  EXPECT_EQ(add(a, c).at({1, 0}), 204.0);
}

TEST(Matmul, IdentityAndHandValues) {
  std::mt19937_64 rng(2);
  auto a = Tensor::randn({3, 3}, rng);
  auto eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto y = matmul(eye, a);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y.data()[i], a.data()[i]);

  auto z = matmul(Tensor::from_data({2, 2}, {1, 2, 3, 4}), Tensor::from_data({2, 1}, {1, 1}));
  EXPECT_EQ(z.shape(), (Shape{2, 1}));
  EXPECT_EQ(z.data()[0], 3.0);
  EXPECT_EQ(z.data()[1], 7.0);
  EXPECT_THROW(matmul(Tensor::ones({2, 3}), Tensor::ones({2, 3})), ShapeError);
}

TEST(Matmul, BatchedBroadcast) {
  std::mt19937_64 rng(3);
  auto a = Tensor::randn({2, 3, 4}, rng);
  auto b = Tensor::randn({4, 5}, rng);
  auto y = matmul(a, b);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 5}));
  double expect = 0.0;
  for (std::size_t k = 0; k < 4; ++k) expect += a.at({1, 2, k}) * b.at({k, 3});
  EXPECT_NEAR(y.at({1, 2, 3}), expect, 1e-12);
  auto b3 = Tensor::randn({1, 4, 5}, rng);
  EXPECT_EQ(matmul(a, b3).shape(), (Shape{2, 3, 5}));
}

TEST(Softmax, Examples) {
  auto u = softmax(Tensor::zeros({3}), 0);
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  auto s = softmax(Tensor::from_data({3}, {1000, 0, 0}), 0);
  EXPECT_TRUE(all_finite(s));
  EXPECT_NEAR(s.data()[0], 1.0, 1e-12);

  std::mt19937_64 rng(4);
  auto r = softmax(Tensor::randn({4, 7}, rng, 3.0), 1);
  for (std::size_t i = 0; i < 4; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 7; ++j) row += r.at({i, j});
    EXPECT_NEAR(row, 1.0, 1e-9);
  }
}

TEST(Fft, ConstantSeriesHasOnlyDc) {
  std::vector<double> x(10, 2.5);
  auto spec = fft::rfft(x);
  EXPECT_EQ(spec.size(), 6u);
  EXPECT_NEAR(spec[0].real(), 25.0, 1e-12);
  for (std::size_t k = 1; k < spec.size(); ++k) EXPECT_NEAR(std::abs(spec[k]), 0.0, 1e-12);
}

TEST(Fft, SinusoidConcentratesInItsBin) {
  const std::size_t L = 96, k0 = 5;
  std::vector<double> x(L);
  for (std::size_t t = 0; t < L; ++t) x[t] = std::sin(2.0 * std::numbers::pi * double(k0 * t) / double(L));
  auto spec = fft::rfft(x);
  std::size_t best = 0;
  for (std::size_t k = 0; k < spec.size(); ++k) {
    if (std::abs(spec[k]) > std::abs(spec[best])) best = k;
  }
  EXPECT_EQ(best, k0);
  EXPECT_NEAR(std::abs(spec[k0]), L / 2.0, 1e-9);
}

TEST(Fft, MatchesNaiveDftAndRoundTrips) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (std::size_t L : {1u, 2u, 7u, 12u, 48u, 64u, 96u, 97u, 100u}) {
    std::vector<double> x(L);
    for (auto& v : x) v = nd(rng);
    auto fast = fft::rfft(x);
    auto slow = naive_dft(x);
    for (std::size_t k = 0; k < fast.size(); ++k) EXPECT_LT(std::abs(fast[k] - slow[k]), 1e-9) << "L=" << L;
    auto back = fft::irfft(fast, L);
    for (std::size_t t = 0; t < L; ++t) EXPECT_LT(std::fabs(back[t] - x[t]), 1e-9);

    // Parseval for the unnormalised convention: sum x^2 = (1/L) sum |X_k|^2 over all L bins.
    double energy = 0.0, spectral = 0.0;
    for (double v : x) energy += v * v;
    for (const auto& c : slow) spectral += std::norm(c);
    spectral /= static_cast<double>(L);
    EXPECT_LT(std::fabs(energy - spectral), 1e-9 * std::max(1.0, energy));
  }
}

TEST(Fft, TensorRoundTrip64) {
  std::mt19937_64 rng(6);
  auto x = Tensor::randn({3, 64}, rng);
  auto [re, im] = rfft(x);
  EXPECT_EQ(re.shape(), (Shape{3, 33}));
  auto back = irfft(re, im, 64);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_LT(std::fabs(back.data()[i] - x.data()[i]), 1e-9);
}

TEST(Fft, TensorPathsAgreeWithTransform) {
  // Short rows go through dense matrices, long rows through the transform.
  std::mt19937_64 rng(8);
  for (std::size_t L : {15u, 512u, 1500u}) {
    auto x = Tensor::randn({2, L}, rng, 1.0, true);
    auto [re, im] = rfft(x);
    for (std::size_t r = 0; r < 2; ++r) {
      const auto ref = fft::rfft(x.data().subspan(r * L, L));
      for (std::size_t k = 0; k < ref.size(); ++k) {
        EXPECT_NEAR(re.data()[r * ref.size() + k], ref[k].real(), 1e-9 * L);
        EXPECT_NEAR(im.data()[r * ref.size() + k], ref[k].imag(), 1e-9 * L);
      }
    }
    auto back = irfft(re, im, L);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_LT(std::fabs(back.data()[i] - x.data()[i]), 1e-9);
    // Round trip is the identity, so its gradient is all ones.
    sum(back).backward();
    ASSERT_EQ(x.grad().size(), x.numel());
    for (double g : x.grad()) EXPECT_NEAR(g, 1.0, 1e-9);
  }
}

TEST(Autograd, BackwardVisitsSharedNodesOnce) {
  auto x = Tensor::scalar(3.0, true);
  auto y = mul(x, x);          // 2x
  auto z = add(y, y);          // 4x
  z.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Autograd, ZeroGradThenRerunIsIdempotent) {
  std::mt19937_64 rng(7);
  auto w = Tensor::randn({4, 3}, rng, 1.0, true);
  auto x = Tensor::randn({2, 4}, rng);
  auto run = [&] {
    w.zero_grad();
    sum(tanh(matmul(x, w))).backward();
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  auto g1 = run();
  auto g2 = run();
  EXPECT_EQ(g1, g2);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  auto w = Tensor::ones({2}, true);
  NoGradGuard guard;
  auto y = mul(w, w);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, ForwardIsDeterministic) {
  auto run = [] {
    std::mt19937_64 rng(11);
    Linear lin(5, 3, rng);
    auto x = Tensor::randn({4, 5}, rng);
    auto y = softmax(gelu(lin.forward(x)), 1);
    return std::vector<double>(y.data().begin(), y.data().end());
  };
  EXPECT_EQ(run(), run());
}

// Finite-difference check of every differentiable op, 20 seeds each.
class GradCheckAllOps : public ::testing::TestWithParam<int> {};

TEST_P(GradCheckAllOps, MatchesCentralDifferences) {
  const std::uint64_t seed = static_cast<std::uint64_t>(GetParam());
  for (auto& c : tsforge::testing::op_cases(seed)) {
    auto r = grad_check(c.fn, c.inputs);
    EXPECT_LT(r.max_rel_error, 1e-4) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradCheckAllOps, ::testing::Range(0, 20));
