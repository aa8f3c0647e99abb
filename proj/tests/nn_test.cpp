#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/gradcheck.hpp"
#include "tsforge/core/ops.hpp"
#include "tsforge/error.hpp"
#include "tsforge/nn/backbone.hpp"

using namespace tsforge;
using namespace tsforge::nn;

namespace {

Tensor randn(Shape s, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor::randn(std::move(s), rng, sd);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Random scalar projection so gradient checks see every output entry.
Tensor project(const Tensor& y, std::uint64_t seed) { return sum(y * randn(y.shape(), seed)); }

AttentionAux frequency_aux(std::size_t h, std::size_t dk, std::size_t m, std::uint64_t seed) {
  AttentionAux aux;
  aux.kernel_re = randn({h, dk, m}, seed);
  aux.kernel_im = randn({h, dk, m}, seed + 1);
  return aux;
}

}  // namespace

TEST(Attention, RowsSumToOne) {
  for (auto kind : {AttentionKind::self, AttentionKind::sparse, AttentionKind::destationary}) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const Tensor q = randn({2, 4, 9, 3}, s), k = randn({2, 4, 9, 3}, s + 100), v = randn({2, 4, 9, 3}, s + 200);
      AttentionAux aux;
      aux.tau = exp(randn({2, 1, 1, 1}, s + 300));
      aux.delta = randn({2, 1, 1, 9}, s + 400);
      const auto out = attention(q, k, v, kind, aux);
      const auto W = out.weights.data();
      for (std::size_t r = 0; r < 2 * 4 * 9; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < 9; ++j) total += W[r * 9 + j];
        EXPECT_NEAR(total, 1.0, 1e-6);
      }
    }
  }
}

TEST(Attention, ZeroScoresGiveMeanOfValues) {
  const Tensor z = Tensor::zeros({1, 1, 5, 2});
  const Tensor v = randn({1, 1, 5, 2}, 3);
  const auto out = attention(z, z, v, AttentionKind::self);
  for (double w : out.weights.data()) EXPECT_NEAR(w, 0.2, 1e-15);
  const Tensor m = mean(v, 2, true);
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out.values.at({0, 0, t, j}), m.at({0, 0, 0, j}), 1e-12);
  }
}

TEST(Attention, SingleTokenIsIdentityWeighted) {
  const Tensor v = randn({2, 4, 1, 3}, 5);
  const auto out = attention(randn({2, 4, 1, 3}, 6), randn({2, 4, 1, 3}, 7), v, AttentionKind::self);
  for (double w : out.weights.data()) EXPECT_EQ(w, 1.0);
  EXPECT_LT(max_abs_diff(out.values, v), 1e-15);
}

TEST(Attention, SelfMatchesBruteForce) {
  const std::size_t n = 5, dk = 4;
  const Tensor q = randn({1, 1, n, dk}, 10), k = randn({1, 1, n, dk}, 11), v = randn({1, 1, n, dk}, 12);
  const auto out = attention(q, k, v, AttentionKind::self);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n);
    double mx = -1e300, z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < dk; ++c) dot += q.at({0, 0, i, c}) * k.at({0, 0, j, c});
      s[j] = dot / 2.0;
      mx = std::max(mx, s[j]);
    }
    for (auto& x : s) z += (x = std::exp(x - mx));
    for (std::size_t c = 0; c < dk; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += s[j] / z * v.at({0, 0, j, c});
      EXPECT_NEAR(out.values.at({0, 0, i, c}), acc, 1e-12);
    }
  }
}

TEST(Attention, SparseDegeneratesToSelf) {
  const Tensor q = randn({2, 4, 6, 3}, 1), k = randn({2, 4, 6, 3}, 2), v = randn({2, 4, 6, 3}, 3);
  EXPECT_GE(sparse_top_u(6), 6u);
  const auto full = attention(q, k, v, AttentionKind::self);
  const auto sparse = attention(q, k, v, AttentionKind::sparse);
  EXPECT_EQ(max_abs_diff(full.values, sparse.values), 0.0);
}

TEST(Attention, SparseFillsUnselectedWithMeanValue) {
  const std::size_t n = 40;
  EXPECT_EQ(sparse_top_u(n), 19u);  // ceil(5 ln 40)
  const Tensor q = randn({1, 2, n, 3}, 4), k = randn({1, 2, n, 3}, 5), v = randn({1, 2, n, 3}, 6);
  const auto full = attention(q, k, v, AttentionKind::self);
  const auto sparse = attention(q, k, v, AttentionKind::sparse);
  ASSERT_EQ(sparse.selected.size(), 2 * 19u);
  const Tensor mv = mean(v, 2, true);
  for (std::size_t h = 0; h < 2; ++h) {
    std::vector<bool> chosen(n, false);
    for (std::size_t i = 0; i < 19; ++i) chosen[sparse.selected[h * 19 + i]] = true;
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t j = 0; j < 3; ++j) {
        const double expect = chosen[t] ? full.values.at({0, h, t, j}) : mv.at({0, h, 0, j});
        EXPECT_NEAR(sparse.values.at({0, h, t, j}), expect, 1e-15);
      }
    }
  }
}

TEST(Attention, SparseSelectsHighestMeasure) {
  const std::size_t n = 30;
  const Tensor q = randn({1, 1, n, 2}, 7), k = randn({1, 1, n, 2}, 8);
  const auto out = attention(q, k, k, AttentionKind::sparse);
  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -1e300, sm = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double s = (q.at({0, 0, i, 0}) * k.at({0, 0, j, 0}) + q.at({0, 0, i, 1}) * k.at({0, 0, j, 1})) / std::sqrt(2.0);
      mx = std::max(mx, s);
      sm += s;
    }
    m[i] = mx - sm / n;
  }
  const std::size_t u = sparse_top_u(n);
  std::vector<double> sorted = m;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  for (std::size_t i = 0; i < u; ++i) EXPECT_GE(m[out.selected[i]], sorted[u - 1]);
}

TEST(AutoCorrelation, FftMatchesBruteForce) {
  const std::size_t n = 32;
  const Tensor q = randn({1, 1, n, 2}, 21), k = randn({1, 1, n, 2}, 22);
  const Tensor corr = circular_correlation(q, k);
  ASSERT_EQ(corr.shape(), (Shape{1, 1, 2, n}));
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t tau = 0; tau < n; ++tau) {
      double acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) acc += q.at({0, 0, (t + tau) % n, j}) * k.at({0, 0, t, j});
      EXPECT_NEAR(corr.at({0, 0, j, tau}), acc, 1e-5);
    }
  }
}

TEST(AutoCorrelation, LagZeroIsEnergy) {
  const Tensor x = randn({1, 1, 24, 1}, 9);
  const Tensor corr = circular_correlation(x, x);
  const double energy = sum(square(x)).item();
  EXPECT_NEAR(corr.at({0, 0, 0, 0}), energy, 1e-9);
  EXPECT_NEAR(corr.at({0, 0, 0, 0}) / energy, 1.0, 1e-12);
  for (std::size_t t = 1; t < 24; ++t) EXPECT_LE(corr.at({0, 0, 0, t}), energy + 1e-9);
}

TEST(AutoCorrelation, TopKAndAggregation) {
  EXPECT_EQ(autocorr_top_k(96), 5u);
  EXPECT_EQ(autocorr_top_k(1), 1u);
  // A period-4 signal: the dominant delay is a multiple of 4, and aggregating
  // a single delay of 4 reproduces the input.
  std::vector<double> s(16);
  for (std::size_t t = 0; t < 16; ++t) s[t] = std::sin(2.0 * M_PI * t / 4.0) + 0.1;
  const Tensor v = Tensor::from_data({1, 1, 16, 1}, s);
  const Tensor rolled = delay_aggregate(v, Tensor::ones({1, 1}), {4});
  EXPECT_LT(max_abs_diff(rolled, v), 1e-12);
  const Tensor shifted = delay_aggregate(v, Tensor::ones({1, 1}), {1});
  EXPECT_NEAR(shifted.at({0, 0, 0, 0}), s[1], 1e-15);
}

TEST(Frequency, FullModesIdentityKernelIsIdentity) {
  for (std::size_t n : {8, 9, 32}) {
    const Tensor v = randn({2, 4, n, 3}, n);
    AttentionAux aux;
    aux.kernel_re = Tensor::ones({4, 3, n / 2 + 1});
    aux.kernel_im = Tensor::zeros({4, 3, n / 2 + 1});
    EXPECT_LT(max_abs_diff(attention(v, v, v, AttentionKind::frequency, aux).values, v), 1e-9);
  }
  EXPECT_EQ(frequency_modes(96), 16u);
  EXPECT_EQ(frequency_modes(7), 3u);
  EXPECT_EQ(frequency_modes(1), 1u);
}

TEST(Attention, GradientsAllKinds) {
  const std::size_t n = 7;
  for (auto kind : {AttentionKind::self, AttentionKind::sparse, AttentionKind::auto_correlation,
                    AttentionKind::frequency, AttentionKind::destationary}) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const Tensor q = randn({2, 2, n, 3}, s), k = randn({2, 2, n, 3}, s + 10), v = randn({2, 2, n, 3}, s + 20);
      const Tensor tau = randn({2, 1, 1, 1}, s + 30, 0.3), delta = randn({2, 1, 1, n}, s + 40);
      const AttentionAux f = frequency_aux(2, 3, 3, s + 50);
      auto fn = [&](const std::vector<Tensor>& in) {
        AttentionAux aux;
        aux.tau = exp(in[3]);
        aux.delta = in[4];
        aux.kernel_re = in[5];
        aux.kernel_im = in[6];
        aux.top_u = 3;
        return project(attention(in[0], in[1], in[2], kind, aux).values, s + 99);
      };
      EXPECT_TRUE(tsforge::testing::grad_check(fn, {q, k, v, tau, delta, f.kernel_re, f.kernel_im}).ok())
          << int(kind) << " seed " << s;
    }
  }
}

TEST(Attention, HeadPermutationEquivalence) {
  const std::size_t d = 8, heads = 4, dk = 2, n = 6;
  std::mt19937_64 rng_a(3), rng_b(3);
  MultiHeadAttention a(AttentionKind::self, d, heads, n, rng_a);
  MultiHeadAttention b(AttentionKind::self, d, heads, n, rng_b);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  auto col = [&](std::size_t c) { return perm[c / dk] * dk + c % dk; };
  for (Linear* (MultiHeadAttention::*get)() : {&MultiHeadAttention::query, &MultiHeadAttention::key, &MultiHeadAttention::value}) {
    Linear* la = (a.*get)();
    Linear* lb = (b.*get)();
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t c = 0; c < d; ++c) lb->weight().mutable_data()[i * d + c] = la->weight().data()[i * d + col(c)];
    }
    for (std::size_t c = 0; c < d; ++c) lb->bias().mutable_data()[c] = la->bias().data()[col(c)];
  }
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < d; ++c) b.output()->weight().mutable_data()[r * d + c] = a.output()->weight().data()[col(r) * d + c];
  }
  const Tensor x = randn({3, n, d}, 17);
  EXPECT_LT(max_abs_diff(a.forward(x), b.forward(x)), 1e-12);
}

TEST(Mlp, ZeroMixingAndFeedForwardGiveLayerNorm) {
  BackboneSpec spec{.network = NetworkType::mlp, .d_model = 8, .d_ff = 16, .layers = 1, .n_tokens = 5};
  std::mt19937_64 rng(1);
  MlpBackbone mlp(spec, rng);
  for (Linear* l : {&mlp.mixer(0), &mlp.ffn_out(0)}) {
    std::fill(l->weight().mutable_data().begin(), l->weight().mutable_data().end(), 0.0);
    std::fill(l->bias().mutable_data().begin(), l->bias().mutable_data().end(), 0.0);
  }
  const Tensor x = randn({2, 5, 8}, 4, 3.0);
  const Tensor y = mlp.forward(x);
  const Tensor ln = layer_norm(x, Tensor::ones({8}), Tensor::zeros({8}));
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_LT(max_abs_diff(y, ln), 1e-5);
}

TEST(Mlp, GradientCheck) {
  BackboneSpec spec{.network = NetworkType::mlp, .d_model = 8, .d_ff = 12, .layers = 2, .n_tokens = 4};
  std::mt19937_64 rng(2);
  MlpBackbone mlp(spec, rng);
  auto fn = [&](const std::vector<Tensor>& in) { return project(mlp.forward(in[0]), 5); };
  EXPECT_TRUE(tsforge::testing::grad_check(fn, {randn({2, 4, 8}, 3)}).ok());
}

TEST(Gru, ZeroInputZeroWeightsStaysZero) {
  const Tensor gx = Tensor::zeros({2, 5, 9});
  const Tensor h = gru_sequence(gx, Tensor::zeros({3, 9}), Tensor::zeros({9}));
  for (double v : h.data()) EXPECT_EQ(v, 0.0);
}

TEST(Gru, OneStepHandComputed) {
  // H = 2, input term gx = [r0 r1 | z0 z1 | n0 n1]; one step from h = 0.
  const Tensor gx = Tensor::from_data({1, 1, 6}, {0.5, -0.3, 0.2, 0.1, 1.0, -2.0});
  const Tensor bh = Tensor::from_data({6}, {0.1, 0.2, -0.1, 0.3, 0.4, -0.5});
  const Tensor h = gru_sequence(gx, randn({2, 6}, 1), bh);
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  const double r0 = sig(0.5 + 0.1), r1 = sig(-0.3 + 0.2);
  const double z0 = sig(0.2 - 0.1), z1 = sig(0.1 + 0.3);
  const double n0 = std::tanh(1.0 + r0 * 0.4), n1 = std::tanh(-2.0 + r1 * -0.5);
  EXPECT_NEAR(h.at({0, 0, 0}), (1 - z0) * n0, 1e-15);
  EXPECT_NEAR(h.at({0, 0, 1}), (1 - z1) * n1, 1e-15);
}

TEST(Gru, TwoStepsHandComputed) {
  const Tensor gx = Tensor::from_data({1, 2, 3}, {0.2, -0.1, 0.7, -0.4, 0.3, 0.1});
  const Tensor wh = Tensor::from_data({1, 3}, {0.5, -0.6, 0.9});
  const Tensor bh = Tensor::from_data({3}, {0.0, 0.1, -0.2});
  const Tensor h = gru_sequence(gx, wh, bh);
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  double prev = 0.0;
  for (std::size_t t = 0; t < 2; ++t) {
    const double r = sig(gx.at({0, t, 0}) + 0.5 * prev);
    const double z = sig(gx.at({0, t, 1}) - 0.6 * prev + 0.1);
    const double c = std::tanh(gx.at({0, t, 2}) + r * (0.9 * prev - 0.2));
    prev = (1 - z) * c + z * prev;
    EXPECT_NEAR(h.at({0, t, 0}), prev, 1e-15);
  }
}

TEST(Gru, HiddenStatesBounded) {
  const Tensor h = gru_sequence(randn({3, 20, 12}, 3, 5.0), randn({4, 12}, 4, 2.0), randn({12}, 5));
  for (double v : h.data()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Gru, GradientCheck) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto fn = [&](const std::vector<Tensor>& in) { return project(gru_sequence(in[0], in[1], in[2]), s); };
    EXPECT_TRUE(tsforge::testing::grad_check(fn, {randn({2, 6, 9}, s), randn({3, 9}, s + 1, 0.5), randn({9}, s + 2)}).ok());
  }
  BackboneSpec spec{.network = NetworkType::rnn, .d_model = 4, .d_ff = 8, .layers = 2, .n_tokens = 5};
  std::mt19937_64 rng(2);
  GruBackbone gru(spec, rng);
  auto fn = [&](const std::vector<Tensor>& in) { return project(gru.forward(in[0]), 8); };
  EXPECT_TRUE(tsforge::testing::grad_check(fn, {randn({2, 5, 4}, 3)}).ok());
}

TEST(Transformer, ShapePreservedForEverySpec) {
  for (int sa = 0; sa < 6; ++sa) {
    for (int fa = 0; fa < 4; ++fa) {
      for (bool ci : {false, true}) {
        BackboneSpec spec{.network = NetworkType::transformer, .d_model = 8, .d_ff = 16, .layers = 2,
                          .series_attention = SeriesAttention(sa), .feature_attention = FeatureAttention(fa),
                          .n_tokens = 6, .ci = ci, .channels = 3, .stats_dim = ci ? 2u : 6u};
        std::mt19937_64 rng(sa * 10 + fa);
        auto bb = make_backbone(spec, rng);
        const std::size_t rows = ci ? 6 : 2;
        const Tensor x = randn({rows, 6, 8}, 1);
        const Tensor y = bb->forward(x, randn({rows, spec.stats_dim}, 2));
        EXPECT_EQ(y.shape(), x.shape());
        EXPECT_TRUE(all_finite(y));
      }
    }
  }
}

TEST(Transformer, GradientCheck) {
  struct Case {
    SeriesAttention sa;
    FeatureAttention fa;
    bool ci;
  };
  for (auto c : {Case{SeriesAttention::self, FeatureAttention::self, true},
                 Case{SeriesAttention::destationary, FeatureAttention::frequency, false},
                 Case{SeriesAttention::auto_correlation, FeatureAttention::sparse, true}}) {
    BackboneSpec spec{.network = NetworkType::transformer, .d_model = 8, .d_ff = 8, .layers = 1,
                      .series_attention = c.sa, .feature_attention = c.fa, .n_tokens = 4, .ci = c.ci,
                      .channels = 2, .stats_dim = 2};
    std::mt19937_64 rng(7);
    auto bb = make_backbone(spec, rng);
    const Tensor stats = randn({4, 2}, 3, 0.3);
    auto fn = [&](const std::vector<Tensor>& in) { return project(bb->forward(in[0], in[1]), 9); };
    EXPECT_TRUE(tsforge::testing::grad_check(fn, {randn({4, 4, 8}, 4), stats}).ok()) << int(c.sa);
  }
}

TEST(Backbone, InvalidSpecsRejected) {
  std::mt19937_64 rng(0);
  BackboneSpec mlp{.network = NetworkType::mlp, .series_attention = SeriesAttention::self};
  try {
    make_backbone(mlp, rng);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_STREQ(e.what(), "MLP excludes series attention");
  }
  EXPECT_THROW(make_backbone({.network = NetworkType::rnn, .feature_attention = FeatureAttention::self}, rng), ConfigError);
  EXPECT_THROW(make_backbone({.network = NetworkType::llm}, rng), ConfigError);
  BackboneSpec dst{.network = NetworkType::transformer, .d_model = 8, .d_ff = 8,
                   .series_attention = SeriesAttention::destationary, .n_tokens = 3};
  auto bb = make_backbone(dst, rng);
  EXPECT_THROW(bb->forward(randn({1, 3, 8}, 0)), ConfigError);
}
