#include <gtest/gtest.h>

#include <random>

#include "support/gradcheck.hpp"
#include "tsforge/core/ops.hpp"
#include "tsforge/enc/encoding.hpp"
#include "tsforge/error.hpp"

using namespace tsforge;
using namespace tsforge::enc;

namespace {

Tensor random_batch(std::size_t b, std::size_t l, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::randn({b, l, c}, rng);
}

Tensor random_marks(std::size_t b, std::size_t l, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::uniform({b, l, kTimeFeatures}, rng, -0.5, 0.5);
}

// Runs tokenizer + head for a [B, L, C] batch under the given layout.
struct Pipeline {
  std::unique_ptr<Tokenizer> tok;
  std::unique_ptr<ForecastHead> head;
  bool ci;
  std::size_t channels;
  bool ts;

  Pipeline(Embedding e, bool ci_, std::size_t len, std::size_t c, std::size_t d, std::size_t horizon, bool ts_,
           std::uint64_t seed)
      : ci(ci_), channels(c), ts(ts_) {
    std::mt19937_64 rng(seed);
    TokenizerOptions o{.choice = e, .channels = ci ? 1 : c, .seq_len = len, .d_model = d, .with_timestamps = ts};
    tok = std::make_unique<Tokenizer>(o, rng);
    const Layout layout = e == Embedding::inverted ? Layout::inverted
                          : e == Embedding::patch  ? Layout::patch
                                                   : Layout::pointwise;
    head = std::make_unique<ForecastHead>(layout, tok->n_tokens(), d, horizon, c, ci, rng);
  }

  Tensor run(const Tensor& x, const Tensor& mark) const {
    const Tensor xi = apply_channel_independence(x, ci);
    Tensor m;
    if (ts) m = ci ? repeat_for_channels(mark, channels) : mark;
    return head->project(tok->tokenize(xi, m, {x.size(0), channels, ci}));
  }
};

}  // namespace

TEST(ChannelIndependence, ReshapeAndInverse) {
  const Tensor x = random_batch(2, 96, 7, 1);
  const Tensor y = apply_channel_independence(x, true);
  EXPECT_EQ(y.shape(), (Shape{14, 96, 1}));
  EXPECT_EQ(y.at({3, 5, 0}), x.at({0, 5, 3}));
  EXPECT_EQ(y.at({9, 5, 0}), x.at({1, 5, 2}));
  const Tensor back = invert_channel_independence(y, 2, 7, true);
  ASSERT_EQ(back.shape(), x.shape());
  EXPECT_TRUE(std::equal(back.data().begin(), back.data().end(), x.data().begin()));
  EXPECT_EQ(apply_channel_independence(x, false).node(), x.node());
}

TEST(Tokenize, TokenCounts) {
  EXPECT_EQ(token_count(Embedding::patch, 96, 1, false), 11u);
  for (std::size_t len : {48, 96, 192, 512}) {
    EXPECT_EQ(token_count(Embedding::positional, len, 3, false), len);
    EXPECT_EQ(token_count(Embedding::patch, len, 3, false), (len - 16) / 8 + 1);
    EXPECT_EQ(token_count(Embedding::inverted, len, 3, false), 3u);
    EXPECT_EQ(token_count(Embedding::inverted, len, 3, true), 4u);
    for (auto e : {Embedding::positional, Embedding::patch}) {
      for (bool ts : {false, true}) {
        std::mt19937_64 rng(0);
        Tokenizer t({.choice = e, .channels = 3, .seq_len = len, .d_model = 8, .with_timestamps = ts}, rng);
        auto tb = t.tokenize(random_batch(2, len, 3, 1), ts ? random_marks(2, len, 2) : Tensor(), {2, 3, false});
        EXPECT_EQ(tb.tokens.shape(), (Shape{2, token_count(e, len, 3, ts), 8}));
      }
    }
  }
  EXPECT_THROW(token_count(Embedding::patch, 12, 1, false), ConfigError);
}

TEST(Tokenize, InvertedOneTokenPerVariate) {
  std::mt19937_64 rng(0);
  Tokenizer t({.choice = Embedding::inverted, .channels = 7, .seq_len = 96, .d_model = 16}, rng);
  auto tb = t.tokenize(random_batch(3, 96, 7, 1), {}, {3, 7, false});
  EXPECT_EQ(tb.tokens.shape(), (Shape{3, 7, 16}));
  EXPECT_EQ(tb.layout, Layout::inverted);
}

TEST(Tokenize, SinusoidalStartsAlternating) {
  const Tensor pe = sinusoidal_positions(10, 8);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(pe.at({0, i}), i % 2 == 0 ? 0.0 : 1.0);
  EXPECT_NEAR(pe.at({3, 0}), std::sin(3.0), 1e-15);
  EXPECT_NEAR(pe.at({3, 2}), std::sin(3.0 / std::pow(10000.0, 2.0 / 8.0)), 1e-15);
}

TEST(Tokenize, Errors) {
  std::mt19937_64 rng(0);
  EXPECT_THROW(Tokenizer({.choice = Embedding::patch, .channels = 1, .seq_len = 8, .d_model = 4}, rng), ConfigError);
  Tokenizer t({.choice = Embedding::positional, .channels = 2, .seq_len = 16, .d_model = 4, .with_timestamps = true}, rng);
  EXPECT_THROW(t.tokenize(random_batch(1, 16, 2, 0), random_marks(1, 15, 0), {1, 2, false}), ShapeError);
  EXPECT_THROW(t.tokenize(random_batch(1, 16, 3, 0), random_marks(1, 16, 0), {1, 3, false}), ShapeError);
}

TEST(Timestamps, Scaling) {
  std::vector<CalendarStamp> stamps;
  for (int h = 0; h < 24; ++h) stamps.push_back({2020, 1 + h % 12, 1 + h, h % 7, h, 0});
  const Tensor f = timestamp_features(stamps);
  EXPECT_EQ(f.shape(), (Shape{24, 4}));
  EXPECT_DOUBLE_EQ(f.at({0, 3}), -0.5);
  EXPECT_DOUBLE_EQ(f.at({23, 3}), 0.5);
  for (std::size_t i = 1; i < 24; ++i) EXPECT_GT(f.at({i, 3}), f.at({i - 1, 3}));
  for (double v : f.data()) {
    EXPECT_GE(v, -0.5);
    EXPECT_LE(v, 0.5);
  }
  EXPECT_DOUBLE_EQ(timestamp_features({{2020, 12, 31, 6, 23, 59}}).at({0, 0}), 0.5);
}

TEST(Head, ShapeContract) {
  Pipeline ci(Embedding::patch, true, 48, 3, 8, 24, false, 1);
  EXPECT_EQ(ci.run(random_batch(2, 48, 3, 0), {}).shape(), (Shape{2, 24, 3}));
  Pipeline cd(Embedding::positional, false, 48, 3, 8, 24, true, 1);
  EXPECT_EQ(cd.run(random_batch(2, 48, 3, 0), random_marks(2, 48, 0)).shape(), (Shape{2, 24, 3}));
  Pipeline inv(Embedding::inverted, false, 48, 3, 8, 24, true, 1);
  EXPECT_EQ(inv.run(random_batch(2, 48, 3, 0), random_marks(2, 48, 0)).shape(), (Shape{2, 24, 3}));
}

TEST(Head, InvertedForecastDependsOnlyOnOwnVariate) {
  Pipeline inv(Embedding::inverted, false, 32, 3, 8, 12, false, 4);
  const Tensor x = random_batch(1, 32, 3, 5);
  Tensor x2 = x.clone();
  for (std::size_t t = 0; t < 32; ++t) x2.mutable_data()[t * 3 + 1] += 1.0;  // perturb variate 1
  const Tensor a = inv.run(x, {}), b = inv.run(x2, {});
  for (std::size_t t = 0; t < 12; ++t) {
    EXPECT_EQ(a.at({0, t, 0}), b.at({0, t, 0}));
    EXPECT_NE(a.at({0, t, 1}), b.at({0, t, 1}));
    EXPECT_EQ(a.at({0, t, 2}), b.at({0, t, 2}));
  }
}

TEST(Head, ZeroWeightsGiveZeroForecast) {
  Pipeline p(Embedding::patch, false, 48, 2, 8, 6, false, 3);
  std::fill(p.head->linear().weight().mutable_data().begin(), p.head->linear().weight().mutable_data().end(), 0.0);
  std::fill(p.head->linear().bias().mutable_data().begin(), p.head->linear().bias().mutable_data().end(), 0.0);
  const Tensor y = p.run(random_batch(2, 48, 2, 0), {});
  EXPECT_EQ(y.shape(), (Shape{2, 6, 2}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Head, ProvenanceMismatchRejected) {
  Pipeline p(Embedding::positional, true, 16, 2, 4, 3, false, 3);
  auto tb = p.tok->tokenize(apply_channel_independence(random_batch(2, 16, 2, 0), true), {}, {2, 2, true});
  tb.provenance.batch = 3;
  EXPECT_THROW(p.head->project(tb), ShapeError);
}

TEST(Head, ChannelPermutationEquivariance) {
  for (auto e : {Embedding::positional, Embedding::patch}) {
    Pipeline p(e, true, 32, 4, 8, 5, true, 11);
    const Tensor x = random_batch(2, 32, 4, 3);
    const Tensor mark = random_marks(2, 32, 4);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    const Tensor y = p.run(x, mark);
    const Tensor yp = p.run(index_select(x, 2, perm), mark);
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t t = 0; t < 5; ++t) {
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(yp.at({b, t, c}), y.at({b, t, perm[c]}));
      }
    }
  }
}

TEST(Head, GradientThroughTokenizeAndHead) {
  struct Case {
    Embedding e;
    bool ci, ts;
  };
  for (auto cs : {Case{Embedding::positional, false, true}, Case{Embedding::positional, true, false},
                  Case{Embedding::patch, true, true}, Case{Embedding::patch, false, false},
                  Case{Embedding::inverted, false, true}}) {
    Pipeline p(cs.e, cs.ci, 20, 2, 4, 3, cs.ts, 5);
    const Tensor x = random_batch(2, 20, 2, 6);
    const Tensor mark = random_marks(2, 20, 7);
    const Tensor w = random_batch(2, 3, 2, 8);
    auto fn = [&](const std::vector<Tensor>& in) { return sum(p.run(in[0], in[1]) * w); };
    EXPECT_TRUE(tsforge::testing::grad_check(fn, {x, mark}).ok()) << int(cs.e);
  }
}
