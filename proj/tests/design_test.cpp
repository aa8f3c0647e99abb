#include <gtest/gtest.h>

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "tsforge/design/space.hpp"
#include "tsforge/error.hpp"

using namespace tsforge;
using namespace tsforge::design;

namespace {

DesignSpace toy_space() {
  return DesignSpace({
      {"a", "A", {"x", "y", "z"}, Stage::preprocess},
      {"b", "B", {"0", "1"}, Stage::encode},
      {"c", "C", {"p", "q", "r", "s"}, Stage::optimize},
  });
}

RuleSet toy_rules() {
  // Excludes a=z together with c=s.
  return {{"z_s", "z excludes s", [](const DesignSpace&, const PipelineConfig& c) {
             return c.choices[0] == 2 && c.choices[2] == 3;
           }}};
}

PipelineConfig with(PipelineConfig c, std::string_view key, std::string_view value) {
  const auto& space = DesignSpace::standard();
  const auto i = space.index_of(key);
  const auto& ch = space[i].choices;
  c.choices[i] = static_cast<std::uint8_t>(std::find(ch.begin(), ch.end(), value) - ch.begin());
  return c;
}

PipelineConfig valid_base() {
  const auto& space = DesignSpace::standard();
  return parse_config(space,
                      "series_normalization=RevIN\nseries_decomposition=None\nseries_sampling_mixing=False\n"
                      "channel_independent=True\nsequence_length=96\nseries_embedding=Series Patching\n"
                      "with_timestamps=False\nnetwork_type=Transformer\nseries_attention=SelfAttn\n"
                      "feature_attention=Null\nd_model_d_ff=64/256\nencoder_layers=2\nepochs=10\n"
                      "loss_function=MSE\nlearning_rate=1e-3\nlearning_rate_strategy=Null\n");
}

}  // namespace

TEST(DesignSpace, RegistryMatchesTable) {
  const auto& space = DesignSpace::standard();
  ASSERT_EQ(space.size(), 16u);
  const auto& norm = space[space.index_of("series_normalization")];
  EXPECT_EQ(norm.name, "Series Normalization");
  EXPECT_EQ(norm.choices, (std::vector<std::string>{"None", "Stat", "RevIN", "DishTS"}));
  EXPECT_EQ(space[space.index_of("network_type")].choices,
            (std::vector<std::string>{"MLP", "RNN", "Transformer", "LLM", "TSFM"}));
  EXPECT_EQ(space[space.index_of("series_attention")].choices,
            (std::vector<std::string>{"Null", "SelfAttn", "AutoCorr", "SparseAttn", "FrequencyAttn",
                                      "DestationaryAttn"}));
  EXPECT_EQ(space[space.index_of("series_embedding")].choices,
            (std::vector<std::string>{"Inverted Encoding", "Positional Encoding", "Series Patching"}));
  EXPECT_EQ(space[space.index_of("sequence_length")].choices,
            (std::vector<std::string>{"48", "96", "192", "512"}));
  EXPECT_THROW(space.index_of("nope"), ConfigError);
}

TEST(DesignSpace, RawSizeIsProductOfCardinalities) {
  const auto& space = DesignSpace::standard();
  std::uint64_t product = 1;
  for (const auto& d : space.dimensions()) product *= d.choices.size();
  EXPECT_EQ(space.raw_size(), product);
  EXPECT_EQ(count_valid(toy_space(), {}), 24u);
}

TEST(DesignSpace, ValidCountMatchesIndependentFilter) {
  // Oracle: product over the instantiable network types with the rule
  // implications counted by hand per (network, embedding, normalization, attention) group.
  const auto& space = DesignSpace::standard();
  auto card = [&](std::string_view k) -> std::uint64_t { return space[space.index_of(k)].choices.size(); };
  const std::uint64_t free_dims = card("series_decomposition") * card("series_sampling_mixing") *
                                  card("sequence_length") * card("with_timestamps") * card("d_model_d_ff") *
                                  card("encoder_layers") * card("epochs") * card("loss_function") *
                                  card("learning_rate") * card("learning_rate_strategy");
  std::uint64_t groups = 0;
  for (int net = 0; net < 3; ++net) {         // MLP, RNN, Transformer
    for (int emb = 0; emb < 3; ++emb) {       // Inverted, Positional, Patching
      for (int ci = 0; ci < 2; ++ci) {
        if (emb == 0 && ci == 1) continue;
        for (int norm = 0; norm < 4; ++norm) {
          for (int sa = 0; sa < 6; ++sa) {
            if (net < 2 && sa != 0) continue;
            if (sa == 5 && norm != 1 && norm != 2) continue;
            for (int fa = 0; fa < 4; ++fa) {
              if (net < 2 && fa != 0) continue;
              if (emb == 0 && fa != 0) continue;
              ++groups;
            }
          }
        }
      }
    }
  }
  const std::uint64_t expected = groups * free_dims;
  const std::uint64_t first = count_valid(space, default_rules());
  EXPECT_EQ(first, expected);
  EXPECT_EQ(count_valid(space, default_rules()), first);
}

TEST(DesignSpace, MlpWithSeriesAttentionRejected) {
  const auto& space = DesignSpace::standard();
  auto c = with(with(valid_base(), "network_type", "MLP"), "series_attention", "SelfAttn");
  const auto why = violations(space, default_rules(), c);
  ASSERT_FALSE(why.empty());
  EXPECT_NE(std::find(why.begin(), why.end(), "MLP excludes series attention"), why.end());
  EXPECT_FALSE(is_valid(space, default_rules(), c));
  EXPECT_TRUE(is_valid(space, default_rules(), valid_base()));
}

TEST(DesignSpace, OtherRules) {
  const auto& space = DesignSpace::standard();
  const auto& rules = default_rules();
  EXPECT_FALSE(is_valid(space, rules, with(valid_base(), "network_type", "LLM")));
  EXPECT_FALSE(is_valid(space, rules, with(valid_base(), "network_type", "TSFM")));
  auto dst = with(valid_base(), "series_attention", "DestationaryAttn");
  EXPECT_TRUE(is_valid(space, rules, dst));
  EXPECT_FALSE(is_valid(space, rules, with(dst, "series_normalization", "None")));
  EXPECT_FALSE(is_valid(space, rules, with(dst, "series_normalization", "DishTS")));
  auto inv = with(valid_base(), "series_embedding", "Inverted Encoding");
  EXPECT_FALSE(is_valid(space, rules, inv));  // CI=True
  inv = with(inv, "channel_independent", "False");
  EXPECT_TRUE(is_valid(space, rules, inv));
  EXPECT_FALSE(is_valid(space, rules, with(inv, "feature_attention", "SelfAttn")));
  auto rnn = with(with(valid_base(), "network_type", "RNN"), "series_attention", "Null");
  EXPECT_TRUE(is_valid(space, rules, rnn));
  EXPECT_FALSE(is_valid(space, rules, with(rnn, "feature_attention", "FrequencyAttn")));
}

TEST(DesignSpace, CanonicalTextAndParse) {
  const auto& space = DesignSpace::standard();
  const auto c = valid_base();
  const auto text = canonical_text(space, c);
  EXPECT_EQ(text.substr(0, text.find('\n')), "channel_independent=True");
  EXPECT_EQ(text.back(), '\n');
  EXPECT_EQ(parse_config(space, text), c);
  EXPECT_EQ(parse_config(space, compact_text(space, c)), c);
  EXPECT_EQ(config_hash(space, c), fnv1a64(text));
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hash_hex(0xabcULL), "0000000000000abc");
  EXPECT_THROW(parse_config(space, "series_normalization=Foo\n"), ConfigError);
  EXPECT_THROW(parse_config(space, "epochs=10\n"), ConfigError);
  EXPECT_THROW(parse_config(space, text + "epochs=20\n"), ConfigError);
}

TEST(DesignSpace, SpecRoundTrip) {
  const auto& space = DesignSpace::standard();
  int checked = 0;
  for (const auto& c : sample_random(space, default_rules(), 200, 11)) {
    EXPECT_EQ(from_spec(to_spec(c)), c);
    ++checked;
  }
  EXPECT_EQ(checked, 200);
  const auto s = to_spec(valid_base());
  EXPECT_EQ(s.normalization, Normalization::revin);
  EXPECT_EQ(s.embedding, Embedding::patch);
  EXPECT_EQ(s.seq_len, 96u);
  EXPECT_EQ(s.d_ff, 256u);
  EXPECT_TRUE(s.channel_independent);
}

TEST(DesignSpace, EnumerationIsLexicographic) {
  const auto space = toy_space();
  ConfigEnumerator e(space, toy_rules());
  std::vector<PipelineConfig> all;
  while (auto c = e.next()) all.push_back(*c);
  EXPECT_EQ(all.size(), 22u);
  EXPECT_TRUE(std::is_sorted(all.begin(), all.end()));
  EXPECT_EQ(all.front().choices, (std::vector<std::uint8_t>{0, 0, 0}));
  EXPECT_EQ(all.back().choices, (std::vector<std::uint8_t>{2, 1, 2}));
}

TEST(DesignSpace, SharedCursorClaimsEachOnce) {
  const auto space = toy_space();
  const auto rules = toy_rules();
  SharedConfigCursor cursor(space, rules);
  std::vector<std::vector<PipelineConfig>> got(4);
  std::vector<std::thread> workers;
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&, w] {
      while (auto c = cursor.claim()) got[w].push_back(*c);
    });
  }
  for (auto& t : workers) t.join();
  std::multiset<PipelineConfig> seen;
  for (auto& g : got) seen.insert(g.begin(), g.end());
  EXPECT_EQ(seen.size(), 22u);
  EXPECT_EQ(std::set<PipelineConfig>(seen.begin(), seen.end()).size(), 22u);
}

TEST(Sampling, RandomIsDistinctValidAndReproducible) {
  const auto& space = DesignSpace::standard();
  const auto a = sample_random(space, default_rules(), 300, 42);
  const auto b = sample_random(space, default_rules(), 300, 42);
  EXPECT_EQ(a, b);
  EXPECT_EQ(std::set<PipelineConfig>(a.begin(), a.end()).size(), a.size());
  for (const auto& c : a) EXPECT_TRUE(is_valid(space, default_rules(), c));
  EXPECT_NE(a, sample_random(space, default_rules(), 300, 43));
}

TEST(Sampling, FullSetAndTooMany) {
  const auto space = toy_space();
  auto all = sample_random(space, toy_rules(), 22, 5);
  std::sort(all.begin(), all.end());
  std::vector<PipelineConfig> expected;
  ConfigEnumerator e(space, toy_rules());
  while (auto c = e.next()) expected.push_back(*c);
  EXPECT_EQ(all, expected);
  EXPECT_THROW(sample_random(space, toy_rules(), 23, 5), ConfigError);
}

TEST(Sampling, ChiSquareUniformity) {
  const auto space = toy_space();
  const auto rules = toy_rules();
  std::map<PipelineConfig, int> counts;
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) counts[sample_random(space, rules, 1, 1000 + s).front()]++;
  ASSERT_EQ(counts.size(), 22u);
  const double expected = draws / 22.0;
  double chi2 = 0.0;
  for (const auto& [c, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(21), chi2));
  EXPECT_GT(p, 0.01) << "chi2=" << chi2;
}

TEST(Sampling, GuidedColdStartIsRandom) {
  const auto& space = DesignSpace::standard();
  std::vector<Trial> history;
  for (const auto& c : sample_random(space, default_rules(), 10, 1)) history.push_back({c, 1.0});
  std::vector<PipelineConfig> seen;
  for (const auto& t : history) seen.push_back(t.config);
  EXPECT_EQ(sample_guided(space, default_rules(), history, 5, 9), sample_random(space, default_rules(), 5, 9, seen));
}

TEST(Sampling, GuidedPrefersBetterChoice) {
  const DesignSpace space({
      {"ab", "AB", {"A", "B"}, Stage::preprocess},
      {"u", "U", {"0", "1", "2", "3"}, Stage::encode},
      {"v", "V", {"0", "1", "2", "3", "4"}, Stage::optimize},
      {"w", "W", {"0", "1", "2", "3", "4", "5"}, Stage::optimize},
      {"only", "Only", {"x"}, Stage::optimize},
  });
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<Trial> history;
  for (const auto& c : sample_random(space, {}, 60, 3)) {
    history.push_back({c, (c.choices[0] == 0 ? 0.0 : 1.0) + noise(rng)});
  }
  int picked_a = 0;
  const int proposals = 1000;
  for (int s = 0; s < proposals; ++s) {
    const auto c = sample_guided(space, {}, history, 1, 500 + s).front();
    picked_a += c.choices[0] == 0;
    EXPECT_EQ(c.choices[4], 0);
  }
  EXPECT_GT(picked_a, 0.9 * proposals);
}

TEST(Sampling, GuidedAvoidsHistoryAndIsValid) {
  const auto& space = DesignSpace::standard();
  std::vector<Trial> history;
  int i = 0;
  for (const auto& c : sample_random(space, default_rules(), 60, 2)) history.push_back({c, double(i++ % 7)});
  const auto out = sample_guided(space, default_rules(), history, 20, 4);
  std::set<PipelineConfig> taken;
  for (const auto& t : history) taken.insert(t.config);
  for (const auto& c : out) {
    EXPECT_TRUE(is_valid(space, default_rules(), c));
    EXPECT_TRUE(taken.insert(c).second);
  }
  EXPECT_EQ(out, sample_guided(space, default_rules(), history, 20, 4));
}
