#include "tsforge/design/space.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "tsforge/error.hpp"

namespace tsforge {

std::string_view to_string(Normalization v) {
  constexpr std::string_view names[] = {"None", "Stat", "RevIN", "DishTS"};
  return names[static_cast<int>(v)];
}
std::string_view to_string(Decomposition v) {
  constexpr std::string_view names[] = {"None", "MA", "MoEMA", "DFT"};
  return names[static_cast<int>(v)];
}
std::string_view to_string(Embedding v) {
  constexpr std::string_view names[] = {"Inverted Encoding", "Positional Encoding", "Series Patching"};
  return names[static_cast<int>(v)];
}
std::string_view to_string(NetworkType v) {
  constexpr std::string_view names[] = {"MLP", "RNN", "Transformer", "LLM", "TSFM"};
  return names[static_cast<int>(v)];
}
std::string_view to_string(SeriesAttention v) {
  constexpr std::string_view names[] = {"Null", "SelfAttn", "AutoCorr", "SparseAttn", "FrequencyAttn",
                                        "DestationaryAttn"};
  return names[static_cast<int>(v)];
}
std::string_view to_string(FeatureAttention v) {
  constexpr std::string_view names[] = {"Null", "SelfAttn", "SparseAttn", "FrequencyAttn"};
  return names[static_cast<int>(v)];
}
std::string_view to_string(LossKind v) {
  constexpr std::string_view names[] = {"MSE", "MAE", "HUBER"};
  return names[static_cast<int>(v)];
}
std::string_view to_string(LrStrategy v) {
  constexpr std::string_view names[] = {"Null", "Type1"};
  return names[static_cast<int>(v)];
}

}  // namespace tsforge

namespace tsforge::design {

namespace {

constexpr std::size_t kPatchLen = 16;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class E>
E enum_at(const DesignSpace& space, const PipelineConfig& c, std::string_view key) {
  return static_cast<E>(c.choices[space.index_of(key)]);
}

std::size_t number_of(const DesignSpace& space, const PipelineConfig& c, std::string_view key) {
  return static_cast<std::size_t>(std::stoul(choice_of(space, c, key)));
}

}  // namespace

DesignSpace::DesignSpace(std::vector<DesignDimension> dims) : dims_(std::move(dims)) {
  for (const auto& d : dims_) {
    if (d.choices.empty() || d.choices.size() > 255) throw ConfigError("dimension " + d.key + " has invalid arity");
  }
}

const DesignSpace& DesignSpace::standard() {
  static const DesignSpace space({
      {"series_normalization", "Series Normalization", {"None", "Stat", "RevIN", "DishTS"}, Stage::preprocess},
      {"series_decomposition", "Series Decomposition", {"None", "MA", "MoEMA", "DFT"}, Stage::preprocess},
      {"series_sampling_mixing", "Series Sampling/Mixing", {"False", "True"}, Stage::preprocess},
      {"channel_independent", "Channel Independent", {"False", "True"}, Stage::encode},
      {"sequence_length", "Sequence Length", {"48", "96", "192", "512"}, Stage::encode},
      {"series_embedding", "Series Embedding",
       {"Inverted Encoding", "Positional Encoding", "Series Patching"}, Stage::encode},
      {"with_timestamps", "With/Without Timestamps", {"False", "True"}, Stage::encode},
      {"network_type", "Network Type", {"MLP", "RNN", "Transformer", "LLM", "TSFM"}, Stage::architecture},
      {"series_attention", "Series Attention",
       {"Null", "SelfAttn", "AutoCorr", "SparseAttn", "FrequencyAttn", "DestationaryAttn"}, Stage::architecture},
      {"feature_attention", "Feature Attention", {"Null", "SelfAttn", "SparseAttn", "FrequencyAttn"},
       Stage::architecture},
      {"d_model_d_ff", "d_model d_ff", {"64/256", "256/1024"}, Stage::architecture},
      {"encoder_layers", "Encoder Layers", {"2", "3"}, Stage::architecture},
      {"epochs", "Epochs", {"10", "20", "50"}, Stage::optimize},
      {"loss_function", "Loss Function", {"MSE", "MAE", "HUBER"}, Stage::optimize},
      {"learning_rate", "Learning Rate", {"1e-3", "1e-4"}, Stage::optimize},
      {"learning_rate_strategy", "Learning Rate Strategy", {"Null", "Type1"}, Stage::optimize},
  });
  return space;
}

std::optional<std::size_t> DesignSpace::find(std::string_view key) const {
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (dims_[i].key == key) return i;
  }
  return std::nullopt;
}

std::size_t DesignSpace::index_of(std::string_view key) const {
  if (auto i = find(key)) return *i;
  throw ConfigError("unknown design dimension '" + std::string(key) + "'");
}

std::uint64_t DesignSpace::raw_size() const {
  std::uint64_t n = 1;
  for (const auto& d : dims_) n *= d.choices.size();
  return n;
}

const std::string& choice_of(const DesignSpace& space, const PipelineConfig& config, std::string_view key) {
  const std::size_t i = space.index_of(key);
  return space[i].choices.at(config.choices.at(i));
}

std::string canonical_text(const DesignSpace& space, const PipelineConfig& config) {
  if (config.choices.size() != space.size()) throw ConfigError("config arity does not match design space");
  std::vector<std::size_t> order(space.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return space[a].key < space[b].key; });
  std::string out;
  for (auto i : order) {
    out += space[i].key;
    out += '=';
    out += space[i].choices.at(config.choices[i]);
    out += '\n';
  }
  return out;
}

std::string compact_text(const DesignSpace& space, const PipelineConfig& config) {
  std::string text = canonical_text(space, config);
  text.pop_back();
  std::replace(text.begin(), text.end(), '\n', ';');
  return text;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const DesignSpace& space, const PipelineConfig& config) {
  return fnv1a64(canonical_text(space, config));
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PipelineConfig parse_config(const DesignSpace& space, std::string_view text) {
  PipelineConfig config;
  config.choices.assign(space.size(), 0);
  std::vector<bool> seen(space.size(), false);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = text.find_first_of("\n;", pos);
    const std::string_view raw = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("record " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto idx = space.find(key);
    if (!idx) throw ConfigError("record " + std::to_string(line_no) + ": unknown dimension '" + key + "'");
    if (seen[*idx]) throw ConfigError("dimension '" + key + "' assigned twice");
    const auto& choices = space[*idx].choices;
    const auto it = std::find(choices.begin(), choices.end(), value);
    if (it == choices.end()) throw ConfigError("dimension '" + key + "' has no choice '" + value + "'");
    config.choices[*idx] = static_cast<std::uint8_t>(it - choices.begin());
    seen[*idx] = true;
  }
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (!seen[i]) throw ConfigError("dimension '" + space[i].key + "' missing");
  }
  return config;
}

PipelineSpec to_spec(const PipelineConfig& config) {
  const auto& space = DesignSpace::standard();
  if (config.choices.size() != space.size()) throw ConfigError("config does not belong to the standard space");
  PipelineSpec s;
  s.normalization = enum_at<Normalization>(space, config, "series_normalization");
  s.decomposition = enum_at<Decomposition>(space, config, "series_decomposition");
  s.multiscale = config.choices[space.index_of("series_sampling_mixing")] == 1;
  s.channel_independent = config.choices[space.index_of("channel_independent")] == 1;
  s.seq_len = number_of(space, config, "sequence_length");
  s.embedding = enum_at<Embedding>(space, config, "series_embedding");
  s.timestamps = config.choices[space.index_of("with_timestamps")] == 1;
  s.network = enum_at<NetworkType>(space, config, "network_type");
  s.series_attention = enum_at<SeriesAttention>(space, config, "series_attention");
  s.feature_attention = enum_at<FeatureAttention>(space, config, "feature_attention");
  const bool wide = config.choices[space.index_of("d_model_d_ff")] == 1;
  s.d_model = wide ? 256 : 64;
  s.d_ff = wide ? 1024 : 256;
  s.encoder_layers = number_of(space, config, "encoder_layers");
  s.epochs = number_of(space, config, "epochs");
  s.loss = enum_at<LossKind>(space, config, "loss_function");
  s.learning_rate = config.choices[space.index_of("learning_rate")] == 0 ? 1e-3 : 1e-4;
  s.lr_strategy = enum_at<LrStrategy>(space, config, "learning_rate_strategy");
  return s;
}

PipelineConfig from_spec(const PipelineSpec& s) {
  const auto& space = DesignSpace::standard();
  PipelineConfig c;
  c.choices.assign(space.size(), 0);
  auto set = [&](std::string_view key, std::string_view value) {
    const std::size_t i = space.index_of(key);
    const auto& choices = space[i].choices;
    const auto it = std::find(choices.begin(), choices.end(), value);
    if (it == choices.end()) throw ConfigError("dimension '" + std::string(key) + "' has no choice '" + std::string(value) + "'");
    c.choices[i] = static_cast<std::uint8_t>(it - choices.begin());
  };
  set("series_normalization", to_string(s.normalization));
  set("series_decomposition", to_string(s.decomposition));
  set("series_sampling_mixing", s.multiscale ? "True" : "False");
  set("channel_independent", s.channel_independent ? "True" : "False");
  set("sequence_length", std::to_string(s.seq_len));
  set("series_embedding", to_string(s.embedding));
  set("with_timestamps", s.timestamps ? "True" : "False");
  set("network_type", to_string(s.network));
  set("series_attention", to_string(s.series_attention));
  set("feature_attention", to_string(s.feature_attention));
  if (s.d_model == 64 && s.d_ff == 256) {
    set("d_model_d_ff", "64/256");
  } else if (s.d_model == 256 && s.d_ff == 1024) {
    set("d_model_d_ff", "256/1024");
  } else {
    throw ConfigError("d_model/d_ff pair outside the design space");
  }
  set("encoder_layers", std::to_string(s.encoder_layers));
  set("epochs", std::to_string(s.epochs));
  set("loss_function", to_string(s.loss));
  set("learning_rate", s.learning_rate == 1e-3 ? "1e-3" : (s.learning_rate == 1e-4 ? "1e-4" : "?"));
  set("learning_rate_strategy", to_string(s.lr_strategy));
  return c;
}

namespace {

// Predicate "dimension == choice" resolved once against the standard space.
struct Is {
  std::size_t dim;
  std::uint8_t choice;
  Is(std::string_view key, std::string_view value) {
    const auto& space = DesignSpace::standard();
    dim = space.index_of(key);
    const auto& choices = space[dim].choices;
    const auto it = std::find(choices.begin(), choices.end(), value);
    if (it == choices.end()) throw ConfigError("rule refers to unknown choice '" + std::string(value) + "'");
    choice = static_cast<std::uint8_t>(it - choices.begin());
  }
  bool operator()(const PipelineConfig& c) const { return c.choices[dim] == choice; }
};

}  // namespace

const RuleSet& default_rules() {
  static const RuleSet rules = [] {
    const Is mlp("network_type", "MLP"), rnn("network_type", "RNN");
    const Is llm("network_type", "LLM"), tsfm("network_type", "TSFM");
    const Is no_series("series_attention", "Null"), no_feature("feature_attention", "Null");
    const Is destationary("series_attention", "DestationaryAttn");
    const Is stat("series_normalization", "Stat"), revin("series_normalization", "RevIN");
    const Is inverted("series_embedding", "Inverted Encoding"), ci("channel_independent", "True");
    const Is patch("series_embedding", "Series Patching");
    const auto& space = DesignSpace::standard();
    const std::size_t seq_dim = space.index_of("sequence_length");
    std::vector<bool> too_short;
    for (const auto& v : space[seq_dim].choices) too_short.push_back(std::stoul(v) < kPatchLen);

    RuleSet r;
    r.push_back({"instantiable_network", "LLM and TSFM backbones are not instantiable",
                 [=](const DesignSpace&, const PipelineConfig& c) { return llm(c) || tsfm(c); }});
    r.push_back({"mlp_series_attention", "MLP excludes series attention",
                 [=](const DesignSpace&, const PipelineConfig& c) { return mlp(c) && !no_series(c); }});
    r.push_back({"rnn_series_attention", "RNN excludes series attention",
                 [=](const DesignSpace&, const PipelineConfig& c) { return rnn(c) && !no_series(c); }});
    r.push_back({"mlp_rnn_feature_attention", "MLP and RNN exclude feature attention",
                 [=](const DesignSpace&, const PipelineConfig& c) { return (mlp(c) || rnn(c)) && !no_feature(c); }});
    r.push_back({"destationary_needs_statistics", "DestationaryAttn requires Stat or RevIN normalization",
                 [=](const DesignSpace&, const PipelineConfig& c) { return destationary(c) && !stat(c) && !revin(c); }});
    r.push_back({"inverted_channel_dependent", "Inverted Encoding requires channel-dependent input",
                 [=](const DesignSpace&, const PipelineConfig& c) { return inverted(c) && ci(c); }});
    r.push_back({"inverted_feature_attention", "Inverted Encoding excludes feature attention",
                 [=](const DesignSpace&, const PipelineConfig& c) { return inverted(c) && !no_feature(c); }});
    r.push_back({"patch_fits_window", "Series Patching requires sequence length >= patch length",
                 [=](const DesignSpace&, const PipelineConfig& c) { return patch(c) && too_short[c.choices[seq_dim]]; }});
    return r;
  }();
  return rules;
}

std::vector<std::string> violations(const DesignSpace& space, const RuleSet& rules, const PipelineConfig& config) {
  std::vector<std::string> out;
  for (const auto& rule : rules) {
    if (rule.violated(space, config)) out.push_back(rule.reason);
  }
  return out;
}

bool is_valid(const DesignSpace& space, const RuleSet& rules, const PipelineConfig& config) {
  return std::none_of(rules.begin(), rules.end(), [&](const ConflictRule& r) { return r.violated(space, config); });
}

PipelineConfig config_at(const DesignSpace& space, std::uint64_t index) {
  PipelineConfig c;
  c.choices.assign(space.size(), 0);
  for (std::size_t i = space.size(); i-- > 0;) {
    const std::uint64_t k = space[i].choices.size();
    c.choices[i] = static_cast<std::uint8_t>(index % k);
    index /= k;
  }
  return c;
}

ConfigEnumerator::ConfigEnumerator(const DesignSpace& space, const RuleSet& rules)
    : space_(space), rules_(rules), end_(space.raw_size()) {}

std::optional<PipelineConfig> ConfigEnumerator::next() {
  while (cursor_ < end_) {
    PipelineConfig c = config_at(space_, cursor_++);
    if (is_valid(space_, rules_, c)) return c;
  }
  return std::nullopt;
}

SharedConfigCursor::SharedConfigCursor(const DesignSpace& space, const RuleSet& rules)
    : space_(space), rules_(rules), end_(space.raw_size()) {}

std::optional<PipelineConfig> SharedConfigCursor::claim() {
  for (;;) {
    const std::uint64_t i = cursor_.fetch_add(1, std::memory_order_relaxed);
    if (i >= end_) return std::nullopt;
    PipelineConfig c = config_at(space_, i);
    if (is_valid(space_, rules_, c)) return c;
  }
}

std::uint64_t count_valid(const DesignSpace& space, const RuleSet& rules) {
  ConfigEnumerator e(space, rules);
  std::uint64_t n = 0;
  while (e.next()) ++n;
  return n;
}

namespace {

PipelineConfig draw_uniform(const DesignSpace& space, std::mt19937_64& rng) {
  PipelineConfig c;
  c.choices.resize(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) {
    std::uniform_int_distribution<std::size_t> d(0, space[i].choices.size() - 1);
    c.choices[i] = static_cast<std::uint8_t>(d(rng));
  }
  return c;
}

constexpr std::uint64_t kEnumerateBelow = 1ULL << 20;

}  // namespace

std::vector<PipelineConfig> sample_random(const DesignSpace& space, const RuleSet& rules, std::size_t m,
                                          std::uint64_t seed, const std::vector<PipelineConfig>& exclude) {
  std::mt19937_64 rng(seed);
  const std::set<PipelineConfig> excluded(exclude.begin(), exclude.end());
  const std::uint64_t raw = space.raw_size();
  if (m > raw) throw ConfigError("cannot draw " + std::to_string(m) + " distinct configs from a space of " + std::to_string(raw));

  if (raw <= kEnumerateBelow || m > 100000) {
    std::vector<PipelineConfig> pool;
    ConfigEnumerator e(space, rules);
    while (auto c = e.next()) {
      if (!excluded.count(*c)) pool.push_back(std::move(*c));
    }
    if (m > pool.size()) {
      throw ConfigError("requested " + std::to_string(m) + " configs but only " + std::to_string(pool.size()) + " are valid");
    }
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> d(i, pool.size() - 1);
      std::swap(pool[i], pool[d(rng)]);
    }
    pool.resize(m);
    return pool;
  }

  std::set<PipelineConfig> taken(excluded);
  std::vector<PipelineConfig> out;
  out.reserve(m);
  const std::size_t max_draws = 1000 * m + 1000000;
  for (std::size_t draws = 0; out.size() < m; ++draws) {
    if (draws >= max_draws) throw ConfigError("random sampling exhausted: too few valid configurations");
    PipelineConfig c = draw_uniform(space, rng);
    if (!is_valid(space, rules, c) || !taken.insert(c).second) continue;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<PipelineConfig> sample_guided(const DesignSpace& space, const RuleSet& rules,
                                          const std::vector<Trial>& history, std::size_t n_new,
                                          std::uint64_t seed, const GuidedOptions& options) {
  std::vector<PipelineConfig> seen;
  for (const auto& t : history) seen.push_back(t.config);
  if (history.size() < options.cold_start || history.empty()) {
    return sample_random(space, rules, n_new, seed, seen);
  }

  std::vector<const Trial*> sorted;
  for (const auto& t : history) sorted.push_back(&t);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->score < b->score; });
  const std::size_t n = sorted.size();
  const std::size_t n_good = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(options.gamma * static_cast<double>(n))), 1, n);
  const std::size_t n_bad = n - n_good;

  // Laplace-smoothed categorical densities per dimension for the good (l) and bad (g) sets.
  std::vector<std::vector<double>> good(space.size()), bad(space.size());
  for (std::size_t d = 0; d < space.size(); ++d) {
    const std::size_t k = space[d].choices.size();
    std::vector<double> cg(k, 1.0), cb(k, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      (i < n_good ? cg : cb)[sorted[i]->config.choices[d]] += 1.0;
    }
    for (auto& v : cg) v /= static_cast<double>(n_good + k);
    for (auto& v : cb) v /= static_cast<double>(n_bad + k);
    good[d] = std::move(cg);
    bad[d] = std::move(cb);
  }

  std::mt19937_64 rng(seed);
  std::set<PipelineConfig> taken(seen.begin(), seen.end());
  std::vector<PipelineConfig> out;
  while (out.size() < n_new) {
    std::optional<PipelineConfig> best;
    double best_score = -std::numeric_limits<double>::infinity();
    std::size_t retries = 0;
    std::size_t accepted = 0;
    while (accepted < options.candidates && retries <= options.max_retries) {
      PipelineConfig c;
      c.choices.resize(space.size());
      for (std::size_t d = 0; d < space.size(); ++d) {
        std::discrete_distribution<std::size_t> dist(good[d].begin(), good[d].end());
        c.choices[d] = static_cast<std::uint8_t>(dist(rng));
      }
      if (!is_valid(space, rules, c) || taken.count(c)) {
        ++retries;
        continue;
      }
      ++accepted;
      double score = 0.0;
      for (std::size_t d = 0; d < space.size(); ++d) {
        score += std::log(good[d][c.choices[d]]) - std::log(bad[d][c.choices[d]]);
      }
      if (score > best_score) {
        best_score = score;
        best = std::move(c);
      }
    }
    if (!best) {
      std::vector<PipelineConfig> avoid(taken.begin(), taken.end());
      best = sample_random(space, rules, 1, rng(), avoid).front();
    }
    taken.insert(*best);
    out.push_back(std::move(*best));
  }
  return out;
}

}  // namespace tsforge::design
