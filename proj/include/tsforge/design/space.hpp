#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tsforge/design/choices.hpp"

namespace tsforge::design {

enum class Stage { preprocess, encode, architecture, optimize };

struct DesignDimension {
  std::string key;                   // canonical key, e.g. "series_normalization"
  std::string name;                  // display name, e.g. "Series Normalization"
  std::vector<std::string> choices;  // ordered choice list
  Stage stage = Stage::preprocess;
};

/// Ordered list of dimensions. The standard space is the 16-dimension
/// forecasting pipeline space; small spaces can be built for tests.
class DesignSpace {
 public:
  explicit DesignSpace(std::vector<DesignDimension> dims);

  static const DesignSpace& standard();

  const std::vector<DesignDimension>& dimensions() const { return dims_; }
  std::size_t size() const { return dims_.size(); }
  const DesignDimension& operator[](std::size_t i) const { return dims_[i]; }
  std::size_t index_of(std::string_view key) const;
  std::optional<std::size_t> find(std::string_view key) const;
  /// Product of all cardinalities.
  std::uint64_t raw_size() const;

 private:
  std::vector<DesignDimension> dims_;
};

/// One point in a design space: a choice index per dimension.
struct PipelineConfig {
  std::vector<std::uint8_t> choices;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
  friend auto operator<=>(const PipelineConfig&, const PipelineConfig&) = default;
};

const std::string& choice_of(const DesignSpace& space, const PipelineConfig& config, std::string_view key);

/// key=value lines sorted by key, LF-terminated.
std::string canonical_text(const DesignSpace& space, const PipelineConfig& config);
/// The canonical records joined with ';' on a single line (ledger column).
std::string compact_text(const DesignSpace& space, const PipelineConfig& config);
/// 64-bit FNV-1a of the canonical text.
std::uint64_t config_hash(const DesignSpace& space, const PipelineConfig& config);
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hash_hex(std::uint64_t h);

/// Accepts newline- or ';'-separated key=value records; '#' starts a comment.
/// Every dimension must be assigned exactly once.
PipelineConfig parse_config(const DesignSpace& space, std::string_view text);

/// Typed view of a configuration of the standard space.
PipelineSpec to_spec(const PipelineConfig& config);
PipelineConfig from_spec(const PipelineSpec& spec);

struct ConflictRule {
  std::string id;
  std::string reason;
  std::function<bool(const DesignSpace&, const PipelineConfig&)> violated;
};

using RuleSet = std::vector<ConflictRule>;

/// Compatibility rules of the standard space. The patch length used by the
/// patching rule is the tokenizer default.
const RuleSet& default_rules();

/// Reasons of every violated rule; empty means valid.
std::vector<std::string> violations(const DesignSpace& space, const RuleSet& rules, const PipelineConfig& config);
bool is_valid(const DesignSpace& space, const RuleSet& rules, const PipelineConfig& config);

/// Decodes a mixed-radix index (first dimension most significant).
PipelineConfig config_at(const DesignSpace& space, std::uint64_t index);

/// Lazy lexicographic enumeration of the valid configurations.
class ConfigEnumerator {
 public:
  ConfigEnumerator(const DesignSpace& space, const RuleSet& rules);
  std::optional<PipelineConfig> next();

 private:
  const DesignSpace& space_;
  RuleSet rules_;
  std::uint64_t cursor_ = 0;
  std::uint64_t end_;
};

/// Shared cursor for parallel consumers: each raw index is claimed exactly once.
class SharedConfigCursor {
 public:
  SharedConfigCursor(const DesignSpace& space, const RuleSet& rules);
  /// Next valid config not yet claimed by any consumer.
  std::optional<PipelineConfig> claim();

 private:
  const DesignSpace& space_;
  RuleSet rules_;
  std::atomic<std::uint64_t> cursor_{0};
  std::uint64_t end_;
};

std::uint64_t count_valid(const DesignSpace& space, const RuleSet& rules);

/// m distinct valid configurations, uniform without replacement.
std::vector<PipelineConfig> sample_random(const DesignSpace& space, const RuleSet& rules, std::size_t m,
                                          std::uint64_t seed,
                                          const std::vector<PipelineConfig>& exclude = {});

struct Trial {
  PipelineConfig config;
  double score = 0.0;  // lower is better
};

struct GuidedOptions {
  std::size_t cold_start = 50;
  double gamma = 0.25;
  std::size_t candidates = 24;
  std::size_t max_retries = 100;
};

/// Categorical TPE proposals. Behaves as sample_random while the history is
/// shorter than the cold start. Proposals avoid configs already in the history.
std::vector<PipelineConfig> sample_guided(const DesignSpace& space, const RuleSet& rules,
                                          const std::vector<Trial>& history, std::size_t n_new,
                                          std::uint64_t seed, const GuidedOptions& options = {});

}  // namespace tsforge::design
