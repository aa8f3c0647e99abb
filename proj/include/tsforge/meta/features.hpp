#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tsforge/core/tensor.hpp"
#include "tsforge/harness/data.hpp"

namespace tsforge::meta {

inline constexpr int kFeatureVersion = 1;
inline constexpr std::size_t kMinFeatureLength = 32;

/// Names of the per-channel base features, in vector order.
const std::vector<std::string>& base_feature_names();
/// Names of the full aggregated vector, in order.
const std::vector<std::string>& feature_names();

/// One channel's base features. Throws DataError when shorter than kMinFeatureLength.
std::vector<double> channel_features(std::span<const double> x);

struct MetaFeatureVector {
  int version = kFeatureVersion;
  std::vector<double> values;         // non-finite entries replaced by 0
  std::vector<std::uint8_t> missing;  // 1 where the raw value was not finite
};

/// Features of an [L, C] array: base features per channel aggregated by
/// mean/std/min/q25/median/q75/max across channels, then the shifting metric
/// (mean over channels), log C and log L.
MetaFeatureVector extract_meta_features(const Tensor& series);

/// Features of a dataset's train split on its original scale.
MetaFeatureVector dataset_features(const harness::Dataset& data);

/// Distribution shift between adjacent windows, squashed to [0, 1].
/// `window` 0 picks floor(L/10) clamped to [32, 512].
double shifting_metric(std::span<const double> x, std::size_t window = 0);

// Individual estimators, exposed for testing.
double hurst_exponent(std::span<const double> x);
double zero_crossings(std::span<const double> x);
double absolute_energy(std::span<const double> x);
double dfa_exponent(std::span<const double> x);
double higuchi_dimension(std::span<const double> x, std::size_t k_max = 10);
double lempel_ziv(std::span<const double> x);
double petrosian_dimension(std::span<const double> x);

/// Tab-separated record: header "dataset_id", feature names..., "missing";
/// the missing column lists masked indices joined by ',' or '-'.
void write_features(std::ostream& out, const std::vector<std::pair<std::string, MetaFeatureVector>>& rows);
std::vector<std::pair<std::string, MetaFeatureVector>> read_features(std::istream& in);

}  // namespace tsforge::meta
