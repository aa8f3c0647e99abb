#pragma once

#include <cstddef>
#include <string>
#include <string_view>

// Typed design choices. Value names mirror the published design table; the
// string forms live in the registry (space.hpp).
namespace tsforge {

enum class Normalization { none, stat, revin, dishts };
enum class Decomposition { none, moving_average, mixture_of_experts, dft };
enum class Embedding { inverted, positional, patch };
enum class NetworkType { mlp, rnn, transformer, llm, tsfm };
enum class SeriesAttention { null, self, auto_correlation, sparse, frequency, destationary };
enum class FeatureAttention { null, self, sparse, frequency };
enum class LossKind { mse, mae, huber };
enum class LrStrategy { null, type1 };

/// Fully typed view of one pipeline configuration.
struct PipelineSpec {
  Normalization normalization = Normalization::none;
  Decomposition decomposition = Decomposition::none;
  bool multiscale = false;
  bool channel_independent = false;
  std::size_t seq_len = 96;
  Embedding embedding = Embedding::positional;
  NetworkType network = NetworkType::mlp;
  SeriesAttention series_attention = SeriesAttention::null;
  FeatureAttention feature_attention = FeatureAttention::null;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  std::size_t encoder_layers = 2;
  std::size_t epochs = 10;
  LossKind loss = LossKind::mse;
  double learning_rate = 1e-3;
  LrStrategy lr_strategy = LrStrategy::null;
  bool timestamps = false;
};

std::string_view to_string(Normalization v);
std::string_view to_string(Decomposition v);
std::string_view to_string(Embedding v);
std::string_view to_string(NetworkType v);
std::string_view to_string(SeriesAttention v);
std::string_view to_string(FeatureAttention v);
std::string_view to_string(LossKind v);
std::string_view to_string(LrStrategy v);

}  // namespace tsforge
