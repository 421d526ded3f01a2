#pragma once

#include <cstddef>
#include <stdexcept>

#include "json.hpp"

namespace space {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Architecture hyperparameters. Defaults are the desk-scale model.
struct ModelConfig {
  // input / stem
  std::size_t seq_len = 2048;
  std::size_t bin_size = 128;
  std::size_t d_hidden = 64;
  std::size_t stem_kernel = 5;
  std::size_t stem_channels = 32;  // width of the first conv block

  // encoder
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t experts = 4;
  std::size_t top_k = 3;
  double gate_noise = 1e-2;

  // decoder
  std::size_t decoder_experts = 8;
  std::size_t groups = 2;
  std::size_t decoder_top_k = 3;
  std::size_t expert_kernel = 5;
  std::size_t expert_hidden = 8;

  std::size_t num_bins() const { return seq_len / bin_size; }
  /// log2(bin_size): each stem block halves the length.
  std::size_t conv_blocks() const;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

}  // namespace space
