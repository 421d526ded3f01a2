#pragma once

#include <cstdint>
#include <vector>

#include "space/model_config.hpp"
#include "space/parameters.hpp"
#include "space/tensor.hpp"

namespace space {

/// Convolutional tower that compresses one-hot nucleotides [B, 4, seq_len]
/// into bin-resolution hidden states [B, L, d_hidden]. Each block is a
/// same-padded conv1d, GELU and a stride-2 max-pool; widths ramp
/// geometrically from `stem_channels` to `d_hidden`.
template <typename T>
class Stem {
 public:
  Stem(const ModelConfig& cfg, ParameterSet<T>& params, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x) const;

  const std::vector<std::size_t>& channels() const { return channels_; }
  /// Radius in input positions over which one output bin can see.
  std::size_t receptive_radius() const;

 private:
  struct Block {
    Tensor<T> weight;  // [c_out, c_in, k]
    Tensor<T> bias;    // [c_out]
  };

  ModelConfig cfg_;
  std::vector<std::size_t> channels_;
  std::vector<Block> blocks_;
};

/// Geometric width ramp from `first` to `last` over `blocks` stages.
std::vector<std::size_t> channel_ramp(std::size_t first, std::size_t last, std::size_t blocks);

}  // namespace space
