#include "space/stem.hpp"

#include <cmath>

#include "space/ops.hpp"

namespace space {

std::vector<std::size_t> channel_ramp(std::size_t first, std::size_t last, std::size_t blocks) {
  std::vector<std::size_t> widths(blocks, last);
  if (blocks <= 1) return widths;
  const double ratio = static_cast<double>(last) / static_cast<double>(first);
  for (std::size_t i = 0; i + 1 < blocks; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(blocks - 1);
    widths[i] = static_cast<std::size_t>(std::lround(static_cast<double>(first) * std::pow(ratio, t)));
  }
  return widths;
}

template <typename T>
Stem<T>::Stem(const ModelConfig& cfg, ParameterSet<T>& params, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  channels_ = channel_ramp(cfg.stem_channels, cfg.d_hidden, cfg.conv_blocks());
  std::size_t c_in = 4;
  for (std::size_t i = 0; i < channels_.size(); ++i) {
    const std::string prefix = "stem.block" + std::to_string(i);
    const std::size_t c_out = channels_[i];
    Block block{params.add(prefix + ".weight", {c_out, c_in, cfg.stem_kernel}), params.add(prefix + ".bias", {c_out})};
    const double fan_in = static_cast<double>(c_in * cfg.stem_kernel);
    if (i == 0) {
      init_uniform(block.weight, std::sqrt(3.0 / fan_in), seed, prefix + ".weight");
      init_uniform(block.bias, 1.0 / std::sqrt(fan_in), seed, prefix + ".bias");
    } else {
      // Near-identity: the centre tap copies input channel o % c_in, plus
      // small noise. With plain fan-in init the deeper blocks shrink the
      // signal and block-0 motif detectors train very slowly.
      init_uniform(block.weight, 0.1 * std::sqrt(3.0 / fan_in), seed, prefix + ".weight");
      auto w = block.weight.data();
      const std::size_t k = cfg.stem_kernel;
      for (std::size_t o = 0; o < c_out; ++o) w[(o * c_in + o % c_in) * k + k / 2] += T(1);
    }
    blocks_.push_back(block);
    c_in = c_out;
  }
}

template <typename T>
Tensor<T> Stem<T>::forward(const Tensor<T>& x) const {
  if (x.dim() != 3 || x.size(1) != 4) throw ShapeError("stem expects [B, 4, seq_len], got " + shape_str(x.shape()));
  if (x.size(2) % cfg_.bin_size != 0) {
    throw ShapeError("stem: sequence length " + std::to_string(x.size(2)) + " is not divisible by bin_size " +
                     std::to_string(cfg_.bin_size));
  }
  const std::size_t pad = (cfg_.stem_kernel - 1) / 2;
  Tensor<T> h = x;
  for (const auto& block : blocks_) {
    h = ops::conv1d(h, block.weight, block.bias, 1, pad);
    h = ops::gelu(h);
    h = ops::max_pool1d(h, 2);
  }
  return ops::permute(h, {0, 2, 1});
}

template <typename T>
std::size_t Stem<T>::receptive_radius() const {
  // Block i sees (k-1)/2 positions each side at resolution 2^i, plus the pool.
  std::size_t radius = 0;
  std::size_t scale = 1;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    radius += ((cfg_.stem_kernel - 1) / 2) * scale + scale;
    scale *= 2;
  }
  return radius;
}

template class Stem<float>;
template class Stem<double>;

}  // namespace space
