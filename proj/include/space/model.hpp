#pragma once

#include <cstdint>
#include <vector>

#include "space/decoder.hpp"
#include "space/encoder.hpp"
#include "space/model_config.hpp"
#include "space/parameters.hpp"
#include "space/schema.hpp"
#include "space/stem.hpp"
#include "space/tensor.hpp"

namespace space {

template <typename T>
struct ModelOutput {
  Tensor<T> o_base;   // [B, C_m, L]
  Tensor<T> o_final;  // [B, C_m, L]
  Tensor<T> rates;    // softplus(o_final) + eps
  std::vector<Tensor<T>> encoder_gates;
  std::vector<Tensor<T>> decoder_gates;
};

/// Stem, species-aware encoder and profile-grouped decoder sharing one
/// parameter set. Parameter names and order are fixed by (config, schema).
template <typename T>
class SpaceModel {
 public:
  SpaceModel(const ModelConfig& cfg, const ProfileSchema& schema, std::uint64_t seed);
  SpaceModel(const SpaceModel&) = delete;
  SpaceModel& operator=(const SpaceModel&) = delete;

  /// x is one-hot [B, 4, seq_len] for a single species.
  ModelOutput<T> forward(const Tensor<T>& x, std::size_t species, bool train, Rng* noise_rng = nullptr,
                         RoutingTrace<T>* trace = nullptr) const;

  RoutingTrace<T> make_trace() const;

  const ModelConfig& config() const { return cfg_; }
  const ProfileSchema& schema() const { return schema_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  Stem<T>& stem() { return stem_; }
  Encoder<T>& encoder() { return encoder_; }
  Decoder<T>& decoder() { return decoder_; }
  const Decoder<T>& decoder() const { return decoder_; }

 private:
  ModelConfig cfg_;
  ProfileSchema schema_;
  ParameterSet<T> params_;
  Stem<T> stem_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
};

}  // namespace space
