#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "space/model_config.hpp"
#include "space/parameters.hpp"
#include "space/rng.hpp"
#include "space/tensor.hpp"

namespace space {

/// Accumulated gate mass per (layer, species, expert).
///
/// joint(d, m) is a differentiable [N] tensor equal to the sum over routed
/// tokens of species m of their gate-weight rows; token_count(d, m) counts
/// those tokens. Since rows sum to one, sum_n J[d][m][n] == token_count(d, m).
template <typename T>
class RoutingTrace {
 public:
  RoutingTrace() = default;
  RoutingTrace(std::size_t layers, std::size_t species, std::size_t experts);

  void accumulate(std::size_t layer, std::size_t species, const Tensor<T>& gate_weights);
  void merge(const RoutingTrace& other);

  std::size_t layers() const { return joint_.size(); }
  std::size_t species() const { return species_; }
  std::size_t experts() const { return experts_; }

  /// Undefined tensor when the species has no tokens at this layer.
  const Tensor<T>& joint(std::size_t layer, std::size_t species) const { return joint_.at(layer).at(species); }
  double token_count(std::size_t layer, std::size_t species) const { return counts_.at(layer).at(species); }
  bool covers_all_species(std::size_t layer) const;

  /// P[m][n] = J[m][n] / sum_m token_count[m] as a differentiable [M, N]
  /// tensor. Throws if some species has no tokens in this trace.
  Tensor<T> joint_distribution(std::size_t layer) const;

  /// Row-normalized routing frequencies F[m][n] = J[m][n] / token_count[m].
  std::vector<std::vector<double>> frequencies(std::size_t layer) const;

 private:
  std::size_t species_ = 0;
  std::size_t experts_ = 0;
  std::vector<std::vector<Tensor<T>>> joint_;
  std::vector<std::vector<double>> counts_;
};

/// CSV "layer,species,expert_0,...": one row per (layer, species).
template <typename T>
void export_routing_frequencies(const RoutingTrace<T>& trace, const std::vector<std::string>& species_names,
                                const std::filesystem::path& path);

template <typename T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct AttentionResult {
  Tensor<T> output;   // [B, T, d]
  Tensor<T> weights;  // [B, heads, T, T]
};

/// Multi-head scaled dot-product self-attention over x[B, T, d].
template <typename T>
AttentionResult<T> attention(const Tensor<T>& x, const AttentionParams<T>& p, std::size_t heads);

template <typename T>
struct ExpertParams {
  Tensor<T> w1, b1, w2, b2;  // d -> 2d -> d
};

template <typename T>
Tensor<T> expert_forward(const Tensor<T>& x, const ExpertParams<T>& p);

template <typename T>
struct MoEParams {
  std::vector<ExpertParams<T>> experts;
  std::vector<Tensor<T>> gate_weight;  // per species, [d, N]
  std::vector<Tensor<T>> gate_bias;    // per species, [N]
};

struct GateOptions {
  std::size_t top_k = 1;
  double noise = 0.0;
  Rng* rng = nullptr;  // noise is only drawn when set
};

/// Species-m sparse mixture over tokens x[tokens, d]. Only experts with a
/// nonzero weight for a token are evaluated on it. Returns the mixed output
/// and writes the [tokens, N] gate weights to `gates`.
template <typename T>
Tensor<T> moe_forward(const Tensor<T>& x, const MoEParams<T>& p, std::size_t species, const GateOptions& opt,
                      Tensor<T>* gates);

/// Adds zero-mean Gaussian noise of scale `opt.noise` when an rng is given,
/// then applies top-k softmax.
template <typename T>
Tensor<T> noisy_topk_gate(const Tensor<T>& logits, const GateOptions& opt);

template <typename T>
struct EncoderLayer {
  Tensor<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  AttentionParams<T> attn;
  MoEParams<T> moe;
};

template <typename T>
struct EncoderOutput {
  Tensor<T> y;                   // [B, L, d]
  std::vector<Tensor<T>> gates;  // per layer, [B*(L+1), N]
};

/// Species-aware transformer encoder: prepends the species embedding token,
/// runs `depth` pre-norm blocks of attention + sparse MoE, and drops the
/// species token from the output.
template <typename T>
class Encoder {
 public:
  Encoder(const ModelConfig& cfg, std::size_t num_species, ParameterSet<T>& params, std::uint64_t seed);

  EncoderOutput<T> forward(const Tensor<T>& h, std::size_t species, bool train, Rng* noise_rng,
                           RoutingTrace<T>* trace) const;

  /// Row m of the species embedding table, shape [1, d].
  Tensor<T> species_embedding(std::size_t species) const;

  const std::vector<EncoderLayer<T>>& layers() const { return layers_; }
  std::vector<EncoderLayer<T>>& layers() { return layers_; }
  std::size_t num_species() const { return num_species_; }

 private:
  ModelConfig cfg_;
  std::size_t num_species_;
  Tensor<T> embedding_;  // [M, d]
  Tensor<T> position_;   // [L+1, d]
  std::vector<EncoderLayer<T>> layers_;
};

}  // namespace space
