#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "space/encoder.hpp"
#include "space/model_config.hpp"
#include "space/parameters.hpp"
#include "space/schema.hpp"
#include "space/tensor.hpp"

namespace space {

/// Track-agnostic enhancement expert: every track row of o^q[B, d_q, L] goes
/// through the same conv(1 -> hidden, width w) + GELU + conv(hidden -> 1, 1).
/// The output layer starts at zero.
template <typename T>
struct DecoderExpertParams {
  Tensor<T> w1, b1;  // [hidden, 1, w], [hidden]
  Tensor<T> w2, b2;  // [1, hidden, 1], [1]
};

template <typename T>
Tensor<T> decoder_expert_forward(const Tensor<T>& block, const DecoderExpertParams<T>& p);

/// Gates of one profile type: group-level (species and sequence views) and
/// one expert selector per group.
template <typename T>
struct ProfileGateParams {
  Tensor<T> species_w, species_b;    // [d, R], [R]
  Tensor<T> sequence_w, sequence_b;  // [d, R], [R]
  std::vector<Tensor<T>> selector_w;  // per group, [L, K]
  std::vector<Tensor<T>> selector_b;  // per group, [K]
};

/// Splits o_base[B, C_m, L] into one [B, d_q, L] block per schema profile
/// type; absent types yield undefined tensors.
template <typename T>
std::vector<Tensor<T>> categorize(const Tensor<T>& o_base, const ProfileSchema& schema, std::size_t species);

/// Inverse of categorize.
template <typename T>
Tensor<T> recompose(const std::vector<Tensor<T>>& blocks, const ProfileSchema& schema, std::size_t species);

template <typename T>
struct DecoderOutput {
  Tensor<T> o_base;   // [B, C_m, L]
  Tensor<T> o_final;  // [B, C_m, L]
  /// Per profile type, sum_r G^q_r * G^q_r(o^q)_k as [B, K]; undefined for
  /// types the species lacks.
  std::vector<Tensor<T>> combined_gates;
};

template <typename T>
class Decoder {
 public:
  Decoder(const ModelConfig& cfg, const ProfileSchema& schema, ParameterSet<T>& params, std::uint64_t seed);

  /// (Linear(y))^T with the species-specific head: [B, L, d] -> [B, C_m, L].
  Tensor<T> base_head(const Tensor<T>& y, std::size_t species) const;

  /// Softmax(G_species(e) + G_sequence(pooled)) -> [B, R].
  Tensor<T> group_gate(const Tensor<T>& embedding, const Tensor<T>& pooled, std::size_t type) const;

  /// Track-mean of o^q, linear over positions, noisy top-k -> [B, K].
  Tensor<T> expert_gate(const Tensor<T>& block, std::size_t type, std::size_t group, const GateOptions& opt) const;

  /// sum_r group_weights[:, r] * sum_k expert_weights[r][:, k] * E_k(block).
  /// Experts with zero combined weight across the batch are skipped.
  Tensor<T> enhance(const Tensor<T>& block, const Tensor<T>& group_weights,
                    const std::vector<Tensor<T>>& expert_weights, Tensor<T>* combined = nullptr) const;

  DecoderOutput<T> forward(const Tensor<T>& y, const Tensor<T>& embedding, std::size_t species, bool train,
                           Rng* noise_rng) const;

  const std::vector<DecoderExpertParams<T>>& experts() const { return experts_; }
  std::vector<DecoderExpertParams<T>>& experts() { return experts_; }
  std::vector<ProfileGateParams<T>>& gates() { return gates_; }
  const ProfileSchema& schema() const { return schema_; }

 private:
  ModelConfig cfg_;
  ProfileSchema schema_;
  std::vector<Tensor<T>> head_w_, head_b_;
  std::vector<DecoderExpertParams<T>> experts_;
  std::vector<ProfileGateParams<T>> gates_;
};

/// Running mean of per-sample combined decoder gate rows, per profile type.
class ProfileRoutingTally {
 public:
  explicit ProfileRoutingTally(std::size_t types = 0, std::size_t experts = 0);

  template <typename T>
  void add(const std::vector<Tensor<T>>& combined_gates);

  /// Row-normalized frequencies; types never seen are all-zero rows.
  std::vector<std::vector<double>> frequencies() const;
  double samples(std::size_t type) const { return counts_.at(type); }

 private:
  std::vector<std::vector<double>> sums_;
  std::vector<double> counts_;
};

/// CSV "profile_type,expert_0,...": one row per profile type, schema order.
void export_profile_routing(const ProfileRoutingTally& tally, const ProfileSchema& schema,
                            const std::filesystem::path& path);

}  // namespace space
