#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "space/data.hpp"
#include "space/model.hpp"
#include "space/objectives.hpp"
#include "space/parameters.hpp"

namespace space {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t warmup_steps = 200;
  double peak_lr = 5e-4;
  std::size_t batch_size = 4;
  std::size_t accum_batches = 2;
  double clip_norm = 0.2;
  double alpha = 0.01;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t eval_every = 100;
  BatchMode batch_mode = BatchMode::Alternating;

  /// Throws ConfigError naming the offending field.
  void validate(std::size_t num_species) const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Linear warmup from 0 to peak_lr, then cosine decay to 0 at `steps`.
double lr_at(std::size_t step, const TrainConfig& cfg);

struct ClipResult {
  double norm_before = 0.0;
  double scale = 1.0;
  double norm_after = 0.0;
};

template <typename T>
double global_grad_norm(const ParameterSet<T>& params);

/// Rescales every gradient when the global L2 norm exceeds max_norm.
template <typename T>
ClipResult clip_global_norm(ParameterSet<T>& params, double max_norm);

struct AdamHyper {
  double lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One decoupled-decay Adam update of a single tensor; `t` is the 1-based
/// step count used for bias correction.
template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                  const AdamHyper& h);

template <typename T>
class AdamW {
 public:
  explicit AdamW(ParameterSet<T>& params);

  /// Applies one update from the current gradients. Parameters without a
  /// gradient buffer are treated as having zero gradient.
  void step(const AdamHyper& h);

  std::uint64_t steps_taken() const { return t_; }
  void set_steps_taken(std::uint64_t t) { t_ = t; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  ParameterSet<T>* params_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t t_ = 0;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Full pass over every record of every species without noise or tape;
/// returns the record-weighted mean Poisson loss.
template <typename T>
double evaluate_poisson(const SpaceModel<T>& model, const Dataset& data, std::size_t batch_size);

/// Predicted rates [n, C_m, L] for every record of species m, in record order.
template <typename T>
std::vector<double> predict_species(const SpaceModel<T>& model, const Dataset& data, std::size_t species,
                                    std::size_t batch_size, RoutingTrace<T>* trace = nullptr,
                                    ProfileRoutingTally* tally = nullptr);

template <typename T>
class Trainer {
 public:
  Trainer(SpaceModel<T>& model, const Dataset& data, const TrainConfig& cfg);

  /// One optimizer window. Returns the log record; throws NumericError on a
  /// non-finite loss or gradient before touching the parameters.
  nlohmann::json step();

  std::uint64_t current_step() const { return step_; }
  std::uint64_t batches_consumed() const { return consumed_; }
  std::string rng_state() const;
  const TrainConfig& config() const { return cfg_; }
  AdamW<T>& optimizer() { return opt_; }
  const AdamW<T>& optimizer() const { return opt_; }

  /// Moves to a saved position: replays the batch stream and restores the
  /// noise generator.
  void resume(std::uint64_t step, std::uint64_t batches_consumed, const std::string& rng_state);

 private:
  SpaceModel<T>* model_;
  const Dataset* data_;
  TrainConfig cfg_;
  BatchStream stream_;
  AdamW<T> opt_;
  Rng noise_;
  std::uint64_t step_ = 0;
  std::uint64_t consumed_ = 0;
};

}  // namespace space
