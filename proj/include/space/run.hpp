#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>

#include "json.hpp"
#include "space/checkpoint.hpp"
#include "space/config.hpp"
#include "space/data.hpp"
#include "space/metrics.hpp"
#include "space/model.hpp"
#include "space/trainer.hpp"

namespace space {

/// Training and inference always run in f32.
using Model = SpaceModel<float>;

Checkpoint capture_checkpoint(const RunConfig& cfg, const Model& model, const Trainer<float>* trainer);

/// Copies parameter values into `model`; throws ShapeMismatchError when a
/// name or shape differs.
void restore_parameters(const Checkpoint& ckpt, Model& model);
void restore_optimizer(const Checkpoint& ckpt, Trainer<float>& trainer);

/// Rebuilds the model described by the checkpoint config and loads its
/// parameters.
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt);
RunConfig run_config_of(const Checkpoint& ckpt);

struct TrainOutcome {
  std::size_t steps_done = 0;
  bool aborted = false;
  std::string abort_reason;
  double initial_poisson = 0.0;  // full-data evaluation before training
  double final_poisson = 0.0;    // full-data evaluation after training
};

struct TrainPaths {
  std::filesystem::path checkpoint;
  std::filesystem::path log;  // JSON lines
};

/// Trains from scratch (or continues from `resume`), writing one log line per
/// step and the checkpoint every eval_every steps and at the end. On a
/// non-finite loss the loop stops and the last good checkpoint on disk is
/// left untouched.
TrainOutcome train_run(const RunConfig& cfg, const Dataset& data, const TrainPaths& paths,
                       const Checkpoint* resume = nullptr, bool evaluate_endpoints = true);

/// Per-track Pearson over every record of the dataset. With `baseline` set,
/// each track is predicted by its training mean instead of the model.
MetricsReport evaluate_model(const Model& model, const Dataset& data, bool baseline = false,
                             std::size_t batch_size = 16);

/// Encoder routing frequencies per layer and species, and decoder
/// profile-type routing, over the whole dataset.
void export_routing(const Model& model, const Dataset& data, const std::filesystem::path& out_dir,
                    std::size_t batch_size = 16);

}  // namespace space
