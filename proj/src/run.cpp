#include "space/run.hpp"

#include <cmath>
#include <fstream>

namespace space {

namespace {

template <typename V>
Blob make_blob(const std::string& name, const Shape& shape, const V& values) {
  Blob b{name, DType::f32, shape, {}};
  b.values.assign(values.begin(), values.end());
  return b;
}

}  // namespace

Checkpoint capture_checkpoint(const RunConfig& cfg, const Model& model, const Trainer<float>* trainer) {
  Checkpoint c;
  c.config = cfg.to_json();
  const auto& entries = model.params().entries();
  for (const auto& [name, t] : entries) c.params.push_back(make_blob(name, t.shape(), t.data()));
  if (trainer) {
    const auto& tr = *trainer;
    c.step = tr.current_step();
    c.batches_consumed = tr.batches_consumed();
    c.rng_state = tr.rng_state();
    const auto& m = tr.optimizer().first_moments();
    const auto& v = tr.optimizer().second_moments();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      c.adam_m.push_back(make_blob(entries[i].first, entries[i].second.shape(), m[i]));
      c.adam_v.push_back(make_blob(entries[i].first, entries[i].second.shape(), v[i]));
    }
  }
  return c;
}

namespace {

void check_blobs(const std::vector<Blob>& blobs, const Model& model, const char* what) {
  const auto& entries = model.params().entries();
  if (blobs.size() != entries.size()) {
    throw ShapeMismatchError(std::string("checkpoint: ") + what + " holds " + std::to_string(blobs.size()) +
                             " tensors, model has " + std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    if (blobs[i].name != entries[i].first || blobs[i].shape != entries[i].second.shape()) {
      throw ShapeMismatchError(std::string("checkpoint: ") + what + " '" + blobs[i].name + "' " +
                               shape_str(blobs[i].shape) + " does not match '" + entries[i].first + "' " +
                               shape_str(entries[i].second.shape()));
    }
  }
}

}  // namespace

void restore_parameters(const Checkpoint& ckpt, Model& model) {
  check_blobs(ckpt.params, model, "parameter");
  const auto& entries = model.params().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto t = entries[i].second;
    auto d = t.data();
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = static_cast<float>(ckpt.params[i].values[j]);
  }
}

void restore_optimizer(const Checkpoint& ckpt, Trainer<float>& trainer) {
  auto& opt = trainer.optimizer();
  auto& m = opt.first_moments();
  auto& v = opt.second_moments();
  if (ckpt.adam_m.size() != m.size() || ckpt.adam_v.size() != v.size()) {
    throw ShapeMismatchError("checkpoint: optimizer moments do not match the model");
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (ckpt.adam_m[i].values.size() != m[i].size() || ckpt.adam_v[i].values.size() != v[i].size()) {
      throw ShapeMismatchError("checkpoint: moment '" + ckpt.adam_m[i].name + "' has the wrong size");
    }
    for (std::size_t j = 0; j < m[i].size(); ++j) {
      m[i][j] = static_cast<float>(ckpt.adam_m[i].values[j]);
      v[i][j] = static_cast<float>(ckpt.adam_v[i].values[j]);
    }
  }
  trainer.resume(ckpt.step, ckpt.batches_consumed, ckpt.rng_state);
}

RunConfig run_config_of(const Checkpoint& ckpt) {
  try {
    return RunConfig::from_json(ckpt.config);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: unreadable run config: ") + e.what());
  }
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt) {
  const auto cfg = run_config_of(ckpt);
  auto model = std::make_unique<Model>(cfg.model, cfg.schema, cfg.train.seed);
  restore_parameters(ckpt, *model);
  return model;
}

TrainOutcome train_run(const RunConfig& cfg, const Dataset& data, const TrainPaths& paths, const Checkpoint* resume,
                       bool evaluate_endpoints) {
  cfg.validate();
  if (!(data.schema == cfg.schema)) throw ConfigError("data: dataset schema differs from the config schema");
  if (data.seq_len != cfg.model.seq_len || data.bin_size != cfg.model.bin_size) {
    throw ConfigError("data: dataset seq_len/bin_size differ from the model section");
  }
  Model model(cfg.model, cfg.schema, cfg.train.seed);
  Trainer<float> trainer(model, data, cfg.train);
  if (resume) {
    restore_parameters(*resume, model);
    restore_optimizer(*resume, trainer);
  }

  std::ofstream log(paths.log, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + paths.log.string());

  TrainOutcome out;
  if (evaluate_endpoints) out.initial_poisson = evaluate_poisson(model, data, 16);
  while (trainer.current_step() < cfg.train.steps) {
    nlohmann::json rec;
    try {
      rec = trainer.step();
    } catch (const NumericError& e) {
      out.aborted = true;
      out.abort_reason = e.what();
      break;
    }
    log << rec.dump() << '\n';
    if (!log) throw IoError("failed writing " + paths.log.string());
    ++out.steps_done;
    const auto step = trainer.current_step();
    if (step % cfg.train.eval_every == 0 || step == cfg.train.steps) {
      save_checkpoint(capture_checkpoint(cfg, model, &trainer), paths.checkpoint);
    }
  }
  log.flush();
  if (evaluate_endpoints && !out.aborted) out.final_poisson = evaluate_poisson(model, data, 16);
  return out;
}

MetricsReport evaluate_model(const Model& model, const Dataset& data, bool baseline, std::size_t batch_size) {
  const auto& schema = model.schema();
  if (!(data.schema == schema)) throw ConfigError("data: dataset schema differs from the checkpoint schema");
  MetricsReport report;
  const std::size_t bins = data.num_bins();
  for (std::size_t m = 0; m < schema.num_species(); ++m) {
    const auto& sp = data.species[m];
    const std::size_t n = sp.size(), C = schema.num_tracks(m);
    std::vector<double> target(sp.targets.begin(), sp.targets.end());
    std::vector<double> pred;
    if (baseline) {
      pred.assign(target.size(), 0.0);
      for (std::size_t c = 0; c < C; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t l = 0; l < bins; ++l) mean += target[(i * C + c) * bins + l];
        }
        mean /= static_cast<double>(n * bins);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t l = 0; l < bins; ++l) pred[(i * C + c) * bins + l] = mean;
        }
      }
    } else {
      pred = predict_species(model, data, m, batch_size);
    }
    const auto r = pearson_per_track(pred, target, n, C, bins);
    for (std::size_t c = 0; c < C; ++c) {
      const auto& track = schema.species(m).tracks[c];
      report.per_track.push_back({schema.species(m).name, track.id, track.assay, r[c]});
    }
  }
  report.finalize();
  return report;
}

void export_routing(const Model& model, const Dataset& data, const std::filesystem::path& out_dir,
                    std::size_t batch_size) {
  const auto& schema = model.schema();
  if (!(data.schema == schema)) throw ConfigError("data: dataset schema differs from the checkpoint schema");
  auto trace = model.make_trace();
  ProfileRoutingTally tally(schema.num_profile_types(), model.config().decoder_experts);
  for (std::size_t m = 0; m < schema.num_species(); ++m) predict_species(model, data, m, batch_size, &trace, &tally);
  std::vector<std::string> names;
  for (const auto& sp : schema.all_species()) names.push_back(sp.name);
  std::filesystem::create_directories(out_dir);
  export_routing_frequencies(trace, names, out_dir / "routing_frequencies.csv");
  export_profile_routing(tally, schema, out_dir / "profile_routing.csv");
}

}  // namespace space
