// space: data generation, training, evaluation, gradient checks and routing
// export for the species-aware MoE profile model.
#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "space/checkpoint.hpp"
#include "space/config.hpp"
#include "space/data.hpp"
#include "space/gradcheck.hpp"
#include "space/run.hpp"

namespace fs = std::filesystem;
using namespace space;

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kNumeric = 4, kGradcheck = 5 };

void apply_thread_cap() {
  if (const char* env = std::getenv("SPACE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
}

int gen_data(const fs::path& config, const fs::path& out, const std::optional<std::uint64_t>& seed) {
  auto cfg = load_run_config(config);
  if (seed) cfg.synth.seed = *seed;
  cfg.validate();
  auto data = generate_dataset(cfg.schema, cfg.synth, out);
  std::cout << "wrote " << out.string() << ": seq_len " << data.seq_len << ", bin_size " << data.bin_size << ", seed "
            << data.seed << '\n';
  for (std::size_t m = 0; m < data.species.size(); ++m) {
    std::cout << "  " << data.schema.species(m).name << ": " << data.species[m].size() << " records, "
              << data.schema.num_tracks(m) << " tracks\n";
  }
  return kOk;
}

int train(const fs::path& config, const fs::path& data_dir, const fs::path& out, const std::optional<double>& alpha,
          const std::optional<std::uint64_t>& seed, const std::optional<std::size_t>& steps, fs::path log) {
  auto cfg = load_run_config(config);
  if (alpha) cfg.train.alpha = *alpha;
  if (seed) cfg.train.seed = *seed;
  if (steps) {
    cfg.train.steps = *steps;
    if (cfg.train.warmup_steps > *steps) cfg.train.warmup_steps = *steps;
  }
  cfg.validate();
  auto data = load_dataset(data_dir);
  if (log.empty()) log = out.parent_path() / "train_log.jsonl";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  auto res = train_run(cfg, data, {out, log});
  nlohmann::json summary = {{"steps", res.steps_done},
                            {"initial_poisson", res.initial_poisson},
                            {"final_poisson", res.final_poisson},
                            {"checkpoint", out.string()},
                            {"log", log.string()}};
  if (res.aborted) {
    std::cerr << "training aborted: " << res.abort_reason << '\n';
    summary["aborted"] = res.abort_reason;
    std::cout << summary.dump() << '\n';
    return kNumeric;
  }
  std::cout << summary.dump() << '\n';
  return kOk;
}

int eval(const fs::path& ckpt_path, const fs::path& data_dir, const fs::path& metrics_out, bool baseline) {
  auto ckpt = load_checkpoint(ckpt_path);
  auto model = model_from_checkpoint(ckpt);
  auto data = load_dataset(data_dir);
  auto report = evaluate_model(*model, data, baseline);
  if (metrics_out.has_parent_path()) fs::create_directories(metrics_out.parent_path());
  report.write(metrics_out);
  std::cout << "overall pearson: ";
  if (report.overall) {
    std::cout << *report.overall;
  } else {
    std::cout << "null";
  }
  std::cout << '\n';
  return kOk;
}

int gradcheck_cmd(std::uint64_t seed, double tol) {
  GradcheckOptions opt;
  opt.seed = seed;
  std::vector<std::string> failed;
  for (const auto& r : run_gradcheck_suite(opt)) {
    const bool ok = r.max_rel_error <= tol;
    std::printf("%-20s max_rel_err %.3e  probes %4zu  %s\n", r.op.c_str(), r.max_rel_error, r.probes,
                ok ? "ok" : "FAIL");
    if (!ok) failed.push_back(r.op);
  }
  if (!failed.empty()) {
    std::string list;
    for (const auto& f : failed) list += (list.empty() ? "" : ", ") + f;
    std::fprintf(stderr, "gradcheck failed (tol %.1e): %s\n", tol, list.c_str());
    return kGradcheck;
  }
  return kOk;
}

int routing(const fs::path& ckpt_path, const fs::path& data_dir, const fs::path& out) {
  auto ckpt = load_checkpoint(ckpt_path);
  auto model = model_from_checkpoint(ckpt);
  auto data = load_dataset(data_dir);
  export_routing(*model, data, out);
  std::cout << "wrote " << (out / "routing_frequencies.csv").string() << " and "
            << (out / "profile_routing.csv").string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();
  CLI::App app{"Species-aware mixture-of-experts genomic profile model"};
  app.require_subcommand(1);

  fs::path config, out, data_dir, ckpt, metrics_out, log;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<std::size_t> steps;
  bool baseline = false;
  std::uint64_t gc_seed = 0;
  double tol = 1e-4;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-species dataset");
  gen->add_option("--config", config, "Run config file")->required();
  gen->add_option("--out", out, "Output dataset directory")->required();
  gen->add_option("--seed", seed, "Override the data seed");

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint and JSON-lines log");
  tr->add_option("--config", config, "Run config file")->required();
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", out, "Checkpoint path")->required();
  tr->add_option("--alpha", alpha, "Override the MI weight");
  tr->add_option("--seed", seed, "Override the training seed");
  tr->add_option("--steps", steps, "Override the number of optimizer steps");
  tr->add_option("--log", log, "Log path (default: train_log.jsonl next to the checkpoint)");

  auto* ev = app.add_subcommand("eval", "Per-track Pearson of a checkpoint on a dataset");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--metrics-out", metrics_out, "metrics.json path")->required();
  ev->add_flag("--baseline-mean", baseline, "Predict each track's mean instead of running the model");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks of every op and the full model");
  gc->add_option("--seed", gc_seed, "Seed");
  gc->add_option("--tol", tol, "Maximum relative error");

  auto* rt = app.add_subcommand("routing", "Export encoder and decoder routing frequencies");
  rt->add_option("--ckpt", ckpt, "Checkpoint")->required();
  rt->add_option("--data", data_dir, "Dataset directory")->required();
  rt->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return gen_data(config, out, seed);
    if (*tr) return train(config, data_dir, out, alpha, seed, steps, log);
    if (*ev) return eval(ckpt, data_dir, metrics_out, baseline);
    if (*gc) return gradcheck_cmd(gc_seed, tol);
    if (*rt) return routing(ckpt, data_dir, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const SchemaError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kIo;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  }
  return kOk;
}
