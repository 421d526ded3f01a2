#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "space/data.hpp"
#include "space/model_config.hpp"
#include "space/schema.hpp"
#include "space/trainer.hpp"

namespace space {

using SchemaLayout = std::vector<std::pair<std::string, std::vector<std::pair<AssayType, std::size_t>>>>;

/// Everything one run needs: architecture, schema, synthetic-data knobs and
/// optimization settings. The synthetic data takes seq_len and bin_size from
/// the model section.
struct RunConfig {
  ModelConfig model;
  ProfileSchema schema;
  SynthConfig synth;
  TrainConfig train;

  /// Re-checks every section and the constraints between them. Throws
  /// ConfigError naming the field.
  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

/// Parses the sectioned key-value format:
///
///   [model]  seq_len = 2048 ...
///   [data]   species = human mouse
///            layout.human = DNASE_ATAC:2 CAGE:2
///            (or schema = file.json, relative to `base_dir`)
///   [train]  steps = 2000 ...
///
/// Unknown sections or keys are rejected.
RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace space
