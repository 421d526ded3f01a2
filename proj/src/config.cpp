#include "space/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"

namespace space {

namespace {

std::string joined(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : " ") + x;
  return s;
}

std::uint64_t to_u64(const std::string& field, const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(field + ": expected a nonnegative integer, got '" + text + "'");
  return v;
}

double to_f64(const std::string& field, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(field + ": expected a number, got '" + text + "'");
}

using Setter = std::function<void(const std::string& field, const std::string& value)>;

Setter size_field(std::size_t& dst) {
  return [&dst](const std::string& f, const std::string& v) { dst = to_u64(f, v); };
}
Setter u64_field(std::uint64_t& dst) {
  return [&dst](const std::string& f, const std::string& v) { dst = to_u64(f, v); };
}
Setter f64_field(double& dst) {
  return [&dst](const std::string& f, const std::string& v) { dst = to_f64(f, v); };
}

std::vector<std::pair<AssayType, std::size_t>> parse_layout(const std::string& field,
                                                             const std::vector<std::string>& items) {
  std::vector<std::pair<AssayType, std::size_t>> out;
  for (const auto& item : items) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError(field + ": expected TYPE:count, got '" + item + "'");
    try {
      out.emplace_back(parse_assay_type(item.substr(0, colon)), to_u64(field, item.substr(colon + 1)));
    } catch (const SchemaError& e) {
      throw ConfigError(field + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (synth.seq_len != model.seq_len || synth.bin_size != model.bin_size) {
    throw ConfigError("data: seq_len/bin_size must match the model section");
  }
  try {
    synth.validate(schema);
  } catch (const DataError& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
  train.validate(schema.num_species());
}

nlohmann::json RunConfig::to_json() const {
  return {{"model", model.to_json()}, {"schema", schema.to_json()}, {"synth", synth.to_json()},
          {"train", train.to_json()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  c.model = ModelConfig::from_json(j.at("model"));
  c.schema = ProfileSchema::from_json(j.at("schema"));
  const auto& s = j.at("synth");
  c.synth.records_per_species = s.at("records_per_species");
  c.synth.records_override = s.at("records_override").get<std::vector<std::size_t>>();
  c.synth.seq_len = s.at("seq_len");
  c.synth.bin_size = s.at("bin_size");
  c.synth.base_rate = s.at("base_rate");
  c.synth.amplitude_min = s.at("amplitude_min");
  c.synth.amplitude_max = s.at("amplitude_max");
  c.synth.kernel_width = s.at("kernel_width");
  c.synth.motif_length = s.at("motif_length");
  c.synth.shared_motifs_per_type = s.at("shared_motifs_per_type");
  c.synth.private_motifs_per_track = s.at("private_motifs_per_track");
  c.synth.insertions_per_record = s.at("insertions_per_record");
  c.synth.seed = s.at("seed");
  c.train = TrainConfig::from_json(j.at("train"));
  return c;
}

RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir) {
  RunConfig c;
  std::map<std::string, Setter> keys = {
      {"model.seq_len", size_field(c.model.seq_len)},
      {"model.bin_size", size_field(c.model.bin_size)},
      {"model.d_hidden", size_field(c.model.d_hidden)},
      {"model.stem_kernel", size_field(c.model.stem_kernel)},
      {"model.stem_channels", size_field(c.model.stem_channels)},
      {"model.depth", size_field(c.model.depth)},
      {"model.heads", size_field(c.model.heads)},
      {"model.experts", size_field(c.model.experts)},
      {"model.top_k", size_field(c.model.top_k)},
      {"model.gate_noise", f64_field(c.model.gate_noise)},
      {"model.decoder_experts", size_field(c.model.decoder_experts)},
      {"model.groups", size_field(c.model.groups)},
      {"model.decoder_top_k", size_field(c.model.decoder_top_k)},
      {"model.expert_kernel", size_field(c.model.expert_kernel)},
      {"model.expert_hidden", size_field(c.model.expert_hidden)},
      {"data.records_per_species", size_field(c.synth.records_per_species)},
      {"data.base_rate", f64_field(c.synth.base_rate)},
      {"data.amplitude_min", f64_field(c.synth.amplitude_min)},
      {"data.amplitude_max", f64_field(c.synth.amplitude_max)},
      {"data.kernel_width", size_field(c.synth.kernel_width)},
      {"data.motif_length", size_field(c.synth.motif_length)},
      {"data.shared_motifs_per_type", size_field(c.synth.shared_motifs_per_type)},
      {"data.private_motifs_per_track", size_field(c.synth.private_motifs_per_track)},
      {"data.insertions_per_record", size_field(c.synth.insertions_per_record)},
      {"data.seed", u64_field(c.synth.seed)},
      {"train.steps", size_field(c.train.steps)},
      {"train.warmup_steps", size_field(c.train.warmup_steps)},
      {"train.peak_lr", f64_field(c.train.peak_lr)},
      {"train.batch_size", size_field(c.train.batch_size)},
      {"train.accum_batches", size_field(c.train.accum_batches)},
      {"train.clip_norm", f64_field(c.train.clip_norm)},
      {"train.alpha", f64_field(c.train.alpha)},
      {"train.seed", u64_field(c.train.seed)},
      {"train.weight_decay", f64_field(c.train.weight_decay)},
      {"train.beta1", f64_field(c.train.beta1)},
      {"train.beta2", f64_field(c.train.beta2)},
      {"train.eps", f64_field(c.train.eps)},
      {"train.eval_every", size_field(c.train.eval_every)},
  };

  std::vector<std::string> species;
  std::map<std::string, std::vector<std::pair<AssayType, std::size_t>>> layouts;
  std::string schema_file;
  std::vector<std::string> records_override;
  std::set<std::string> seen;

  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    std::string field;
    for (const auto& p : item.parents) field += p + ".";
    field += item.name;
    if (!seen.insert(field).second) throw ConfigError(field + ": given more than once");
    const auto value = joined(item.inputs);
    if (item.parents.empty()) throw ConfigError(field + ": key outside a section");
    if (auto it = keys.find(field); it != keys.end()) {
      if (item.inputs.size() != 1) throw ConfigError(field + ": expected a single value");
      it->second(field, value);
    } else if (field == "data.species") {
      species = item.inputs;
    } else if (item.parents.size() == 2 && item.parents[0] == "data" && item.parents[1] == "layout") {
      layouts[item.name] = parse_layout(field, item.inputs);
    } else if (field == "data.schema") {
      schema_file = value;
    } else if (field == "data.records_override") {
      records_override = item.inputs;
    } else if (field == "train.batch_mode") {
      if (value == "alternating") {
        c.train.batch_mode = BatchMode::Alternating;
      } else if (value == "balanced") {
        c.train.batch_mode = BatchMode::Balanced;
      } else {
        throw ConfigError(field + ": expected 'alternating' or 'balanced', got '" + value + "'");
      }
    } else {
      throw ConfigError(field + ": unknown key");
    }
  }

  try {
    if (!schema_file.empty()) {
      if (!species.empty() || !layouts.empty()) throw ConfigError("data.schema: cannot be combined with an inline layout");
      auto path = base_dir / schema_file;
      std::ifstream f(path);
      if (!f) throw ConfigError("data.schema: cannot read " + path.string());
      c.schema = ProfileSchema::from_json(nlohmann::json::parse(f));
    } else {
      if (species.empty()) throw ConfigError("data.species: no species listed");
      SchemaLayout layout;
      for (const auto& name : species) {
        auto it = layouts.find(name);
        if (it == layouts.end()) throw ConfigError("data.layout." + name + ": missing");
        layout.emplace_back(name, it->second);
        layouts.erase(it);
      }
      if (!layouts.empty()) throw ConfigError("data.layout." + layouts.begin()->first + ": species not listed");
      c.schema = make_schema(layout);
    }
  } catch (const SchemaError& e) {
    throw ConfigError(std::string("data: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("data.schema: ") + e.what());
  }
  for (const auto& r : records_override) c.synth.records_override.push_back(to_u64("data.records_override", r));
  c.synth.seq_len = c.model.seq_len;
  c.synth.bin_size = c.model.bin_size;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse_run_config(in, path.parent_path());
}

}  // namespace space
