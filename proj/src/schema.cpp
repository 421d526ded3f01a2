#include "space/schema.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

namespace space {

namespace {
constexpr std::array<std::string_view, kAssayTypeCount> kAssayNames = {"DNASE_ATAC", "TF_CHIP", "HISTONE_CHIP",
                                                                       "CAGE"};
}

std::string_view to_string(AssayType type) { return kAssayNames.at(static_cast<std::size_t>(type)); }

AssayType parse_assay_type(std::string_view text) {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  for (std::size_t i = 0; i < kAssayNames.size(); ++i) {
    if (upper == kAssayNames[i]) return static_cast<AssayType>(i);
  }
  throw SchemaError("unknown assay type '" + std::string(text) + "'");
}

ProfileSchema::ProfileSchema(std::vector<SpeciesTracks> species) : species_(std::move(species)) {
  if (species_.empty()) throw SchemaError("schema has no species");
  std::set<std::string> names;
  std::array<bool, kAssayTypeCount> present{};
  for (const auto& sp : species_) {
    if (sp.name.empty()) throw SchemaError("species with empty name");
    if (!names.insert(sp.name).second) throw SchemaError("duplicate species '" + sp.name + "'");
    if (sp.tracks.empty()) throw SchemaError("species '" + sp.name + "' has no tracks");
    std::set<std::string> ids;
    for (const auto& t : sp.tracks) {
      if (t.id.empty()) throw SchemaError("species '" + sp.name + "' has a track with empty id");
      if (!ids.insert(t.id).second) throw SchemaError("duplicate track id '" + t.id + "' in '" + sp.name + "'");
      present[static_cast<std::size_t>(t.assay)] = true;
    }
  }
  for (std::size_t i = 0; i < kAssayTypeCount; ++i) {
    if (present[i]) types_.push_back(static_cast<AssayType>(i));
  }
  for (const auto& sp : species_) {
    std::vector<std::size_t> order(sp.tracks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return sp.tracks[a].assay < sp.tracks[b].assay;
    });
    std::vector<std::size_t> inverse(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) inverse[order[i]] = i;
    std::vector<std::size_t> counts(types_.size(), 0);
    for (const auto& t : sp.tracks) ++counts[profile_type_index(t.assay)];
    phi_.push_back(std::move(order));
    psi_.push_back(std::move(inverse));
    counts_.push_back(std::move(counts));
  }
}

std::size_t ProfileSchema::species_index(std::string_view name) const {
  for (std::size_t m = 0; m < species_.size(); ++m) {
    if (species_[m].name == name) return m;
  }
  throw SchemaError("unknown species '" + std::string(name) + "'");
}

std::size_t ProfileSchema::profile_type_index(AssayType type) const {
  auto it = std::find(types_.begin(), types_.end(), type);
  if (it == types_.end()) throw SchemaError("profile type " + std::string(to_string(type)) + " not in schema");
  return static_cast<std::size_t>(it - types_.begin());
}

void ProfileSchema::check_length(std::size_t m, std::size_t n) const {
  if (n != num_tracks(m)) {
    throw SchemaError("expected " + std::to_string(num_tracks(m)) + " track values for species '" +
                      species_.at(m).name + "', got " + std::to_string(n));
  }
}

nlohmann::json ProfileSchema::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& sp : species_) {
    nlohmann::json tracks = nlohmann::json::array();
    for (const auto& t : sp.tracks) tracks.push_back({{"id", t.id}, {"assay_type", std::string(to_string(t.assay))}});
    out.push_back({{"name", sp.name}, {"tracks", tracks}});
  }
  return out;
}

ProfileSchema ProfileSchema::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw SchemaError("schema must be a JSON array of species");
  std::vector<SpeciesTracks> species;
  for (const auto& sj : j) {
    SpeciesTracks sp;
    sp.name = sj.at("name").get<std::string>();
    for (const auto& tj : sj.at("tracks")) {
      if (!tj.contains("assay_type")) throw SchemaError("track without assay type in '" + sp.name + "'");
      sp.tracks.push_back({tj.at("id").get<std::string>(), parse_assay_type(tj.at("assay_type").get<std::string>())});
    }
    species.push_back(std::move(sp));
  }
  return ProfileSchema(std::move(species));
}

ProfileSchema make_schema(
    const std::vector<std::pair<std::string, std::vector<std::pair<AssayType, std::size_t>>>>& layout) {
  std::vector<SpeciesTracks> species;
  for (const auto& [name, groups] : layout) {
    SpeciesTracks sp{name, {}};
    for (const auto& [type, count] : groups) {
      for (std::size_t i = 0; i < count; ++i) {
        sp.tracks.push_back({name + "_" + std::string(to_string(type)) + "_" + std::to_string(i), type});
      }
    }
    species.push_back(std::move(sp));
  }
  return ProfileSchema(std::move(species));
}

}  // namespace space
