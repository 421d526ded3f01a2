#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace space {

/// Experiment families a profile track can come from. Declaration order is the
/// canonical profile-type order used for categorization and exports.
enum class AssayType { DnaseAtac = 0, TfChip = 1, HistoneChip = 2, Cage = 3 };

inline constexpr std::size_t kAssayTypeCount = 4;

std::string_view to_string(AssayType type);
AssayType parse_assay_type(std::string_view text);

struct Track {
  std::string id;
  AssayType assay;

  bool operator==(const Track&) const = default;
};

struct SpeciesTracks {
  std::string name;
  std::vector<Track> tracks;

  bool operator==(const SpeciesTracks&) const = default;
};

class SchemaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Per-species track catalog plus the categorization permutation that groups
/// tracks by assay type (and its inverse).
class ProfileSchema {
 public:
  ProfileSchema() = default;
  explicit ProfileSchema(std::vector<SpeciesTracks> species);

  std::size_t num_species() const { return species_.size(); }
  const SpeciesTracks& species(std::size_t m) const { return species_.at(m); }
  const std::vector<SpeciesTracks>& all_species() const { return species_; }
  std::size_t species_index(std::string_view name) const;
  std::size_t num_tracks(std::size_t m) const { return species_.at(m).tracks.size(); }

  /// Assay types present anywhere in the schema, canonical order (size Q).
  const std::vector<AssayType>& profile_types() const { return types_; }
  std::size_t num_profile_types() const { return types_.size(); }
  std::size_t profile_type_index(AssayType type) const;

  /// Track indices of species m ordered by profile type (stable within a type).
  const std::vector<std::size_t>& categorize_order(std::size_t m) const { return phi_.at(m); }
  /// Inverse of categorize_order: position of each original track in the
  /// categorized layout.
  const std::vector<std::size_t>& recompose_order(std::size_t m) const { return psi_.at(m); }
  /// Track count per profile type for species m (entries may be 0).
  const std::vector<std::size_t>& type_counts(std::size_t m) const { return counts_.at(m); }

  template <typename T>
  std::vector<T> categorize(std::size_t m, std::span<const T> values) const {
    const auto& order = phi_.at(m);
    check_length(m, values.size());
    std::vector<T> out(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) out[i] = values[order[i]];
    return out;
  }

  template <typename T>
  std::vector<T> recompose(std::size_t m, std::span<const T> values) const {
    const auto& order = psi_.at(m);
    check_length(m, values.size());
    std::vector<T> out(order.size());
    for (std::size_t j = 0; j < order.size(); ++j) out[j] = values[order[j]];
    return out;
  }

  nlohmann::json to_json() const;
  static ProfileSchema from_json(const nlohmann::json& j);

  bool operator==(const ProfileSchema& other) const { return species_ == other.species_; }

 private:
  void check_length(std::size_t m, std::size_t n) const;

  std::vector<SpeciesTracks> species_;
  std::vector<AssayType> types_;
  std::vector<std::vector<std::size_t>> phi_;
  std::vector<std::vector<std::size_t>> psi_;
  std::vector<std::vector<std::size_t>> counts_;
};

/// Builds a schema from per-species layouts such as
/// {"human", {{DnaseAtac, 2}, {Cage, 2}}}; track ids are "<species>_<type>_<i>".
ProfileSchema make_schema(
    const std::vector<std::pair<std::string, std::vector<std::pair<AssayType, std::size_t>>>>& layout);

}  // namespace space
