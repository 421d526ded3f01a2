#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "space/schema.hpp"

namespace space {

/// C[i][j] counts samples of class i predicted as class j.
struct ConfusionMatrix {
  std::vector<std::vector<std::uint64_t>> counts;

  explicit ConfusionMatrix(std::size_t classes = 2);
  explicit ConfusionMatrix(std::vector<std::vector<std::uint64_t>> c);
  std::size_t classes() const { return counts.size(); }
  std::uint64_t& operator()(std::size_t i, std::size_t j) { return counts.at(i).at(j); }
  std::uint64_t operator()(std::size_t i, std::size_t j) const { return counts.at(i).at(j); }
};

/// Zero when any marginal product vanishes.
double mcc_binary(double tp, double tn, double fp, double fn);

/// Triple-sum covariance over the confusion matrix, normalized by the
/// row/column marginal spread. Zero when the denominator vanishes.
double mcc_multiclass(const ConfusionMatrix& c);

/// Pearson r; nullopt when either side has zero variance or n < 2.
std::optional<double> pearson(std::span<const double> pred, std::span<const double> target);

/// Rows are [n, C, L] flattened in row-major order; returns one r per track
/// over all n*L bins.
std::vector<std::optional<double>> pearson_per_track(std::span<const double> pred, std::span<const double> target,
                                                     std::size_t n, std::size_t tracks, std::size_t bins);

struct TrackScore {
  std::string species;
  std::string track_id;
  AssayType assay;
  std::optional<double> pearson;
};

/// Per-track scores plus means over non-null entries per assay type and
/// overall.
struct MetricsReport {
  std::vector<TrackScore> per_track;
  std::map<std::string, std::optional<double>> per_assay_type;
  std::optional<double> overall;
  std::optional<double> mcc;

  void finalize();
  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;
};

}  // namespace space
