#include "space/metrics.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "space/data.hpp"

namespace space {

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : counts(classes, std::vector<std::uint64_t>(classes, 0)) {
  if (classes < 2) throw std::invalid_argument("confusion matrix needs at least 2 classes");
}

ConfusionMatrix::ConfusionMatrix(std::vector<std::vector<std::uint64_t>> c) : counts(std::move(c)) {
  if (counts.size() < 2) throw std::invalid_argument("confusion matrix needs at least 2 classes");
  for (const auto& row : counts) {
    if (row.size() != counts.size()) throw std::invalid_argument("confusion matrix must be square");
  }
}

double mcc_binary(double tp, double tn, double fp, double fn) {
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(denom);
}

double mcc_multiclass(const ConfusionMatrix& c) {
  const std::size_t K = c.classes();
  std::vector<long double> row(K, 0.0L), col(K, 0.0L);
  long double total = 0.0L;
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      const auto v = static_cast<long double>(c(i, j));
      row[i] += v;
      col[j] += v;
      total += v;
    }
  }
  // sum_k sum_l sum_m C_kk C_lm - C_kl C_mk
  long double num = 0.0L;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t l = 0; l < K; ++l) {
      for (std::size_t m = 0; m < K; ++m) {
        num += static_cast<long double>(c(k, k)) * c(l, m) - static_cast<long double>(c(k, l)) * c(m, k);
      }
    }
  }
  long double rows = 0.0L, cols = 0.0L;
  for (std::size_t k = 0; k < K; ++k) {
    rows += row[k] * (total - row[k]);
    cols += col[k] * (total - col[k]);
  }
  if (rows == 0.0L || cols == 0.0L) return 0.0;
  return static_cast<double>(num / std::sqrt(rows * cols));
}

std::optional<double> pearson(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = pred.size();
  if (n < 2) return std::nullopt;
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mp += pred[i];
    mt += target[i];
  }
  mp /= static_cast<double>(n);
  mt /= static_cast<double>(n);
  double spp = 0.0, stt = 0.0, spt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = pred[i] - mp, b = target[i] - mt;
    spp += a * a;
    stt += b * b;
    spt += a * b;
  }
  if (spp <= 0.0 || stt <= 0.0) return std::nullopt;
  return spt / std::sqrt(spp * stt);
}

std::vector<std::optional<double>> pearson_per_track(std::span<const double> pred, std::span<const double> target,
                                                     std::size_t n, std::size_t tracks, std::size_t bins) {
  if (pred.size() != n * tracks * bins || target.size() != pred.size()) {
    throw std::invalid_argument("pearson_per_track: expected " + std::to_string(n * tracks * bins) + " values");
  }
  std::vector<std::optional<double>> out(tracks);
  std::vector<double> a(n * bins), b(n * bins);
  for (std::size_t c = 0; c < tracks; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t l = 0; l < bins; ++l) {
        a[i * bins + l] = pred[(i * tracks + c) * bins + l];
        b[i * bins + l] = target[(i * tracks + c) * bins + l];
      }
    }
    out[c] = pearson(a, b);
  }
  return out;
}

namespace {

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

void MetricsReport::finalize() {
  std::map<std::string, std::vector<double>> by_type;
  std::vector<double> all;
  for (const auto& s : per_track) {
    auto& bucket = by_type[std::string(to_string(s.assay))];
    if (!s.pearson) continue;
    bucket.push_back(*s.pearson);
    all.push_back(*s.pearson);
  }
  per_assay_type.clear();
  for (const auto& [type, values] : by_type) per_assay_type[type] = mean_of(values);
  overall = mean_of(all);
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["per_track"] = nlohmann::json::array();
  for (const auto& s : per_track) {
    j["per_track"].push_back({{"species", s.species},
                              {"track_id", s.track_id},
                              {"assay_type", to_string(s.assay)},
                              {"pearson", opt_json(s.pearson)}});
  }
  j["per_assay_type"] = nlohmann::json::object();
  for (const auto& [type, v] : per_assay_type) j["per_assay_type"][type] = opt_json(v);
  j["overall"] = opt_json(overall);
  if (mcc) j["mcc"] = *mcc;
  return j;
}

void MetricsReport::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace space
