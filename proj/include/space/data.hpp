#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "space/rng.hpp"
#include "space/schema.hpp"
#include "space/tensor.hpp"

namespace space {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One-hot encoding of a nucleotide string: A,C,G,T map to rows 0..3, N to an
/// all-zero column. Case-insensitive.
template <typename T>
Tensor<T> one_hot(std::string_view sequence);

/// Writes the encoding of `sequence` into a [4, len] row-major buffer.
template <typename T>
void one_hot_into(std::string_view sequence, T* out);

/// A planted k-mer whose occurrences add a triangular bump of height
/// `amplitude` and width `kernel_width` bins to the rate of every track in
/// `tracks`.
struct MotifRule {
  std::string motif;
  double amplitude = 0.0;
  std::size_t kernel_width = 1;
  bool shared_across_species = false;
  std::vector<std::string> tracks;
};

struct SynthConfig {
  std::size_t records_per_species = 256;
  std::vector<std::size_t> records_override;  // optional per-species counts
  std::size_t seq_len = 2048;
  std::size_t bin_size = 128;
  double base_rate = 0.5;
  double amplitude_min = 8.0;
  double amplitude_max = 16.0;
  std::size_t kernel_width = 3;
  std::size_t motif_length = 8;
  std::size_t shared_motifs_per_type = 1;
  std::size_t private_motifs_per_track = 1;
  std::size_t insertions_per_record = 8;
  std::uint64_t seed = 0;

  void validate(const ProfileSchema& schema) const;
  std::size_t records_for(std::size_t m) const;
  nlohmann::json to_json() const;
};

/// Motif rules for every species, derived deterministically from the seed.
/// Rules flagged shared reuse the same k-mer and amplitude in every species.
std::vector<std::vector<MotifRule>> make_motif_rules(const ProfileSchema& schema, const SynthConfig& cfg);

/// Expected counts [C_m, L] for `sequence` under species-m rules.
std::vector<double> expected_rates(const ProfileSchema& schema, std::size_t m, const std::vector<MotifRule>& rules,
                                   std::string_view sequence, const SynthConfig& cfg);

struct SpeciesRecords {
  std::vector<std::string> sequences;
  std::vector<float> targets;  // [n, C_m, L]
  std::size_t size() const { return sequences.size(); }
};

struct Dataset {
  ProfileSchema schema;
  std::size_t seq_len = 0;
  std::size_t bin_size = 0;
  std::uint64_t seed = 0;
  std::vector<SpeciesRecords> species;

  std::size_t num_bins() const { return seq_len / bin_size; }
};

/// Generates the full dataset in memory.
Dataset synthesize_dataset(const ProfileSchema& schema, const SynthConfig& cfg);

/// Generates and writes a dataset directory:
///   manifest.json, <species>/sequences.txt, <species>/targets.f32,
///   <species>/tracks.csv
Dataset generate_dataset(const ProfileSchema& schema, const SynthConfig& cfg, const std::filesystem::path& dir);

void write_dataset(const Dataset& data, const SynthConfig& cfg, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

template <typename T>
struct SpeciesBatch {
  std::size_t species = 0;
  std::vector<std::size_t> records;
  Tensor<T> x;        // [B, 4, seq_len]
  Tensor<T> targets;  // [B, C_m, L]
};

template <typename T>
SpeciesBatch<T> make_batch(const Dataset& data, std::size_t species, std::vector<std::size_t> records);

enum class BatchMode { Alternating, Balanced };

struct BatchIndex {
  std::size_t species = 0;
  std::vector<std::size_t> records;
};

/// Endless single-species batch iterator cycling species 0..M-1.
///
/// Alternating: each species walks its own shuffled epochs independently.
/// Balanced: per epoch every species is padded to the majority count by
/// random resampling, so all species emit the same number of batches.
class BatchStream {
 public:
  BatchStream(const Dataset& data, std::size_t batch_size, BatchMode mode, std::uint64_t seed);

  BatchIndex next_index();

  template <typename T>
  SpeciesBatch<T> next() {
    auto idx = next_index();
    return make_batch<T>(*data_, idx.species, std::move(idx.records));
  }

  /// Batches per species per balanced epoch.
  std::size_t batches_per_epoch() const;

 private:
  void refill(std::size_t m);

  const Dataset* data_;
  std::size_t batch_size_;
  BatchMode mode_;
  std::uint64_t seed_;
  std::size_t cursor_ = 0;
  std::size_t max_records_ = 0;
  std::vector<std::vector<std::size_t>> queue_;
  std::vector<std::size_t> position_;
  std::vector<std::uint64_t> epoch_;
};

}  // namespace space
