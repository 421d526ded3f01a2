#include "space/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace space {

namespace fs = std::filesystem;

template <typename T>
void one_hot_into(std::string_view sequence, T* out) {
  const std::size_t len = sequence.size();
  std::fill(out, out + 4 * len, T(0));
  for (std::size_t i = 0; i < len; ++i) {
    switch (sequence[i]) {
      case 'A': case 'a': out[0 * len + i] = T(1); break;
      case 'C': case 'c': out[1 * len + i] = T(1); break;
      case 'G': case 'g': out[2 * len + i] = T(1); break;
      case 'T': case 't': out[3 * len + i] = T(1); break;
      case 'N': case 'n': break;
      default:
        throw DataError("one_hot: illegal character '" + std::string(1, sequence[i]) + "' at position " +
                        std::to_string(i));
    }
  }
}

template <typename T>
Tensor<T> one_hot(std::string_view sequence) {
  if (sequence.empty()) throw DataError("one_hot: empty sequence");
  auto out = Tensor<T>::zeros({4, sequence.size()});
  one_hot_into(sequence, out.data().data());
  return out;
}

template Tensor<float> one_hot<float>(std::string_view);
template Tensor<double> one_hot<double>(std::string_view);
template void one_hot_into<float>(std::string_view, float*);
template void one_hot_into<double>(std::string_view, double*);

void SynthConfig::validate(const ProfileSchema& schema) const {
  if (bin_size == 0 || seq_len == 0) throw DataError("seq_len and bin_size must be positive");
  if (seq_len % bin_size != 0) {
    throw DataError("seq_len (" + std::to_string(seq_len) + ") is not divisible by bin_size (" +
                    std::to_string(bin_size) + ")");
  }
  if (motif_length < 4 || motif_length > 12) throw DataError("motif_length must lie in [4, 12]");
  if (motif_length > seq_len) throw DataError("motif_length exceeds seq_len");
  if (amplitude_min < 0.0 || amplitude_max < amplitude_min) throw DataError("amplitude range is invalid");
  if (base_rate < 0.0) throw DataError("base_rate must be nonnegative");
  if (kernel_width == 0) throw DataError("kernel_width must be positive");
  if (shared_motifs_per_type < private_motifs_per_track) {
    throw DataError("shared_motifs_per_type must be at least private_motifs_per_track");
  }
  if (shared_motifs_per_type == 0) throw DataError("shared_motifs_per_type must be positive");
  if (!records_override.empty() && records_override.size() != schema.num_species()) {
    throw DataError("records_override must list one count per species");
  }
  for (std::size_t m = 0; m < schema.num_species(); ++m) {
    if (records_for(m) == 0) throw DataError("species '" + schema.species(m).name + "' has zero records");
  }
}

std::size_t SynthConfig::records_for(std::size_t m) const {
  return records_override.empty() ? records_per_species : records_override.at(m);
}

nlohmann::json SynthConfig::to_json() const {
  return {{"records_per_species", records_per_species},
          {"records_override", records_override},
          {"seq_len", seq_len},
          {"bin_size", bin_size},
          {"base_rate", base_rate},
          {"amplitude_min", amplitude_min},
          {"amplitude_max", amplitude_max},
          {"kernel_width", kernel_width},
          {"motif_length", motif_length},
          {"shared_motifs_per_type", shared_motifs_per_type},
          {"private_motifs_per_track", private_motifs_per_track},
          {"insertions_per_record", insertions_per_record},
          {"seed", seed}};
}

std::vector<std::vector<MotifRule>> make_motif_rules(const ProfileSchema& schema, const SynthConfig& cfg) {
  auto rng = make_rng(cfg.seed, "motifs");
  std::set<std::string> used;
  auto fresh_motif = [&]() {
    static constexpr char kBases[] = "ACGT";
    std::uniform_int_distribution<int> base(0, 3);
    for (;;) {
      std::string s(cfg.motif_length, 'A');
      for (auto& c : s) c = kBases[base(rng)];
      if (used.insert(s).second) return s;
    }
  };
  std::uniform_real_distribution<double> amp(cfg.amplitude_min, cfg.amplitude_max);

  std::vector<std::vector<MotifRule>> rules(schema.num_species());
  for (AssayType type : schema.profile_types()) {
    for (std::size_t i = 0; i < cfg.shared_motifs_per_type; ++i) {
      const std::string motif = fresh_motif();
      const double amplitude = amp(rng);
      for (std::size_t m = 0; m < schema.num_species(); ++m) {
        MotifRule rule{motif, amplitude, cfg.kernel_width, true, {}};
        for (const auto& t : schema.species(m).tracks) {
          if (t.assay == type) rule.tracks.push_back(t.id);
        }
        if (!rule.tracks.empty()) rules[m].push_back(std::move(rule));
      }
    }
  }
  for (std::size_t m = 0; m < schema.num_species(); ++m) {
    for (const auto& t : schema.species(m).tracks) {
      for (std::size_t i = 0; i < cfg.private_motifs_per_track; ++i) {
        rules[m].push_back(MotifRule{fresh_motif(), amp(rng), cfg.kernel_width, false, {t.id}});
      }
    }
  }
  return rules;
}

std::vector<double> expected_rates(const ProfileSchema& schema, std::size_t m, const std::vector<MotifRule>& rules,
                                   std::string_view sequence, const SynthConfig& cfg) {
  const auto& tracks = schema.species(m).tracks;
  const std::size_t bins = cfg.seq_len / cfg.bin_size;
  std::vector<double> rate(tracks.size() * bins, cfg.base_rate);
  for (const auto& rule : rules) {
    std::vector<std::size_t> rows;
    for (const auto& id : rule.tracks) {
      auto it = std::find_if(tracks.begin(), tracks.end(), [&](const Track& t) { return t.id == id; });
      if (it != tracks.end()) rows.push_back(static_cast<std::size_t>(it - tracks.begin()));
    }
    const double half = (static_cast<double>(rule.kernel_width) + 1.0) / 2.0;
    const auto reach = static_cast<std::ptrdiff_t>(std::ceil(half));
    for (std::size_t pos = sequence.find(rule.motif); pos != std::string_view::npos;
         pos = sequence.find(rule.motif, pos + 1)) {
      const auto center = static_cast<std::ptrdiff_t>((pos + rule.motif.size() / 2) / cfg.bin_size);
      for (std::ptrdiff_t d = -reach; d <= reach; ++d) {
        const std::ptrdiff_t bin = center + d;
        const double w = 1.0 - std::abs(static_cast<double>(d)) / half;
        if (w <= 0.0 || bin < 0 || bin >= static_cast<std::ptrdiff_t>(bins)) continue;
        for (auto row : rows) rate[row * bins + static_cast<std::size_t>(bin)] += rule.amplitude * w;
      }
    }
  }
  return rate;
}

Dataset synthesize_dataset(const ProfileSchema& schema, const SynthConfig& cfg) {
  cfg.validate(schema);
  const auto rules = make_motif_rules(schema, cfg);
  Dataset data;
  data.schema = schema;
  data.seq_len = cfg.seq_len;
  data.bin_size = cfg.bin_size;
  data.seed = cfg.seed;
  const std::size_t bins = cfg.seq_len / cfg.bin_size;
  for (std::size_t m = 0; m < schema.num_species(); ++m) {
    const std::size_t n = cfg.records_for(m);
    const std::size_t tracks = schema.num_tracks(m);
    SpeciesRecords records;
    records.sequences.resize(n);
    records.targets.resize(n * tracks * bins);
    std::vector<std::string> motifs;
    for (const auto& r : rules[m]) motifs.push_back(r.motif);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      auto rng = make_rng(cfg.seed, "record/" + schema.species(m).name, i);
      static constexpr char kBases[] = "ACGT";
      std::uniform_int_distribution<int> base(0, 3);
      std::string seq(cfg.seq_len, 'A');
      for (auto& c : seq) c = kBases[base(rng)];
      if (!motifs.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, motifs.size() - 1);
        std::uniform_int_distribution<std::size_t> where(0, cfg.seq_len - cfg.motif_length);
        for (std::size_t k = 0; k < cfg.insertions_per_record; ++k) {
          const auto& motif = motifs[pick(rng)];
          seq.replace(where(rng), motif.size(), motif);
        }
      }
      const auto rate = expected_rates(schema, m, rules[m], seq, cfg);
      float* dst = records.targets.data() + i * tracks * bins;
      for (std::size_t j = 0; j < rate.size(); ++j) {
        if (rate[j] > 0.0) {
          std::poisson_distribution<long> draw(rate[j]);
          dst[j] = static_cast<float>(draw(rng));
        } else {
          dst[j] = 0.0f;
        }
      }
      records.sequences[i] = std::move(seq);
    }
    data.species.push_back(std::move(records));
  }
  return data;
}

namespace {

void write_f32_le(std::ofstream& out, const std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
  } else {
    for (float v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      char bytes[4];
      for (int b = 0; b < 4; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
      out.write(bytes, 4);
    }
  }
}

std::vector<float> read_f32_le(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes(count * 4);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size() || in.peek() != std::char_traits<char>::eof()) {
    throw IoError(path.string() + ": expected exactly " + std::to_string(bytes.size()) + " bytes");
  }
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_dataset(const Dataset& data, const SynthConfig& cfg, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create dataset directory " + dir.string());
  const auto rules = make_motif_rules(data.schema, cfg);

  nlohmann::json manifest;
  manifest["format"] = "space-synthetic-genomics";
  manifest["version"] = 1;
  manifest["seq_len"] = data.seq_len;
  manifest["bin_size"] = data.bin_size;
  manifest["num_bins"] = data.num_bins();
  manifest["seed"] = data.seed;
  manifest["synth"] = cfg.to_json();
  nlohmann::json species = nlohmann::json::array();
  for (std::size_t m = 0; m < data.schema.num_species(); ++m) {
    auto entry = data.schema.to_json()[m];
    entry["records"] = data.species[m].size();
    nlohmann::json rj = nlohmann::json::array();
    for (const auto& r : rules[m]) {
      rj.push_back({{"motif", r.motif},
                    {"amplitude", r.amplitude},
                    {"kernel_width", r.kernel_width},
                    {"shared_across_species", r.shared_across_species},
                    {"tracks", r.tracks}});
    }
    entry["motif_rules"] = rj;
    species.push_back(entry);
  }
  manifest["species"] = species;
  open_out(dir / "manifest.json") << manifest.dump(2) << '\n';

  for (std::size_t m = 0; m < data.schema.num_species(); ++m) {
    const auto& sp = data.schema.species(m);
    const fs::path sub = dir / sp.name;
    fs::create_directories(sub, ec);
    if (ec) throw IoError("cannot create " + sub.string());
    {
      auto out = open_out(sub / "sequences.txt");
      for (const auto& s : data.species[m].sequences) out << s << '\n';
    }
    {
      auto out = open_out(sub / "targets.f32", std::ios::binary);
      write_f32_le(out, data.species[m].targets);
      if (!out) throw IoError("failed writing " + (sub / "targets.f32").string());
    }
    {
      auto out = open_out(sub / "tracks.csv");
      out << "track_id,assay_type\n";
      for (const auto& t : sp.tracks) out << t.id << ',' << to_string(t.assay) << '\n';
    }
  }
}

Dataset generate_dataset(const ProfileSchema& schema, const SynthConfig& cfg, const fs::path& dir) {
  auto data = synthesize_dataset(schema, cfg);
  write_dataset(data, cfg, dir);
  return data;
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest.json: " + std::string(e.what()));
  }
  Dataset data;
  try {
    data.seq_len = manifest.at("seq_len").get<std::size_t>();
    data.bin_size = manifest.at("bin_size").get<std::size_t>();
    data.seed = manifest.at("seed").get<std::uint64_t>();
    data.schema = ProfileSchema::from_json(manifest.at("species"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest.json: " + std::string(e.what()));
  }
  if (data.bin_size == 0 || data.seq_len % data.bin_size != 0) throw DataError("manifest: invalid seq_len/bin_size");
  const std::size_t bins = data.num_bins();
  for (std::size_t m = 0; m < data.schema.num_species(); ++m) {
    const auto& sp = data.schema.species(m);
    const auto n = manifest["species"][m].at("records").get<std::size_t>();
    SpeciesRecords records;
    std::ifstream sf(dir / sp.name / "sequences.txt");
    if (!sf) throw IoError("missing sequences for species '" + sp.name + "'");
    std::string line;
    while (std::getline(sf, line)) {
      if (line.empty()) continue;
      if (line.size() != data.seq_len) {
        throw DataError(sp.name + ": sequence of length " + std::to_string(line.size()) + ", expected " +
                        std::to_string(data.seq_len));
      }
      records.sequences.push_back(line);
    }
    if (records.sequences.size() != n) {
      throw DataError(sp.name + ": manifest lists " + std::to_string(n) + " records, found " +
                      std::to_string(records.sequences.size()));
    }
    records.targets = read_f32_le(dir / sp.name / "targets.f32", n * sp.tracks.size() * bins);
    data.species.push_back(std::move(records));
  }
  return data;
}

template <typename T>
SpeciesBatch<T> make_batch(const Dataset& data, std::size_t species, std::vector<std::size_t> records) {
  if (species >= data.species.size()) throw DataError("make_batch: species index out of range");
  if (records.empty()) throw DataError("make_batch: empty record list");
  const auto& sp = data.species[species];
  const std::size_t tracks = data.schema.num_tracks(species);
  const std::size_t bins = data.num_bins();
  SpeciesBatch<T> batch;
  batch.species = species;
  batch.x = Tensor<T>::zeros({records.size(), 4, data.seq_len});
  batch.targets = Tensor<T>::zeros({records.size(), tracks, bins});
  for (std::size_t b = 0; b < records.size(); ++b) {
    const auto r = records[b];
    if (r >= sp.size()) throw DataError("make_batch: record index out of range");
    one_hot_into(sp.sequences[r], batch.x.data().data() + b * 4 * data.seq_len);
    const float* src = sp.targets.data() + r * tracks * bins;
    std::copy(src, src + tracks * bins, batch.targets.data().data() + b * tracks * bins);
  }
  batch.records = std::move(records);
  return batch;
}

template SpeciesBatch<float> make_batch<float>(const Dataset&, std::size_t, std::vector<std::size_t>);
template SpeciesBatch<double> make_batch<double>(const Dataset&, std::size_t, std::vector<std::size_t>);

BatchStream::BatchStream(const Dataset& data, std::size_t batch_size, BatchMode mode, std::uint64_t seed)
    : data_(&data), batch_size_(batch_size), mode_(mode), seed_(seed) {
  if (batch_size == 0) throw DataError("batch_size must be at least 1");
  if (data.species.empty()) throw DataError("empty dataset");
  for (const auto& sp : data.species) {
    if (sp.size() == 0) throw DataError("empty dataset: a species has no records");
    max_records_ = std::max(max_records_, sp.size());
  }
  const std::size_t m = data.species.size();
  queue_.resize(m);
  position_.assign(m, 0);
  epoch_.assign(m, 0);
}

void BatchStream::refill(std::size_t m) {
  const std::size_t n = data_->species[m].size();
  const std::string tag = (mode_ == BatchMode::Alternating ? "batches/alternating/" : "batches/balanced/") +
                          data_->schema.species(m).name;
  auto rng = make_rng(seed_, tag, epoch_[m]);
  auto& q = queue_[m];
  q.resize(n);
  std::iota(q.begin(), q.end(), std::size_t{0});
  if (mode_ == BatchMode::Balanced && n < max_records_) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = n; i < max_records_; ++i) q.push_back(pick(rng));
  }
  std::shuffle(q.begin(), q.end(), rng);
  position_[m] = 0;
  ++epoch_[m];
}

BatchIndex BatchStream::next_index() {
  const std::size_t m = cursor_ % data_->species.size();
  ++cursor_;
  if (position_[m] >= queue_[m].size()) refill(m);
  const auto& q = queue_[m];
  const std::size_t take = std::min(batch_size_, q.size() - position_[m]);
  BatchIndex idx;
  idx.species = m;
  idx.records.assign(q.begin() + static_cast<std::ptrdiff_t>(position_[m]),
                     q.begin() + static_cast<std::ptrdiff_t>(position_[m] + take));
  position_[m] += take;
  return idx;
}

std::size_t BatchStream::batches_per_epoch() const { return (max_records_ + batch_size_ - 1) / batch_size_; }

}  // namespace space
