#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "space/tensor.hpp"

namespace space {

inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'C', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public CheckpointError {
 public:
  BadMagicError() : CheckpointError("checkpoint: bad magic") {}
};
class VersionMismatchError : public CheckpointError {
 public:
  VersionMismatchError(std::uint32_t got)
      : CheckpointError("checkpoint: version mismatch (file " + std::to_string(got) + ", expected " +
                        std::to_string(kCheckpointVersion) + ")") {}
};
class ShapeMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedError : public CheckpointError {
 public:
  TruncatedError() : CheckpointError("checkpoint: truncated file") {}
};

/// One named tensor; values are widened to double in memory and written
/// with their original dtype.
struct Blob {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json config;  // run config: model, schema, train
  std::uint64_t step = 0;
  std::uint64_t batches_consumed = 0;
  std::string rng_state;
  std::vector<Blob> params;
  std::vector<Blob> adam_m;
  std::vector<Blob> adam_v;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
/// Throws BadMagicError, VersionMismatchError or TruncatedError.
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes through a temporary file and renames, so a failed save leaves
/// any previous checkpoint intact.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace space
