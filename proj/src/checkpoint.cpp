#include "space/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "space/data.hpp"

namespace space {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(U));
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void put_blob(const Blob& b) {
    put_string(b.name);
    put<std::uint8_t>(b.dtype == DType::f64 ? 1 : 0);
    put<std::uint32_t>(static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) put<std::uint64_t>(d);
    for (double v : b.values) {
      if (b.dtype == DType::f64) {
        put<double>(v);
      } else {
        put<float>(static_cast<float>(v));
      }
    }
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw TruncatedError();
  }
  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, in_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Blob get_blob() {
    Blob b;
    b.name = get_string();
    const auto tag = get<std::uint8_t>();
    if (tag > 1) throw CheckpointError("checkpoint: unknown dtype tag in " + b.name);
    b.dtype = tag == 1 ? DType::f64 : DType::f32;
    const auto rank = get<std::uint32_t>();
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      b.shape.push_back(get<std::uint64_t>());
      n *= b.shape.back();
    }
    need(n * (b.dtype == DType::f64 ? 8 : 4));
    b.values.resize(n);
    for (auto& v : b.values) v = b.dtype == DType::f64 ? get<double>() : static_cast<double>(get<float>());
    return b;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  for (char c : kCheckpointMagic) w.put<char>(c);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put_string(ckpt.config.dump());
  w.put<std::uint64_t>(ckpt.step);
  w.put<std::uint64_t>(ckpt.batches_consumed);
  w.put_string(ckpt.rng_state);
  for (const auto* group : {&ckpt.params, &ckpt.adam_m, &ckpt.adam_v}) {
    w.put<std::uint64_t>(group->size());
    for (const auto& b : *group) w.put_blob(b);
  }
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(4);
  for (char c : kCheckpointMagic) {
    if (r.get<char>() != c) throw BadMagicError();
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw VersionMismatchError(version);
  Checkpoint ckpt;
  const auto config = r.get_string();
  try {
    ckpt.config = nlohmann::json::parse(config);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: unreadable config: ") + e.what());
  }
  ckpt.step = r.get<std::uint64_t>();
  ckpt.batches_consumed = r.get<std::uint64_t>();
  ckpt.rng_state = r.get_string();
  for (auto* group : {&ckpt.params, &ckpt.adam_m, &ckpt.adam_v}) {
    const auto n = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) group->push_back(r.get_blob());
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace space
