#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "space/model_config.hpp"
#include "space/rng.hpp"
#include "space/schema.hpp"
#include "space/tensor.hpp"

namespace testutil {

using space::Tensor;

inline Tensor<double> random_tensor(space::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                                    bool requires_grad = false) {
  auto rng = space::make_rng(seed, "test/random_tensor");
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(space::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor<double>::from_data(std::move(shape), std::move(v), requires_grad);
}

/// Central-difference gradient of a scalar function with respect to every
/// element of `x`.
inline std::vector<double> numeric_grad(const std::function<double()>& f, Tensor<double>& x, double h = 1e-6) {
  space::NoGradGuard guard;
  std::vector<double> g(x.numel());
  auto d = x.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double saved = d[i];
    d[i] = saved + h;
    const double up = f();
    d[i] = saved - h;
    const double down = f();
    d[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// Small model used by fast tests: seq_len 256, bin 32 (L = 8), d = 16.
inline space::ModelConfig tiny_model() {
  space::ModelConfig c;
  c.seq_len = 256;
  c.bin_size = 32;
  c.d_hidden = 16;
  c.stem_channels = 8;
  c.depth = 2;
  c.heads = 2;
  c.experts = 4;
  c.top_k = 3;
  c.decoder_experts = 4;
  c.groups = 2;
  c.decoder_top_k = 3;
  c.expert_kernel = 3;
  c.expert_hidden = 4;
  return c;
}

inline space::ProfileSchema two_species_schema() {
  using space::AssayType;
  return space::make_schema({{"human", {{AssayType::DnaseAtac, 2}, {AssayType::TfChip, 1}, {AssayType::Cage, 1}}},
                             {"mouse", {{AssayType::DnaseAtac, 1}, {AssayType::HistoneChip, 2}, {AssayType::Cage, 1}}}});
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("space_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testutil
