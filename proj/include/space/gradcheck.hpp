#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "space/rng.hpp"
#include "space/tensor.hpp"

namespace space {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double step = 1e-5;
  /// Elements probed per input tensor; larger inputs are subsampled.
  std::size_t probes_per_input = 24;
};

struct GradcheckResult {
  std::string op;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
};

using GradFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of sum(w * f(inputs)), with fixed random
/// weights w, against central differences. Error per probe is
/// |analytic - numeric| / max(1, |numeric|).
GradcheckResult gradcheck(const std::string& name, const GradFn& f, std::vector<Tensor<double>> inputs,
                          const GradcheckOptions& opt);

/// Every differentiable op plus the end-to-end model and loss on a tiny
/// configuration.
std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& opt);

}  // namespace space
