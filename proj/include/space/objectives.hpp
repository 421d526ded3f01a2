#pragma once

#include <vector>

#include "space/encoder.hpp"
#include "space/tensor.hpp"

namespace space {

inline constexpr double kRateEpsilon = 1e-6;

/// p = softplus(o) + 1e-6.
template <typename T>
Tensor<T> rate_activation(const Tensor<T>& o);

/// mean(p - t ln p) with 0 ln p := 0 where t == 0.
/// Throws DomainError if t < 0, or p <= 0 where t > 0.
template <typename T>
Tensor<T> poisson_nll(const Tensor<T>& p, const Tensor<T>& t);

/// Throws DomainError unless P is [M, N], nonnegative, and sums to one.
template <typename T>
void validate_joint_distribution(const Tensor<T>& P);

/// H(S) + H(E) - H(S,E) of a joint distribution P[M, N], natural log.
template <typename T>
Tensor<T> mutual_information(const Tensor<T>& P);

template <typename T>
struct LossReport {
  double poisson = 0.0;
  std::vector<double> mi_per_layer;
  double total = 0.0;  // poisson - alpha * sum(mi_per_layer)
  double alpha = 0.0;
  Tensor<T> objective;  // differentiable total
};

/// Combines an already averaged Poisson term with the MI of every trace
/// layer. The trace must cover every species.
template <typename T>
LossReport<T> total_loss(const Tensor<T>& poisson, const RoutingTrace<T>& trace, double alpha);

template <typename T>
LossReport<T> total_loss(const Tensor<T>& p, const Tensor<T>& t, const RoutingTrace<T>& trace, double alpha);

}  // namespace space
