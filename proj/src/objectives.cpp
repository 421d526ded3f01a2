#include "space/objectives.hpp"

#include <cmath>
#include <string>
#include <type_traits>

#include "space/ops.hpp"

namespace space {

template <typename T>
Tensor<T> rate_activation(const Tensor<T>& o) {
  return ops::add_scalar(ops::softplus(o), static_cast<T>(kRateEpsilon));
}

template <typename T>
Tensor<T> poisson_nll(const Tensor<T>& p, const Tensor<T>& t) {
  if (p.shape() != t.shape()) {
    throw ShapeError("poisson_nll: prediction " + shape_str(p.shape()) + " vs target " + shape_str(t.shape()));
  }
  const auto pd = p.data();
  const auto td = t.data();
  Tensor<T> mask = Tensor<T>::zeros(t.shape());
  auto md = mask.data();
  for (std::size_t i = 0; i < td.size(); ++i) {
    if (!(td[i] >= T(0))) throw DomainError("poisson_nll: negative or NaN target at " + std::to_string(i));
    if (td[i] > T(0)) {
      if (!(pd[i] > T(0))) throw DomainError("poisson_nll: nonpositive rate at " + std::to_string(i));
      md[i] = T(1);
    }
  }
  // Where t == 0 the log argument is replaced by 1, so the term vanishes
  // together with its gradient.
  auto safe = ops::add(ops::mul(p, mask), ops::add_scalar(ops::neg(mask), T(1)));
  return ops::mean(ops::sub(p, ops::mul(t, ops::log(safe))));
}

template <typename T>
void validate_joint_distribution(const Tensor<T>& P) {
  if (P.dim() != 2) throw ShapeError("joint distribution must be [M, N], got " + shape_str(P.shape()));
  // Float sums of normalized counts carry rounding well above 1e-9.
  const double tol = std::is_same_v<T, float> ? 1e-5 : 1e-9;
  double total = 0.0;
  for (T v : P.data()) {
    if (!(v >= T(0))) throw DomainError("joint distribution has a negative or NaN mass");
    total += static_cast<double>(v);
  }
  if (std::abs(total - 1.0) > tol) throw DomainError("joint distribution sums to " + std::to_string(total));
}

template <typename T>
Tensor<T> mutual_information(const Tensor<T>& P) {
  validate_joint_distribution(P);
  auto h_joint = ops::sum(ops::xlogx(P));                   // -H(S,E)
  auto h_species = ops::sum(ops::xlogx(ops::sum_axis(P, 1)));  // -H(S)
  auto h_experts = ops::sum(ops::xlogx(ops::sum_axis(P, 0)));  // -H(E)
  return ops::sub(h_joint, ops::add(h_species, h_experts));
}

template <typename T>
LossReport<T> total_loss(const Tensor<T>& poisson, const RoutingTrace<T>& trace, double alpha) {
  LossReport<T> r;
  r.alpha = alpha;
  r.poisson = static_cast<double>(poisson.item());
  Tensor<T> mi_sum;
  for (std::size_t d = 0; d < trace.layers(); ++d) {
    auto mi = mutual_information(trace.joint_distribution(d));
    r.mi_per_layer.push_back(static_cast<double>(mi.item()));
    mi_sum = mi_sum.defined() ? ops::add(mi_sum, mi) : mi;
  }
  double mi_total = 0.0;
  for (double v : r.mi_per_layer) mi_total += v;
  r.total = r.poisson - alpha * mi_total;
  r.objective = (mi_sum.defined() && alpha != 0.0) ? ops::sub(poisson, ops::mul_scalar(mi_sum, static_cast<T>(alpha)))
                                                   : poisson;
  return r;
}

template <typename T>
LossReport<T> total_loss(const Tensor<T>& p, const Tensor<T>& t, const RoutingTrace<T>& trace, double alpha) {
  return total_loss(poisson_nll(p, t), trace, alpha);
}

#define SPACE_INSTANTIATE_OBJECTIVES(T)                                                              \
  template Tensor<T> rate_activation<T>(const Tensor<T>&);                                          \
  template Tensor<T> poisson_nll<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template void validate_joint_distribution<T>(const Tensor<T>&);                                   \
  template Tensor<T> mutual_information<T>(const Tensor<T>&);                                       \
  template LossReport<T> total_loss<T>(const Tensor<T>&, const RoutingTrace<T>&, double);           \
  template LossReport<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, const RoutingTrace<T>&, double);

SPACE_INSTANTIATE_OBJECTIVES(float)
SPACE_INSTANTIATE_OBJECTIVES(double)

}  // namespace space
