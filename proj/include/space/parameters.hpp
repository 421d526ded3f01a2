#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "space/tensor.hpp"

namespace space {

/// Ordered collection of named trainable tensors. Registration order is the
/// serialization order.
template <typename T>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  /// Registers a zero-filled trainable tensor.
  Tensor<T> add(std::string name, Shape shape);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;
  Tensor<T> find(const std::string& name) const;

  void zero_grad();

  /// FNV-1a over the raw bytes of every parameter, in order.
  std::uint64_t hash() const;

 private:
  std::vector<Entry> entries_;
};

/// U(-bound, bound) fill keyed by (seed, name) so values do not depend on
/// registration order.
template <typename T>
void init_uniform(Tensor<T>& t, double bound, std::uint64_t seed, const std::string& name);

template <typename T>
void init_constant(Tensor<T>& t, T value);

}  // namespace space
