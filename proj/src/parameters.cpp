#include "space/parameters.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include "space/rng.hpp"

namespace space {

template <typename T>
Tensor<T> ParameterSet<T>::add(std::string name, Shape shape) {
  for (const auto& [existing, _] : entries_) {
    if (existing == name) throw std::logic_error("duplicate parameter name " + name);
  }
  auto t = Tensor<T>::zeros(std::move(shape), true);
  entries_.emplace_back(std::move(name), t);
  return t;
}

template <typename T>
std::size_t ParameterSet<T>::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

template <typename T>
Tensor<T> ParameterSet<T>::find(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named " + name);
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& [_, t] : entries_) {
    Tensor<T> handle = t;
    handle.ensure_grad();
    handle.zero_grad();
  }
}

template <typename T>
std::uint64_t ParameterSet<T>::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [_, t] : entries_) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data().data());
    for (std::size_t i = 0; i < t.numel() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

template <typename T>
void init_uniform(Tensor<T>& t, double bound, std::uint64_t seed, const std::string& name) {
  auto rng = make_rng(seed, "init/" + name);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void init_constant(Tensor<T>& t, T value) {
  std::fill(t.data().begin(), t.data().end(), value);
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template void init_uniform<float>(Tensor<float>&, double, std::uint64_t, const std::string&);
template void init_uniform<double>(Tensor<double>&, double, std::uint64_t, const std::string&);
template void init_constant<float>(Tensor<float>&, float);
template void init_constant<double>(Tensor<double>&, double);

}  // namespace space
