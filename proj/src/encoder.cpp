#include "space/encoder.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "space/data.hpp"
#include "space/ops.hpp"

namespace space {

template <typename T>
RoutingTrace<T>::RoutingTrace(std::size_t layers, std::size_t species, std::size_t experts)
    : species_(species), experts_(experts), joint_(layers, std::vector<Tensor<T>>(species)),
      counts_(layers, std::vector<double>(species, 0.0)) {}

template <typename T>
void RoutingTrace<T>::accumulate(std::size_t layer, std::size_t species, const Tensor<T>& gate_weights) {
  if (layer >= joint_.size() || species >= species_) throw std::out_of_range("RoutingTrace: layer/species out of range");
  if (gate_weights.dim() != 2 || gate_weights.size(1) != experts_) {
    throw ShapeError("RoutingTrace: gate weights must be [tokens, " + std::to_string(experts_) + "], got " +
                     shape_str(gate_weights.shape()));
  }
  auto mass = ops::sum_axis(gate_weights, 0);
  auto& slot = joint_[layer][species];
  slot = slot.defined() ? ops::add(slot, mass) : mass;
  counts_[layer][species] += static_cast<double>(gate_weights.size(0));
}

template <typename T>
void RoutingTrace<T>::merge(const RoutingTrace& other) {
  if (joint_.empty()) {
    *this = other;
    return;
  }
  if (other.layers() != layers() || other.species_ != species_ || other.experts_ != experts_) {
    throw std::invalid_argument("RoutingTrace: merging traces of different layouts");
  }
  for (std::size_t d = 0; d < layers(); ++d) {
    for (std::size_t m = 0; m < species_; ++m) {
      const auto& theirs = other.joint_[d][m];
      if (!theirs.defined()) continue;
      auto& mine = joint_[d][m];
      mine = mine.defined() ? ops::add(mine, theirs) : theirs;
      counts_[d][m] += other.counts_[d][m];
    }
  }
}

template <typename T>
bool RoutingTrace<T>::covers_all_species(std::size_t layer) const {
  for (double c : counts_.at(layer)) {
    if (c <= 0.0) return false;
  }
  return true;
}

template <typename T>
Tensor<T> RoutingTrace<T>::joint_distribution(std::size_t layer) const {
  if (!covers_all_species(layer)) {
    throw std::invalid_argument("joint distribution needs tokens from every species; the trace window covers only part "
                                "of them");
  }
  double total = 0.0;
  std::vector<Tensor<T>> rows;
  for (std::size_t m = 0; m < species_; ++m) {
    total += counts_[layer][m];
    rows.push_back(ops::reshape(joint_[layer][m], {1, experts_}));
  }
  return ops::mul_scalar(ops::concat(rows, 0), static_cast<T>(1.0 / total));
}

template <typename T>
std::vector<std::vector<double>> RoutingTrace<T>::frequencies(std::size_t layer) const {
  std::vector<std::vector<double>> f(species_, std::vector<double>(experts_, 0.0));
  for (std::size_t m = 0; m < species_; ++m) {
    const double count = counts_.at(layer)[m];
    if (count <= 0.0) throw std::invalid_argument("routing frequencies: species has no routed tokens");
    const auto data = joint_[layer][m].data();
    for (std::size_t n = 0; n < experts_; ++n) f[m][n] = static_cast<double>(data[n]) / count;
  }
  return f;
}

template <typename T>
void export_routing_frequencies(const RoutingTrace<T>& trace, const std::vector<std::string>& species_names,
                                const std::filesystem::path& path) {
  if (trace.layers() == 0) throw std::invalid_argument("routing export: empty trace");
  if (species_names.size() != trace.species()) throw std::invalid_argument("routing export: species name count");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "layer,species";
  for (std::size_t n = 0; n < trace.experts(); ++n) out << ",expert_" << n;
  out << '\n' << std::setprecision(9);
  for (std::size_t d = 0; d < trace.layers(); ++d) {
    const auto f = trace.frequencies(d);
    for (std::size_t m = 0; m < trace.species(); ++m) {
      out << d << ',' << species_names[m];
      for (double v : f[m]) out << ',' << v;
      out << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

template <typename T>
AttentionResult<T> attention(const Tensor<T>& x, const AttentionParams<T>& p, std::size_t heads) {
  if (x.dim() != 3) throw ShapeError("attention expects [B, T, d], got " + shape_str(x.shape()));
  const std::size_t batch = x.size(0), tokens = x.size(1), d = x.size(2);
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " does not split into " + std::to_string(heads) +
                     " heads");
  }
  const std::size_t dh = d / heads;
  auto split = [&](const Tensor<T>& t) {
    return ops::permute(ops::reshape(t, {batch, tokens, heads, dh}), {0, 2, 1, 3});
  };
  auto q = split(ops::linear(x, p.wq, p.bq));
  auto k = split(ops::linear(x, p.wk, p.bk));
  auto v = split(ops::linear(x, p.wv, p.bv));
  auto scores = ops::mul_scalar(ops::matmul(q, ops::permute(k, {0, 1, 3, 2})),
                                static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  auto weights = ops::softmax(scores, 3);
  auto context = ops::reshape(ops::permute(ops::matmul(weights, v), {0, 2, 1, 3}), {batch, tokens, d});
  return {ops::linear(context, p.wo, p.bo), weights};
}

template <typename T>
Tensor<T> expert_forward(const Tensor<T>& x, const ExpertParams<T>& p) {
  return ops::linear(ops::gelu(ops::linear(x, p.w1, p.b1)), p.w2, p.b2);
}

template <typename T>
Tensor<T> noisy_topk_gate(const Tensor<T>& logits, const GateOptions& opt) {
  Tensor<T> noisy = logits;
  if (opt.rng && opt.noise > 0.0) {
    std::normal_distribution<double> dist(0.0, opt.noise);
    auto noise = Tensor<T>::zeros(logits.shape());
    for (auto& v : noise.data()) v = static_cast<T>(dist(*opt.rng));
    noisy = ops::add(logits, noise);
  }
  return ops::topk_softmax(noisy, opt.top_k);
}

template <typename T>
Tensor<T> moe_forward(const Tensor<T>& x, const MoEParams<T>& p, std::size_t species, const GateOptions& opt,
                      Tensor<T>* gates) {
  if (species >= p.gate_weight.size()) {
    throw std::out_of_range("moe: species id " + std::to_string(species) + " has no gate");
  }
  const std::size_t tokens = x.size(0);
  const std::size_t n_experts = p.experts.size();
  auto weights = noisy_topk_gate(ops::linear(x, p.gate_weight[species], p.gate_bias[species]), opt);
  if (gates) *gates = weights;
  Tensor<T> out;
  const auto w = weights.data();
  for (std::size_t n = 0; n < n_experts; ++n) {
    std::vector<std::size_t> routed;
    for (std::size_t t = 0; t < tokens; ++t) {
      if (w[t * n_experts + n] != T(0)) routed.push_back(t);
    }
    if (routed.empty()) continue;
    auto inputs = ops::index_select(x, 0, routed);
    auto scale = ops::index_select(ops::index_select(weights, 1, {n}), 0, routed);
    auto mixed = ops::mul(expert_forward(inputs, p.experts[n]), scale);
    auto placed = ops::index_scatter(mixed, 0, routed, tokens);
    out = out.defined() ? ops::add(out, placed) : placed;
  }
  return out;
}

template <typename T>
Encoder<T>::Encoder(const ModelConfig& cfg, std::size_t num_species, ParameterSet<T>& params, std::uint64_t seed)
    : cfg_(cfg), num_species_(num_species) {
  cfg_.validate();
  if (num_species == 0) throw ConfigError("encoder needs at least one species");
  const std::size_t d = cfg.d_hidden;
  const std::size_t n = cfg.experts;
  const double lin = std::sqrt(3.0 / static_cast<double>(d));
  const double lin2 = std::sqrt(3.0 / static_cast<double>(2 * d));
  embedding_ = params.add("encoder.species_embedding", {num_species, d});
  init_uniform(embedding_, 0.5, seed, "encoder.species_embedding");
  position_ = params.add("encoder.position", {cfg.num_bins() + 1, d});
  init_uniform(position_, 0.1, seed, "encoder.position");

  auto weight = [&](const std::string& name, Shape shape, double bound) {
    auto t = params.add(name, std::move(shape));
    init_uniform(t, bound, seed, name);
    return t;
  };
  auto ones = [&](const std::string& name, std::size_t width) {
    auto t = params.add(name, {width});
    init_constant(t, T(1));
    return t;
  };
  for (std::size_t layer = 0; layer < cfg.depth; ++layer) {
    const std::string pre = "encoder.layer" + std::to_string(layer);
    EncoderLayer<T> L;
    L.ln1_gamma = ones(pre + ".ln1.gamma", d);
    L.ln1_beta = params.add(pre + ".ln1.beta", {d});
    L.attn.wq = weight(pre + ".attn.wq", {d, d}, lin);
    L.attn.bq = params.add(pre + ".attn.bq", {d});
    L.attn.wk = weight(pre + ".attn.wk", {d, d}, lin);
    L.attn.bk = params.add(pre + ".attn.bk", {d});
    L.attn.wv = weight(pre + ".attn.wv", {d, d}, lin);
    L.attn.bv = params.add(pre + ".attn.bv", {d});
    L.attn.wo = weight(pre + ".attn.wo", {d, d}, lin);
    L.attn.bo = params.add(pre + ".attn.bo", {d});
    L.ln2_gamma = ones(pre + ".ln2.gamma", d);
    L.ln2_beta = params.add(pre + ".ln2.beta", {d});
    for (std::size_t e = 0; e < n; ++e) {
      const std::string ep = pre + ".moe.expert" + std::to_string(e);
      ExpertParams<T> ex;
      ex.w1 = weight(ep + ".w1", {d, 2 * d}, lin);
      ex.b1 = params.add(ep + ".b1", {2 * d});
      ex.w2 = weight(ep + ".w2", {2 * d, d}, lin2);
      ex.b2 = params.add(ep + ".b2", {d});
      L.moe.experts.push_back(ex);
    }
    for (std::size_t m = 0; m < num_species; ++m) {
      const std::string gp = pre + ".moe.gate" + std::to_string(m);
      L.moe.gate_weight.push_back(weight(gp + ".weight", {d, n}, lin));
      L.moe.gate_bias.push_back(params.add(gp + ".bias", {n}));
    }
    layers_.push_back(std::move(L));
  }
}

template <typename T>
Tensor<T> Encoder<T>::species_embedding(std::size_t species) const {
  if (species >= num_species_) {
    throw std::out_of_range("invalid species id " + std::to_string(species) + " (have " +
                            std::to_string(num_species_) + ")");
  }
  return ops::index_select(embedding_, 0, {species});
}

template <typename T>
EncoderOutput<T> Encoder<T>::forward(const Tensor<T>& h, std::size_t species, bool train, Rng* noise_rng,
                                     RoutingTrace<T>* trace) const {
  if (species >= num_species_) {
    throw std::out_of_range("invalid species id " + std::to_string(species) + " (have " +
                            std::to_string(num_species_) + ")");
  }
  const std::size_t d = cfg_.d_hidden;
  if (h.dim() != 3 || h.size(2) != d || h.size(1) + 1 != position_.size(0)) {
    throw ShapeError("encoder expects [B, " + std::to_string(position_.size(0) - 1) + ", " + std::to_string(d) +
                     "], got " + shape_str(h.shape()));
  }
  const std::size_t batch = h.size(0), bins = h.size(1), tokens = bins + 1;
  auto token = ops::broadcast_to(ops::reshape(species_embedding(species), {1, 1, d}), {batch, 1, d});
  auto x = ops::add(ops::concat<T>({token, h}, 1), position_);

  GateOptions opt{cfg_.top_k, cfg_.gate_noise, train ? noise_rng : nullptr};
  EncoderOutput<T> out;
  for (std::size_t layer = 0; layer < layers_.size(); ++layer) {
    const auto& L = layers_[layer];
    x = ops::add(x, attention(ops::layernorm(x, L.ln1_gamma, L.ln1_beta), L.attn, cfg_.heads).output);
    auto flat = ops::reshape(ops::layernorm(x, L.ln2_gamma, L.ln2_beta), {batch * tokens, d});
    Tensor<T> gates;
    auto mixed = moe_forward(flat, L.moe, species, opt, &gates);
    if (trace) trace->accumulate(layer, species, gates);
    out.gates.push_back(gates);
    x = ops::add(x, ops::reshape(mixed, {batch, tokens, d}));
  }
  out.y = ops::slice(x, 1, 1, tokens);
  return out;
}

#define SPACE_INSTANTIATE_ENCODER(T)                                                                          \
  template class RoutingTrace<T>;                                                                             \
  template class Encoder<T>;                                                                                  \
  template void export_routing_frequencies<T>(const RoutingTrace<T>&, const std::vector<std::string>&,        \
                                              const std::filesystem::path&);                                  \
  template AttentionResult<T> attention<T>(const Tensor<T>&, const AttentionParams<T>&, std::size_t);         \
  template Tensor<T> expert_forward<T>(const Tensor<T>&, const ExpertParams<T>&);                             \
  template Tensor<T> noisy_topk_gate<T>(const Tensor<T>&, const GateOptions&);                                \
  template Tensor<T> moe_forward<T>(const Tensor<T>&, const MoEParams<T>&, std::size_t, const GateOptions&,   \
                                    Tensor<T>*);

SPACE_INSTANTIATE_ENCODER(float)
SPACE_INSTANTIATE_ENCODER(double)

}  // namespace space
