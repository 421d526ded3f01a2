#include "space/decoder.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "space/data.hpp"
#include "space/ops.hpp"

namespace space {

template <typename T>
Tensor<T> decoder_expert_forward(const Tensor<T>& block, const DecoderExpertParams<T>& p) {
  if (block.dim() != 3) throw ShapeError("decoder expert expects [B, d_q, L], got " + shape_str(block.shape()));
  const std::size_t batch = block.size(0), tracks = block.size(1), length = block.size(2);
  const std::size_t pad = (p.w1.size(2) - 1) / 2;
  auto rows = ops::reshape(block, {batch * tracks, 1, length});
  auto hidden = ops::gelu(ops::conv1d(rows, p.w1, p.b1, 1, pad));
  auto out = ops::conv1d(hidden, p.w2, p.b2, 1, 0);
  return ops::reshape(out, {batch, tracks, length});
}

template <typename T>
std::vector<Tensor<T>> categorize(const Tensor<T>& o_base, const ProfileSchema& schema, std::size_t species) {
  if (o_base.dim() != 3 || o_base.size(1) != schema.num_tracks(species)) {
    throw ShapeError("categorize: expected [B, " + std::to_string(schema.num_tracks(species)) + ", L], got " +
                     shape_str(o_base.shape()));
  }
  auto ordered = ops::index_select(o_base, 1, schema.categorize_order(species));
  const auto& counts = schema.type_counts(species);
  std::vector<Tensor<T>> blocks(counts.size());
  std::size_t offset = 0;
  for (std::size_t q = 0; q < counts.size(); ++q) {
    if (counts[q] == 0) continue;
    blocks[q] = counts.size() == 1 ? ordered : ops::slice(ordered, 1, offset, offset + counts[q]);
    offset += counts[q];
  }
  return blocks;
}

template <typename T>
Tensor<T> recompose(const std::vector<Tensor<T>>& blocks, const ProfileSchema& schema, std::size_t species) {
  std::vector<Tensor<T>> present;
  const auto& counts = schema.type_counts(species);
  if (blocks.size() != counts.size()) throw ShapeError("recompose: one block per profile type expected");
  for (std::size_t q = 0; q < blocks.size(); ++q) {
    if (counts[q] == 0) continue;
    if (!blocks[q].defined() || blocks[q].size(1) != counts[q]) {
      throw ShapeError("recompose: block " + std::to_string(q) + " does not hold " + std::to_string(counts[q]) +
                       " tracks");
    }
    present.push_back(blocks[q]);
  }
  auto ordered = present.size() == 1 ? present.front() : ops::concat(present, 1);
  return ops::index_select(ordered, 1, schema.recompose_order(species));
}

template <typename T>
Decoder<T>::Decoder(const ModelConfig& cfg, const ProfileSchema& schema, ParameterSet<T>& params, std::uint64_t seed)
    : cfg_(cfg), schema_(schema) {
  cfg_.validate();
  const std::size_t d = cfg.d_hidden, bins = cfg.num_bins(), K = cfg.decoder_experts, R = cfg.groups;
  auto weight = [&](const std::string& name, Shape shape, double bound) {
    auto t = params.add(name, std::move(shape));
    init_uniform(t, bound, seed, name);
    return t;
  };
  const double lin = std::sqrt(3.0 / static_cast<double>(d));
  for (std::size_t m = 0; m < schema.num_species(); ++m) {
    const std::string pre = "decoder.head." + schema.species(m).name;
    head_w_.push_back(weight(pre + ".weight", {d, schema.num_tracks(m)}, 0.1 * lin));
    head_b_.push_back(params.add(pre + ".bias", {schema.num_tracks(m)}));
  }
  for (std::size_t k = 0; k < K; ++k) {
    const std::string pre = "decoder.expert" + std::to_string(k);
    DecoderExpertParams<T> e;
    e.w1 = weight(pre + ".w1", {cfg.expert_hidden, 1, cfg.expert_kernel},
                  std::sqrt(3.0 / static_cast<double>(cfg.expert_kernel)));
    e.b1 = weight(pre + ".b1", {cfg.expert_hidden}, 0.1);
    e.w2 = params.add(pre + ".w2", {1, cfg.expert_hidden, 1});
    e.b2 = params.add(pre + ".b2", {1});
    experts_.push_back(e);
  }
  for (AssayType type : schema.profile_types()) {
    const std::string pre = "decoder.gate." + std::string(to_string(type));
    ProfileGateParams<T> g;
    g.species_w = weight(pre + ".species.weight", {d, R}, lin);
    g.species_b = params.add(pre + ".species.bias", {R});
    g.sequence_w = weight(pre + ".sequence.weight", {d, R}, lin);
    g.sequence_b = params.add(pre + ".sequence.bias", {R});
    for (std::size_t r = 0; r < R; ++r) {
      const std::string sp = pre + ".selector" + std::to_string(r);
      g.selector_w.push_back(weight(sp + ".weight", {bins, K}, std::sqrt(3.0 / static_cast<double>(bins))));
      g.selector_b.push_back(params.add(sp + ".bias", {K}));
    }
    gates_.push_back(std::move(g));
  }
}

template <typename T>
Tensor<T> Decoder<T>::base_head(const Tensor<T>& y, std::size_t species) const {
  if (species >= head_w_.size()) throw std::out_of_range("decoder: unknown species " + std::to_string(species));
  return ops::permute(ops::linear(y, head_w_[species], head_b_[species]), {0, 2, 1});
}

template <typename T>
Tensor<T> Decoder<T>::group_gate(const Tensor<T>& embedding, const Tensor<T>& pooled, std::size_t type) const {
  const auto& g = gates_.at(type);
  auto logits = ops::add(ops::linear(pooled, g.sequence_w, g.sequence_b),
                         ops::linear(embedding, g.species_w, g.species_b));
  return ops::softmax(logits, logits.dim() - 1);
}

template <typename T>
Tensor<T> Decoder<T>::expert_gate(const Tensor<T>& block, std::size_t type, std::size_t group,
                                  const GateOptions& opt) const {
  const auto& g = gates_.at(type);
  auto features = ops::mean_pool(block, 1);  // [B, L]
  return noisy_topk_gate(ops::linear(features, g.selector_w.at(group), g.selector_b.at(group)), opt);
}

template <typename T>
Tensor<T> Decoder<T>::enhance(const Tensor<T>& block, const Tensor<T>& group_weights,
                              const std::vector<Tensor<T>>& expert_weights, Tensor<T>* combined) const {
  const std::size_t batch = block.size(0);
  const std::size_t K = experts_.size();
  if (group_weights.dim() != 2 || group_weights.size(0) != batch || group_weights.size(1) != expert_weights.size()) {
    throw ShapeError("enhance: group weights " + shape_str(group_weights.shape()) + " do not match " +
                     std::to_string(expert_weights.size()) + " groups");
  }
  Tensor<T> mix;
  for (std::size_t r = 0; r < expert_weights.size(); ++r) {
    if (expert_weights[r].shape() != Shape{batch, K}) {
      throw ShapeError("enhance: expert weights must be [B, K], got " + shape_str(expert_weights[r].shape()));
    }
    auto term = ops::mul(ops::index_select(group_weights, 1, {r}), expert_weights[r]);
    mix = mix.defined() ? ops::add(mix, term) : term;
  }
  if (combined) *combined = mix;
  Tensor<T> out;
  const auto w = mix.data();
  for (std::size_t k = 0; k < K; ++k) {
    bool used = false;
    for (std::size_t b = 0; b < batch && !used; ++b) used = w[b * K + k] != T(0);
    if (!used) continue;
    auto scale = ops::reshape(ops::index_select(mix, 1, {k}), {batch, 1, 1});
    auto term = ops::mul(decoder_expert_forward(block, experts_[k]), scale);
    out = out.defined() ? ops::add(out, term) : term;
  }
  return out.defined() ? out : Tensor<T>::zeros(block.shape());
}

template <typename T>
DecoderOutput<T> Decoder<T>::forward(const Tensor<T>& y, const Tensor<T>& embedding, std::size_t species, bool train,
                                     Rng* noise_rng) const {
  if (y.dim() != 3 || y.size(2) != cfg_.d_hidden) {
    throw ShapeError("decoder expects [B, L, d], got " + shape_str(y.shape()));
  }
  DecoderOutput<T> out;
  out.o_base = base_head(y, species);
  auto blocks = categorize(out.o_base, schema_, species);
  auto pooled = ops::mean_pool(y, 1);
  GateOptions opt{cfg_.decoder_top_k, cfg_.gate_noise, train ? noise_rng : nullptr};
  std::vector<Tensor<T>> enhanced(blocks.size());
  out.combined_gates.resize(blocks.size());
  for (std::size_t q = 0; q < blocks.size(); ++q) {
    if (!blocks[q].defined()) continue;
    auto group = group_gate(embedding, pooled, q);
    std::vector<Tensor<T>> expert_weights;
    for (std::size_t r = 0; r < cfg_.groups; ++r) expert_weights.push_back(expert_gate(blocks[q], q, r, opt));
    enhanced[q] = enhance(blocks[q], group, expert_weights, &out.combined_gates[q]);
  }
  out.o_final = ops::add(out.o_base, recompose(enhanced, schema_, species));
  return out;
}

ProfileRoutingTally::ProfileRoutingTally(std::size_t types, std::size_t experts)
    : sums_(types, std::vector<double>(experts, 0.0)), counts_(types, 0.0) {}

template <typename T>
void ProfileRoutingTally::add(const std::vector<Tensor<T>>& combined_gates) {
  if (combined_gates.size() != sums_.size()) throw std::invalid_argument("profile tally: type count mismatch");
  for (std::size_t q = 0; q < combined_gates.size(); ++q) {
    const auto& g = combined_gates[q];
    if (!g.defined()) continue;
    const std::size_t K = sums_[q].size();
    if (g.dim() != 2 || g.size(1) != K) throw ShapeError("profile tally: expected [B, K] gates");
    const auto data = g.data();
    for (std::size_t b = 0; b < g.size(0); ++b) {
      for (std::size_t k = 0; k < K; ++k) sums_[q][k] += static_cast<double>(data[b * K + k]);
    }
    counts_[q] += static_cast<double>(g.size(0));
  }
}

std::vector<std::vector<double>> ProfileRoutingTally::frequencies() const {
  auto f = sums_;
  for (auto& row : f) {
    double total = 0.0;
    for (double v : row) total += v;
    if (total > 0.0) {
      for (double& v : row) v /= total;
    }
  }
  return f;
}

void export_profile_routing(const ProfileRoutingTally& tally, const ProfileSchema& schema,
                            const std::filesystem::path& path) {
  const auto f = tally.frequencies();
  if (f.size() != schema.num_profile_types()) throw std::invalid_argument("profile export: type count mismatch");
  bool any = false;
  for (std::size_t q = 0; q < f.size(); ++q) any = any || tally.samples(q) > 0.0;
  if (!any) throw std::invalid_argument("profile export: empty evaluation pass");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "profile_type";
  for (std::size_t k = 0; k < (f.empty() ? 0 : f[0].size()); ++k) out << ",expert_" << k;
  out << '\n' << std::setprecision(9);
  for (std::size_t q = 0; q < f.size(); ++q) {
    out << to_string(schema.profile_types()[q]);
    for (double v : f[q]) out << ',' << v;
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

#define SPACE_INSTANTIATE_DECODER(T)                                                                        \
  template class Decoder<T>;                                                                                \
  template Tensor<T> decoder_expert_forward<T>(const Tensor<T>&, const DecoderExpertParams<T>&);            \
  template std::vector<Tensor<T>> categorize<T>(const Tensor<T>&, const ProfileSchema&, std::size_t);       \
  template Tensor<T> recompose<T>(const std::vector<Tensor<T>>&, const ProfileSchema&, std::size_t);        \
  template void ProfileRoutingTally::add<T>(const std::vector<Tensor<T>>&);

SPACE_INSTANTIATE_DECODER(float)
SPACE_INSTANTIATE_DECODER(double)

}  // namespace space
