#include "space/model.hpp"

#include "space/objectives.hpp"

namespace space {

template <typename T>
SpaceModel<T>::SpaceModel(const ModelConfig& cfg, const ProfileSchema& schema, std::uint64_t seed)
    : cfg_(cfg),
      schema_(schema),
      stem_(cfg_, params_, seed),
      encoder_(cfg_, schema_.num_species(), params_, seed),
      decoder_(cfg_, schema_, params_, seed) {}

template <typename T>
ModelOutput<T> SpaceModel<T>::forward(const Tensor<T>& x, std::size_t species, bool train, Rng* noise_rng,
                                      RoutingTrace<T>* trace) const {
  auto h = stem_.forward(x);
  auto enc = encoder_.forward(h, species, train, noise_rng, trace);
  auto dec = decoder_.forward(enc.y, encoder_.species_embedding(species), species, train, noise_rng);
  ModelOutput<T> out;
  out.o_base = dec.o_base;
  out.o_final = dec.o_final;
  out.rates = rate_activation(dec.o_final);
  out.encoder_gates = std::move(enc.gates);
  out.decoder_gates = std::move(dec.combined_gates);
  return out;
}

template <typename T>
RoutingTrace<T> SpaceModel<T>::make_trace() const {
  return RoutingTrace<T>(cfg_.depth, schema_.num_species(), cfg_.experts);
}

template class SpaceModel<float>;
template class SpaceModel<double>;

}  // namespace space
