#include "space/model_config.hpp"

#include <bit>
#include <string>

namespace space {

std::size_t ModelConfig::conv_blocks() const {
  return static_cast<std::size_t>(std::countr_zero(bin_size));
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
  if (bin_size < 2 || !std::has_single_bit(bin_size)) fail("bin_size", "must be a power of two >= 2");
  if (seq_len == 0 || seq_len % bin_size != 0) fail("seq_len", "must be a positive multiple of bin_size");
  if (d_hidden == 0) fail("d_hidden", "must be positive");
  if (stem_kernel % 2 == 0) fail("stem_kernel", "must be odd");
  if (stem_channels == 0) fail("stem_channels", "must be positive");
  if (depth == 0) fail("depth", "must be positive");
  if (heads == 0 || d_hidden % heads != 0) fail("heads", "must divide d_hidden");
  if (experts == 0) fail("experts", "must be positive");
  if (top_k < 1 || top_k > experts) fail("top_k", "must lie in [1, experts]");
  if (gate_noise < 0.0) fail("gate_noise", "must be nonnegative");
  if (decoder_experts == 0) fail("decoder_experts", "must be positive");
  if (groups == 0) fail("groups", "must be positive");
  if (decoder_top_k < 1 || decoder_top_k > decoder_experts) fail("decoder_top_k", "must lie in [1, decoder_experts]");
  if (expert_kernel % 2 == 0) fail("expert_kernel", "must be odd");
  if (expert_hidden == 0) fail("expert_hidden", "must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"seq_len", seq_len},
          {"bin_size", bin_size},
          {"d_hidden", d_hidden},
          {"stem_kernel", stem_kernel},
          {"stem_channels", stem_channels},
          {"depth", depth},
          {"heads", heads},
          {"experts", experts},
          {"top_k", top_k},
          {"gate_noise", gate_noise},
          {"decoder_experts", decoder_experts},
          {"groups", groups},
          {"decoder_top_k", decoder_top_k},
          {"expert_kernel", expert_kernel},
          {"expert_hidden", expert_hidden}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.seq_len = j.at("seq_len").get<std::size_t>();
    c.bin_size = j.at("bin_size").get<std::size_t>();
    c.d_hidden = j.at("d_hidden").get<std::size_t>();
    c.stem_kernel = j.at("stem_kernel").get<std::size_t>();
    c.stem_channels = j.at("stem_channels").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.experts = j.at("experts").get<std::size_t>();
    c.top_k = j.at("top_k").get<std::size_t>();
    c.gate_noise = j.at("gate_noise").get<double>();
    c.decoder_experts = j.at("decoder_experts").get<std::size_t>();
    c.groups = j.at("groups").get<std::size_t>();
    c.decoder_top_k = j.at("decoder_top_k").get<std::size_t>();
    c.expert_kernel = j.at("expert_kernel").get<std::size_t>();
    c.expert_hidden = j.at("expert_hidden").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace space
