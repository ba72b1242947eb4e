#include "lifestream/encoder.hpp"

#include "json_util.hpp"

namespace lifestream {

int default_embedding_width(std::int64_t cardinality) {
  return static_cast<int>(std::min<std::int64_t>((cardinality + 1) / 2, 16));
}

void EncoderConfig::validate() const {
  if (hidden_size < 1) throw ConfigError("encoder: hidden_size must be >= 1");
  if (max_seq_len < 1) throw ConfigError("encoder: max_seq_len must be >= 1");
  if (!(bn_eps >= 0)) throw ConfigError("encoder: bn_eps must be >= 0");
  if (!(bn_momentum > 0 && bn_momentum <= 1)) throw ConfigError("encoder: bn_momentum must be in (0, 1]");
  for (const auto& [name, width] : embedding_widths) {
    if (width < 1) throw ConfigError("encoder: embedding width of \"" + name + "\" must be >= 1");
  }
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"embedding_widths", embedding_widths},
          {"hidden_size", hidden_size},
          {"bn_eps", bn_eps},
          {"bn_momentum", bn_momentum},
          {"max_seq_len", max_seq_len}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  const std::string section = "encoder";
  detail::reject_unknown_keys(j, {"embedding_widths", "hidden_size", "bn_eps", "bn_momentum", "max_seq_len"}, section);
  EncoderConfig c;
  detail::read_opt(j, "embedding_widths", c.embedding_widths, section);
  detail::read_opt(j, "hidden_size", c.hidden_size, section);
  detail::read_opt(j, "bn_eps", c.bn_eps, section);
  detail::read_opt(j, "bn_momentum", c.bn_momentum, section);
  detail::read_opt(j, "max_seq_len", c.max_seq_len, section);
  c.validate();
  return c;
}

}  // namespace lifestream
