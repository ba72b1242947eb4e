#include "lifestream/config.hpp"

#include <fstream>

#include "json_util.hpp"

namespace lifestream {

void TrainConfig::validate() const {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("data.validation_fraction must be in [0, 1)");
  }
  encoder.validate();
  subseq().validate();
  loss.validate();
  negatives.validate();
  if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be > 0");
  if (batch_persons < 2) throw ConfigError("train.batch_persons must be >= 2");
  if (sub_samples < 2) throw ConfigError("train.sub_samples must be >= 2");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("train.beta1/beta2 must be in [0, 1)");
  if (!(eps > 0)) throw ConfigError("train.eps must be > 0");
  if (!(grad_clip > 0)) throw ConfigError("train.grad_clip must be > 0");
}

SubSeqConfig TrainConfig::subseq() const {
  SubSeqConfig s = pairing;
  s.k = sub_samples;
  return s;
}

nlohmann::json TrainConfig::to_json() const {
  return {
      {"data", {{"validation_fraction", validation_fraction}}},
      {"encoder", encoder.to_json()},
      {"pairing",
       {{"strategy", to_string(pairing.strategy)},
        {"min_len", pairing.min_len},
        {"max_len", pairing.max_len},
        {"sample_fraction", pairing.sample_fraction}}},
      {"metric",
       {{"loss", to_string(loss.loss)},
        {"contrastive_margin", loss.contrastive_margin},
        {"margin_b", loss.margin_b},
        {"margin_m", loss.margin_m},
        {"triplet_alpha", loss.triplet_alpha},
        {"reduction", to_string(loss.reduction)},
        {"negative", to_string(negatives.strategy)},
        {"neg_count", negatives.neg_count}}},
      {"train",
       {{"learning_rate", learning_rate},
        {"batch_persons", batch_persons},
        {"epochs", epochs},
        {"sub_samples", sub_samples},
        {"seed", seed},
        {"beta1", beta1},
        {"beta2", beta2},
        {"eps", eps},
        {"grad_clip", grad_clip}}},
  };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"data", "encoder", "pairing", "metric", "train"}, "config");
  TrainConfig c;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::reject_unknown_keys(d, {"validation_fraction"}, "data");
    detail::read_opt(d, "validation_fraction", c.validation_fraction, "data");
  }
  if (j.contains("encoder")) c.encoder = EncoderConfig::from_json(j.at("encoder"));
  if (j.contains("pairing")) {
    const auto& p = j.at("pairing");
    detail::reject_unknown_keys(p, {"strategy", "min_len", "max_len", "sample_fraction"}, "pairing");
    std::string strategy = to_string(c.pairing.strategy);
    detail::read_opt(p, "strategy", strategy, "pairing");
    c.pairing.strategy = parse_subseq_strategy(strategy);
    detail::read_opt(p, "min_len", c.pairing.min_len, "pairing");
    detail::read_opt(p, "max_len", c.pairing.max_len, "pairing");
    detail::read_opt(p, "sample_fraction", c.pairing.sample_fraction, "pairing");
  }
  if (j.contains("metric")) {
    const auto& m = j.at("metric");
    detail::reject_unknown_keys(m,
                                {"loss", "contrastive_margin", "margin_b", "margin_m", "triplet_alpha", "reduction",
                                 "negative", "neg_count"},
                                "metric");
    std::string loss = to_string(c.loss.loss), reduction = to_string(c.loss.reduction),
                negative = to_string(c.negatives.strategy);
    detail::read_opt(m, "loss", loss, "metric");
    detail::read_opt(m, "reduction", reduction, "metric");
    detail::read_opt(m, "negative", negative, "metric");
    c.loss.loss = parse_loss_kind(loss);
    c.loss.reduction = parse_reduction(reduction);
    c.negatives.strategy = parse_negative_strategy(negative);
    detail::read_opt(m, "contrastive_margin", c.loss.contrastive_margin, "metric");
    detail::read_opt(m, "margin_b", c.loss.margin_b, "metric");
    detail::read_opt(m, "margin_m", c.loss.margin_m, "metric");
    detail::read_opt(m, "triplet_alpha", c.loss.triplet_alpha, "metric");
    detail::read_opt(m, "neg_count", c.negatives.neg_count, "metric");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown_keys(t,
                                {"learning_rate", "batch_persons", "epochs", "sub_samples", "seed", "beta1", "beta2",
                                 "eps", "grad_clip"},
                                "train");
    detail::read_opt(t, "learning_rate", c.learning_rate, "train");
    detail::read_opt(t, "batch_persons", c.batch_persons, "train");
    detail::read_opt(t, "epochs", c.epochs, "train");
    detail::read_opt(t, "sub_samples", c.sub_samples, "train");
    detail::read_opt(t, "seed", c.seed, "train");
    detail::read_opt(t, "beta1", c.beta1, "train");
    detail::read_opt(t, "beta2", c.beta2, "train");
    detail::read_opt(t, "eps", c.eps, "train");
    detail::read_opt(t, "grad_clip", c.grad_clip, "train");
  }
  c.pairing.k = c.sub_samples;
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return TrainConfig::from_json(j);
}

TrainConfig apply_overrides(const TrainConfig& base, const std::vector<std::string>& overrides) {
  nlohmann::json j = base.to_json();
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override \"" + ov + "\" is not key=value");
    const std::string key = ov.substr(0, eq);
    const std::string text = ov.substr(eq + 1);

    std::string section, leaf;
    if (const auto dot = key.find('.'); dot != std::string::npos) {
      section = key.substr(0, dot);
      leaf = key.substr(dot + 1);
      if (!j.contains(section) || !j[section].contains(leaf)) throw ConfigError("unknown config key \"" + key + "\"");
    } else {
      for (const auto& [name, body] : j.items()) {
        if (body.contains(key)) {
          if (!section.empty()) throw ConfigError("override key \"" + key + "\" is ambiguous; use section." + key);
          section = name;
        }
      }
      if (section.empty()) throw ConfigError("unknown config key \"" + key + "\"");
      leaf = key;
    }
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    j[section][leaf] = value;
  }
  return TrainConfig::from_json(j);
}

}  // namespace lifestream
