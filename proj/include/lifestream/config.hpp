#pragma once

// Training configuration and its JSON form.
//
// The file has five sections, {data, encoder, pairing, metric, train}.
// Unknown keys are rejected. Overrides use dotted paths ("train.epochs=2");
// a bare leaf name is accepted when it is unique across sections
// ("loss=margin").

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lifestream/encoder.hpp"
#include "lifestream/metric.hpp"
#include "lifestream/pairing.hpp"

namespace lifestream {

struct TrainConfig {
  // data
  double validation_fraction = 0.05;
  // encoder
  EncoderConfig encoder;
  // pairing (pairing.k mirrors sub_samples)
  SubSeqConfig pairing;
  // metric
  LossConfig loss;
  NegSamplingConfig negatives;
  // train
  double learning_rate = 0.002;
  int batch_persons = 64;
  int epochs = 100;
  int sub_samples = 5;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 5.0;

  void validate() const;
  SubSeqConfig subseq() const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

TrainConfig load_train_config(const std::filesystem::path& path);

// Applies "key=value" overrides in order. Values are parsed as JSON when
// possible, otherwise taken as strings.
TrainConfig apply_overrides(const TrainConfig& base, const std::vector<std::string>& overrides);

}  // namespace lifestream
