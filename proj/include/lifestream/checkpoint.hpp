#pragma once

// Checkpoint: configuration, schema and vocabulary, encoder weights,
// optimizer moments, epoch counter and RNG state, stored in the tensor
// container. Weights are float32 so a reload reproduces infer-mode outputs
// bit for bit.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "lifestream/config.hpp"
#include "lifestream/encoder.hpp"
#include "lifestream/ingest.hpp"
#include "lifestream/optimizer.hpp"
#include "lifestream/tensor_io.hpp"

namespace lifestream {

// Classification head used by fine-tuning: logits = h_T W + b.
struct HeadParams {
  nd::Array<float> W;  // [d x n_classes]
  nd::Array<float> b;  // [1 x n_classes]
  int n_classes() const { return static_cast<int>(W.cols()); }
};

struct Checkpoint {
  TrainConfig config;
  Schema schema;
  Vocabulary vocabulary;
  EncoderParams<float> encoder;
  AdamState<float> optimizer;
  std::int64_t epoch = 0;
  std::string rng_state;
  std::optional<HeadParams> head;

  std::string digest() const { return vocabulary_digest(schema, vocabulary); }
};

TensorFile to_tensor_file(const Checkpoint& ckpt);
Checkpoint from_tensor_file(const TensorFile& file);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lifestream
