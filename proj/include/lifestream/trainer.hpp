#pragma once

// Metric-learning training loop and supervised fine-tuning.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lifestream/checkpoint.hpp"
#include "lifestream/config.hpp"
#include "lifestream/encoder.hpp"
#include "lifestream/metric.hpp"
#include "lifestream/pairing.hpp"

namespace lifestream {

template <typename S>
struct BatchLoss {
  nd::Var<S> loss;
  nd::Var<S> embeddings;  // unit-norm rows, one per sample
  nd::Var<S> distances;
  PairSelection selection;
};

// Forward pass of one training batch: encode all N*K samples, normalize,
// build the distance matrix, mine negatives (unless `fixed` is given) and
// evaluate the configured loss.
template <typename S>
BatchLoss<S> batch_loss(nd::Graph<S>& g, const EncoderVars<S>& vars, std::span<nd::BatchNormState<S>> norms,
                        const TrainConfig& cfg, const TrainingBatch& batch, nd::Mode mode, Rng& rng,
                        const PairSelection* fixed = nullptr) {
  std::vector<const EventSequence*> seqs;
  seqs.reserve(batch.samples.size());
  for (const auto& s : batch.samples) seqs.push_back(&s);
  nd::Var<S> h = encode_batch(g, vars, norms, cfg.encoder, std::span<const EventSequence* const>(seqs), mode,
                              cfg.encoder.max_seq_len);
  BatchLoss<S> out;
  out.embeddings = nd::l2_normalize(h);
  out.distances = distance_matrix(out.embeddings);
  if (fixed != nullptr) {
    out.selection = *fixed;
  } else {
    out.selection = select_negatives(out.distances.value(), label_pairs(std::span<const int>(batch.labels)),
                                     cfg.negatives, rng, vars.U_z.rows());
  }
  out.loss = metric_loss(out.distances, out.selection, cfg.loss);
  return out;
}

// Owns the encoder parameters, optimizer state and sampling RNG of one
// training run.
class MetricTrainer {
 public:
  struct StepStats {
    double loss = 0;
    double grad_norm = 0;  // before clipping
  };

  MetricTrainer(const TrainConfig& config, const Vocabulary& vocab);

  // Forward, backward, clip, Adam update. The loss is the pre-update value.
  // NumericError on a non-finite loss or gradient.
  StepStats step(const TrainingBatch& batch);

  // Loss of `batch` under the current parameters with a fixed pair
  // selection, in train-mode normalization, without touching any state.
  double replay(const TrainingBatch& batch, const PairSelection& selection) const;

  // Loss without an update; negatives are mined with `rng`.
  double evaluate(const TrainingBatch& batch, Rng& rng, nd::Mode mode = nd::Mode::infer) const;

  const PairSelection& last_selection() const { return last_selection_; }
  std::int64_t steps() const { return steps_; }

  const TrainConfig& config() const { return config_; }
  EncoderParams<float>& params() { return params_; }
  const EncoderParams<float>& params() const { return params_; }
  AdamState<float>& optimizer() { return adam_; }
  Rng& rng() { return rng_; }

 private:
  TrainConfig config_;
  EncoderParams<float> params_;
  AdamState<float> adam_;
  Rng rng_;
  PairSelection last_selection_;
  std::int64_t steps_ = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;  // NaN when fewer than two validation persons
  double wall_seconds = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
  std::vector<std::size_t> train_persons;
  std::vector<std::size_t> validation_persons;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Persons (not sub-sequences) are split into train and validation with a
// seeded shuffle; validation size is round(fraction * n).
void split_persons(std::size_t n, double fraction, std::uint64_t seed, std::vector<std::size_t>& train,
                   std::vector<std::size_t>& validation);

TrainResult train(const TrainConfig& config, const std::vector<EventSequence>& data, const Schema& schema,
                  const Vocabulary& vocab, const EpochCallback& on_epoch = {});

// Builds the vocabulary over the training persons of `raw` and trains.
TrainResult train(const TrainConfig& config, const std::vector<RawSequence>& raw, const Schema& schema,
                  const EpochCallback& on_epoch = {});

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& metrics);

struct FineTuneConfig {
  double learning_rate = 0.0005;  // encoder
  double head_learning_rate = 0.01;
  int epochs = 10;
  int batch_persons = 32;
  double test_fraction = 0.2;
  bool freeze_encoder = false;
  std::uint64_t seed = 42;
  double grad_clip = 5.0;

  void validate() const;
};

struct FineTuneResult {
  Checkpoint checkpoint;  // encoder (possibly updated) plus head
  std::vector<double> epoch_loss;
  double accuracy = 0;
  std::optional<double> auroc;  // binary tasks only
  std::vector<std::size_t> train_persons;
  std::vector<std::size_t> test_persons;
};

// Softmax classification head over the raw final state h_T, trained jointly
// with the encoder (or alone when freeze_encoder is set). Labels must be
// 0..C-1; persons are split stratified by label.
FineTuneResult fine_tune(const Checkpoint& ckpt, const std::vector<EventSequence>& data, const FineTuneConfig& cfg);

// Class probabilities [n x C] for each sequence, infer mode.
Eigen::MatrixXd predict_proba(const Checkpoint& ckpt, const std::vector<EventSequence>& data);

}  // namespace lifestream
