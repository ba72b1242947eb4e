#include "lifestream/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "lifestream/evaluation.hpp"

namespace lifestream {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::vector<nd::Array<float>> collect_grads(nd::Graph<float>& g, const std::vector<nd::Var<float>>& vars) {
  std::vector<nd::Array<float>> grads;
  grads.reserve(vars.size());
  for (const auto& v : vars) grads.push_back(g.grad(v.id()));
  return grads;
}

std::string grad_report(const std::vector<std::pair<std::string, nd::Array<float>*>>& named,
                        const std::vector<nd::Array<float>>& grads) {
  std::ostringstream os;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (i) os << ", ";
    os << named[i].first << "=" << grads[i].norm();
  }
  return os.str();
}

}  // namespace

MetricTrainer::MetricTrainer(const TrainConfig& config, const Vocabulary& vocab)
    : config_(config),
      params_(init_encoder<float>(vocab, config.encoder, mix_seed(config.seed, 0))),
      rng_(mix_seed(config.seed, 1)) {
  config_.validate();
}

MetricTrainer::StepStats MetricTrainer::step(const TrainingBatch& batch) {
  nd::Graph<float> g;
  const EncoderVars<float> vars = bind(g, params_, true);
  BatchLoss<float> fwd = batch_loss(g, vars, std::span<nd::BatchNormState<float>>(params_.norms), config_, batch,
                                    nd::Mode::train, rng_);
  g.backward(fwd.loss);
  auto named = params_.trainable();
  std::vector<nd::Array<float>> grads = collect_grads(g, vars.trainable());
  StepStats stats;
  stats.loss = static_cast<double>(fwd.loss.value()(0, 0));
  stats.grad_norm = global_norm(std::span<const nd::Array<float>>(grads));
  if (!std::isfinite(stats.loss) || !std::isfinite(stats.grad_norm)) {
    throw NumericError("non-finite training loss at step " + std::to_string(steps_ + 1) + ": loss=" +
                       std::to_string(stats.loss) + " grad_norm=" + std::to_string(stats.grad_norm) + " (" +
                       grad_report(named, grads) + ")");
  }
  clip_global_norm(std::span<nd::Array<float>>(grads), config_.grad_clip);
  const AdamConfig adam{config_.learning_rate, config_.beta1, config_.beta2, config_.eps};
  adam_step<float>(NamedParams<float>(named), std::span<const nd::Array<float>>(grads), adam_, adam);
  last_selection_ = std::move(fwd.selection);
  ++steps_;
  return stats;
}

double MetricTrainer::replay(const TrainingBatch& batch, const PairSelection& selection) const {
  nd::Graph<float> g;
  std::vector<nd::BatchNormState<float>> norms = params_.norms;
  const EncoderVars<float> vars = bind(g, params_, false);
  Rng unused(0);
  BatchLoss<float> fwd = batch_loss(g, vars, std::span<nd::BatchNormState<float>>(norms), config_, batch,
                                    nd::Mode::train, unused, &selection);
  return static_cast<double>(fwd.loss.value()(0, 0));
}

double MetricTrainer::evaluate(const TrainingBatch& batch, Rng& rng, nd::Mode mode) const {
  nd::Graph<float> g;
  std::vector<nd::BatchNormState<float>> norms = params_.norms;
  const EncoderVars<float> vars = bind(g, params_, false);
  BatchLoss<float> fwd =
      batch_loss(g, vars, std::span<nd::BatchNormState<float>>(norms), config_, batch, mode, rng);
  return static_cast<double>(fwd.loss.value()(0, 0));
}

void split_persons(std::size_t n, double fraction, std::uint64_t seed, std::vector<std::size_t>& train,
                   std::vector<std::size_t>& validation) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 2));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_val, n)));
  train.assign(order.begin() + static_cast<std::ptrdiff_t>(std::min(n_val, n)), order.end());
  std::sort(validation.begin(), validation.end());
  std::sort(train.begin(), train.end());
}

namespace {

std::vector<EventSequence> subset(const std::vector<EventSequence>& data, const std::vector<std::size_t>& idx) {
  std::vector<EventSequence> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

// Mean loss over the validation persons in chunks of at most N, with a
// sampling RNG reset every call so epochs are comparable.
double validation_loss(const MetricTrainer& trainer, const std::vector<EventSequence>& val) {
  if (val.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const TrainConfig& cfg = trainer.config();
  Rng rng(mix_seed(cfg.seed, 3));
  const auto n = static_cast<std::size_t>(cfg.batch_persons);
  double total = 0;
  int chunks = 0;
  for (std::size_t start = 0; start < val.size(); start += n) {
    const std::size_t stop = std::min(val.size(), start + n);
    if (stop - start < 2) break;
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    try {
      TrainingBatch batch = make_batch(std::span<const EventSequence>(val), std::span<const std::size_t>(idx),
                                       cfg.subseq(), rng);
      total += trainer.evaluate(batch, rng, nd::Mode::infer);
      ++chunks;
    } catch (const BatchError&) {
    }
  }
  return chunks ? total / chunks : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<EventSequence>& data, const Schema& schema,
                  const Vocabulary& vocab, const EpochCallback& on_epoch) {
  config.validate();
  TrainResult result;
  split_persons(data.size(), config.validation_fraction, config.seed, result.train_persons,
                result.validation_persons);
  if (result.train_persons.size() < static_cast<std::size_t>(config.batch_persons)) {
    throw ConfigError("dataset too small: " + std::to_string(result.train_persons.size()) +
                      " training persons for batch_persons=" + std::to_string(config.batch_persons));
  }
  const std::vector<EventSequence> train_set = subset(data, result.train_persons);
  const std::vector<EventSequence> val_set = subset(data, result.validation_persons);

  MetricTrainer trainer(config, vocab);
  const SubSeqConfig sub = config.subseq();
  const auto n = static_cast<std::size_t>(config.batch_persons);
  const std::size_t steps_per_epoch = train_set.size() / n;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), trainer.rng());
    double total = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::span<const std::size_t> persons(order.data() + s * n, n);
      TrainingBatch batch = make_batch(std::span<const EventSequence>(train_set), persons, sub, trainer.rng());
      try {
        total += trainer.step(batch).loss;
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = total / static_cast<double>(steps_per_epoch);
    m.val_loss = validation_loss(trainer, val_set);
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }

  Checkpoint& ck = result.checkpoint;
  ck.config = config;
  ck.schema = schema;
  ck.vocabulary = vocab;
  ck.encoder = trainer.params();
  ck.optimizer = trainer.optimizer();
  ck.epoch = config.epochs;
  ck.rng_state = rng_to_string(trainer.rng());
  return result;
}

TrainResult train(const TrainConfig& config, const std::vector<RawSequence>& raw, const Schema& schema,
                  const EpochCallback& on_epoch) {
  config.validate();
  std::vector<std::size_t> train_idx, val_idx;
  split_persons(raw.size(), config.validation_fraction, config.seed, train_idx, val_idx);
  std::vector<RawSequence> train_raw;
  train_raw.reserve(train_idx.size());
  for (std::size_t i : train_idx) train_raw.push_back(raw[i]);
  const Vocabulary vocab = build_vocabulary(train_raw.empty() ? raw : train_raw, schema);
  return train(config, vocab.apply(raw), schema, vocab, on_epoch);
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& metrics) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics file " + path.string());
  out << "epoch,train_loss,val_loss,wall_seconds\n";
  char buf[128];
  for (const auto& m : metrics) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.3f\n", m.epoch, m.train_loss, m.val_loss, m.wall_seconds);
    out << buf;
  }
  if (!out) throw IoError("failed writing metrics file " + path.string());
}

void FineTuneConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("fine-tune learning_rate must be > 0");
  if (!(head_learning_rate > 0)) throw ConfigError("fine-tune head_learning_rate must be > 0");
  if (epochs < 1) throw ConfigError("fine-tune epochs must be >= 1");
  if (batch_persons < 2) throw ConfigError("fine-tune batch_persons must be >= 2");
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("fine-tune test_fraction must be in (0, 1)");
  if (!(grad_clip > 0)) throw ConfigError("fine-tune grad_clip must be > 0");
}

namespace {

nd::Var<float> head_logits(nd::Graph<float>& g, const EncoderVars<float>& vars,
                           std::span<nd::BatchNormState<float>> norms, const EncoderConfig& enc,
                           std::span<const EventSequence* const> seqs, nd::Mode mode, const nd::Var<float>& W,
                           const nd::Var<float>& b) {
  nd::Var<float> h = encode_batch(g, vars, norms, enc, seqs, mode, enc.max_seq_len);
  return nd::add_row(nd::matmul(h, W), b);
}

}  // namespace

Eigen::MatrixXd predict_proba(const Checkpoint& ckpt, const std::vector<EventSequence>& data) {
  if (!ckpt.head) throw CompatibilityError("checkpoint has no classification head");
  const auto C = static_cast<nd::Index>(ckpt.head->n_classes());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(data.size()), C);
  const std::size_t chunk = 64;
  for (std::size_t s = 0; s < data.size(); s += chunk) {
    const std::size_t e = std::min(data.size(), s + chunk);
    std::vector<const EventSequence*> seqs;
    for (std::size_t i = s; i < e; ++i) seqs.push_back(&data[i]);
    nd::Graph<float> g;
    std::vector<nd::BatchNormState<float>> norms = ckpt.encoder.norms;
    const EncoderVars<float> vars = bind(g, ckpt.encoder, false);
    nd::Var<float> logits = head_logits(g, vars, std::span<nd::BatchNormState<float>>(norms), ckpt.encoder.config,
                                        std::span<const EventSequence* const>(seqs), nd::Mode::infer,
                                        g.constant(ckpt.head->W), g.constant(ckpt.head->b));
    const Eigen::MatrixXd z = logits.value().cast<double>();
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      Eigen::RowVectorXd p = (z.row(r).array() - z.row(r).maxCoeff()).exp().matrix();
      out.row(static_cast<Eigen::Index>(s) + r) = p / p.sum();
    }
  }
  return out;
}

FineTuneResult fine_tune(const Checkpoint& ckpt, const std::vector<EventSequence>& data, const FineTuneConfig& cfg) {
  cfg.validate();
  std::vector<std::string> ids;
  std::vector<int> labels;
  int n_classes = 0;
  for (const auto& s : data) {
    if (!s.label) throw ConfigError("fine-tuning needs a label for every person (missing for \"" + s.person_id + "\")");
    if (*s.label < 0) throw ConfigError("fine-tuning labels must be 0..C-1, got " + std::to_string(*s.label));
    ids.push_back(s.person_id);
    labels.push_back(*s.label);
    n_classes = std::max(n_classes, *s.label + 1);
  }
  if (n_classes < 2) throw ConfigError("fine-tuning needs at least two classes");

  FineTuneResult result;
  const int folds = std::max(2, static_cast<int>(std::lround(1.0 / cfg.test_fraction)));
  const std::vector<int> fold = stratified_folds(ids, labels, folds, cfg.seed);
  for (std::size_t i = 0; i < data.size(); ++i) (fold[i] == 0 ? result.test_persons : result.train_persons).push_back(i);
  if (result.train_persons.size() < 2) throw ConfigError("fine-tuning split left fewer than two training persons");

  Checkpoint out = ckpt;
  const nd::Index d = out.encoder.hidden_size();
  HeadParams head{nd::Array<float>::Zero(d, n_classes), nd::Array<float>::Zero(1, n_classes)};
  AdamState<float> encoder_adam, head_adam;
  const AdamConfig encoder_cfg{cfg.learning_rate, ckpt.config.beta1, ckpt.config.beta2, ckpt.config.eps};
  const AdamConfig head_cfg{cfg.head_learning_rate, ckpt.config.beta1, ckpt.config.beta2, ckpt.config.eps};
  Rng rng(mix_seed(cfg.seed, 4));
  const nd::Mode mode = cfg.freeze_encoder ? nd::Mode::infer : nd::Mode::train;
  std::vector<std::size_t> order = result.train_persons;
  const auto n = static_cast<std::size_t>(cfg.batch_persons);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int steps = 0;
    for (std::size_t s = 0; s < order.size(); s += n) {
      const std::size_t e = std::min(order.size(), s + n);
      if (e - s < 2) break;
      std::vector<const EventSequence*> seqs;
      std::vector<int> y;
      for (std::size_t i = s; i < e; ++i) {
        seqs.push_back(&data[order[i]]);
        y.push_back(labels[order[i]]);
      }
      nd::Graph<float> g;
      std::vector<nd::BatchNormState<float>> frozen_norms = out.encoder.norms;
      auto norms = cfg.freeze_encoder ? std::span<nd::BatchNormState<float>>(frozen_norms)
                                      : std::span<nd::BatchNormState<float>>(out.encoder.norms);
      const EncoderVars<float> vars = bind(g, out.encoder, !cfg.freeze_encoder);
      nd::Var<float> W = g.leaf(head.W, true);
      nd::Var<float> b = g.leaf(head.b, true);
      nd::Var<float> logits = head_logits(g, vars, norms, out.encoder.config,
                                          std::span<const EventSequence* const>(seqs), mode, W, b);
      nd::Var<float> loss = nd::softmax_cross_entropy(logits, std::span<const int>(y));
      g.backward(loss);
      const double value = static_cast<double>(loss.value()(0, 0));
      if (!std::isfinite(value)) throw NumericError("non-finite fine-tuning loss at epoch " + std::to_string(epoch + 1));

      std::vector<std::pair<std::string, nd::Array<float>*>> named;
      std::vector<nd::Var<float>> leaves;
      if (!cfg.freeze_encoder) {
        named = out.encoder.trainable();
        leaves = vars.trainable();
      }
      const std::size_t n_encoder = named.size();
      named.emplace_back("head/W", &head.W);
      named.emplace_back("head/b", &head.b);
      leaves.push_back(W);
      leaves.push_back(b);
      std::vector<nd::Array<float>> grads = collect_grads(g, leaves);
      clip_global_norm(std::span<nd::Array<float>>(grads), cfg.grad_clip);
      const auto all_named = NamedParams<float>(named);
      const auto all_grads = std::span<const nd::Array<float>>(grads);
      if (n_encoder > 0) {
        adam_step<float>(all_named.first(n_encoder), all_grads.first(n_encoder), encoder_adam, encoder_cfg);
      }
      adam_step<float>(all_named.subspan(n_encoder), all_grads.subspan(n_encoder), head_adam, head_cfg);
      total += value;
      ++steps;
    }
    result.epoch_loss.push_back(steps ? total / steps : std::numeric_limits<double>::quiet_NaN());
  }

  out.head = head;
  if (!result.test_persons.empty()) {
    std::vector<EventSequence> test;
    for (std::size_t i : result.test_persons) test.push_back(data[i]);
    const Eigen::MatrixXd p = predict_proba(out, test);
    std::size_t correct = 0;
    std::vector<double> score;
    std::vector<int> positive;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      Eigen::Index arg = 0;
      p.row(r).maxCoeff(&arg);
      const int truth = *test[static_cast<std::size_t>(r)].label;
      correct += static_cast<std::size_t>(arg == truth);
      if (n_classes == 2) {
        score.push_back(p(r, 1));
        positive.push_back(truth == 1);
      }
    }
    result.accuracy = static_cast<double>(correct) / static_cast<double>(p.rows());
    if (n_classes == 2) {
      const auto pos = std::count(positive.begin(), positive.end(), 1);
      if (pos > 0 && pos < static_cast<long>(positive.size())) result.auroc = auroc(score, positive);
    }
  }
  result.checkpoint = std::move(out);
  return result;
}

}  // namespace lifestream
