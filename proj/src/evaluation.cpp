#include "lifestream/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "lifestream/errors.hpp"

namespace lifestream {

std::vector<int> EmbeddingTable::require_labels() const {
  std::vector<int> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) throw ProbeError("person \"" + person_ids[i] + "\" has no label");
    out.push_back(*labels[i]);
  }
  return out;
}

EmbeddingExport export_embeddings(const Checkpoint& ckpt, const std::vector<RawSequence>& data, const Schema& schema) {
  if (schema.to_json() != ckpt.schema.to_json()) {
    throw CompatibilityError("dataset schema does not match the checkpoint schema (checkpoint vocabulary digest " +
                             ckpt.digest() + ")");
  }
  const std::vector<EventSequence> seqs = ckpt.vocabulary.apply(data);
  const auto d = static_cast<Eigen::Index>(ckpt.encoder.hidden_size());
  EmbeddingExport out;
  out.table.vectors.resize(static_cast<Eigen::Index>(seqs.size()), d);
  const std::size_t chunk = 64;
  for (std::size_t s = 0; s < seqs.size(); s += chunk) {
    const std::size_t e = std::min(seqs.size(), s + chunk);
    std::vector<const EventSequence*> batch;
    for (std::size_t i = s; i < e; ++i) batch.push_back(&seqs[i]);
    nd::Graph<float> g;
    std::vector<nd::BatchNormState<float>> norms = ckpt.encoder.norms;
    const EncoderVars<float> vars = bind(g, ckpt.encoder, false);
    nd::Var<float> h = encode_batch(g, vars, std::span<nd::BatchNormState<float>>(norms), ckpt.encoder.config,
                                    std::span<const EventSequence* const>(batch), nd::Mode::infer,
                                    ckpt.encoder.config.max_seq_len);
    const nd::Array<float> unit = normalize_rows(h.value());
    for (std::size_t i = s; i < e; ++i) {
      const auto r = static_cast<nd::Index>(i - s);
      out.table.vectors.row(static_cast<Eigen::Index>(i)) = unit.row(r).cast<double>();
      out.states.push_back(h.value().row(r));
    }
  }
  for (const auto& seq : data) {
    out.table.person_ids.push_back(seq.person_id);
    out.table.labels.push_back(seq.label);
    out.last_times.push_back(seq.events.empty() ? 0 : seq.events.back().time);
  }
  return out;
}

void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write embeddings file " + path.string());
  out << "person_id,label";
  for (Eigen::Index j = 0; j < table.vectors.cols(); ++j) out << ",e" << j;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << csv_escape(table.person_ids[i]) << ',';
    if (table.labels[i]) out << *table.labels[i];
    for (Eigen::Index j = 0; j < table.vectors.cols(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.9g", table.vectors(static_cast<Eigen::Index>(i), j));
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing embeddings file " + path.string());
}

EmbeddingTable read_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read embeddings file " + path.string());
  CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row) || row.size() < 3 || row[0] != "person_id" || row[1] != "label") {
    throw InputError(path.string() + ": expected header person_id,label,e0,...");
  }
  const std::size_t d = row.size() - 2;
  EmbeddingTable table;
  std::vector<double> values;
  std::set<std::string> seen;
  while (reader.next(row)) {
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != d + 2) throw RowError(reader.record_line(), "expected " + std::to_string(d + 2) + " fields");
    if (!seen.insert(row[0]).second) throw RowError(reader.record_line(), "duplicate person_id " + row[0]);
    table.person_ids.push_back(row[0]);
    try {
      table.labels.push_back(row[1].empty() ? std::nullopt : std::optional<int>(std::stoi(row[1])));
      for (std::size_t j = 0; j < d; ++j) values.push_back(std::stod(row[j + 2]));
    } catch (const std::logic_error&) {
      throw RowError(reader.record_line(), "non-numeric label or embedding value");
    }
  }
  table.vectors.resize(static_cast<Eigen::Index>(table.person_ids.size()), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < table.vectors.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.vectors.cols(); ++j) {
      table.vectors(i, j) = values[static_cast<std::size_t>(i) * d + static_cast<std::size_t>(j)];
    }
  }
  return table;
}

std::string to_string(ProbeMetric m) { return m == ProbeMetric::accuracy ? "accuracy" : "auroc"; }

ProbeMetric parse_probe_metric(const std::string& name) {
  if (name == "accuracy") return ProbeMetric::accuracy;
  if (name == "auroc") return ProbeMetric::auroc;
  throw ConfigError("unknown probe metric \"" + name + "\" (expected accuracy or auroc)");
}

nlohmann::json ProbeReport::to_json() const {
  return {{"metric", metric}, {"mean", mean}, {"ci95", ci95}, {"folds", folds}, {"n", n}};
}

std::vector<int> stratified_folds(const std::vector<std::string>& ids, const std::vector<int>& labels, int folds,
                                  std::uint64_t seed) {
  if (ids.size() != labels.size()) throw ShapeError("stratified_folds: ids and labels differ in length");
  if (folds < 2) throw ProbeError("folds must be >= 2");
  if (ids.size() < static_cast<std::size_t>(folds)) {
    throw ProbeError("cannot split " + std::to_string(ids.size()) + " persons into " + std::to_string(folds) + " folds");
  }
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ids.size(); ++i) groups[labels[i]].push_back(i);
  std::set<std::string> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) throw ProbeError("person ids must be unique");
  std::mt19937_64 rng(seed);
  std::vector<int> fold(ids.size(), 0);
  std::size_t position = 0;
  for (auto& [label, rows] : groups) {
    std::sort(rows.begin(), rows.end(), [&ids](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t r : rows) fold[r] = static_cast<int>(position++ % static_cast<std::size_t>(folds));
  }
  return fold;
}

namespace {

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    Eigen::RowVectorXd e = (z.row(r).array() - z.row(r).maxCoeff()).exp().matrix();
    p.row(r) = e / e.sum();
  }
  return p;
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& X, const Eigen::RowVectorXd& mean, const Eigen::RowVectorXd& scale) {
  return ((X.rowwise() - mean).array().rowwise() / scale.array()).matrix();
}

}  // namespace

Eigen::MatrixXd LogisticModel::probabilities(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd z = standardize(X, mean, scale) * W;
  z.rowwise() += b;
  return softmax_rows(z);
}

std::vector<int> LogisticModel::predict(const Eigen::MatrixXd& X) const {
  const Eigen::MatrixXd p = probabilities(X);
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    Eigen::Index arg = 0;
    p.row(r).maxCoeff(&arg);
    out[static_cast<std::size_t>(r)] = static_cast<int>(arg);
  }
  return out;
}

// Minimizes mean cross-entropy + (l2 / 2) ||W||^2 with Nesterov-accelerated
// gradient steps of size 1 / L, where L bounds the Hessian norm.
LogisticModel fit_logistic(const Eigen::MatrixXd& X, const std::vector<int>& y, int n_classes,
                           const LogisticOptions& options) {
  const Eigen::Index n = X.rows(), d = X.cols();
  if (n == 0) throw ProbeError("fit_logistic: no training rows");
  if (static_cast<std::size_t>(n) != y.size()) throw ShapeError("fit_logistic: row and label counts differ");
  LogisticModel model;
  model.mean = X.colwise().mean();
  model.scale = ((X.rowwise() - model.mean).array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(model.scale(j) > 1e-12)) model.scale(j) = 1.0;
  }
  const Eigen::MatrixXd Z = standardize(X, model.mean, model.scale);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(n, n_classes);
  for (Eigen::Index i = 0; i < n; ++i) Y(i, y[static_cast<std::size_t>(i)]) = 1.0;

  const double L = 0.5 * (Z.squaredNorm() / static_cast<double>(n) + 1.0) + options.l2;
  const double step = 1.0 / L;
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(d, n_classes), W_prev = W, Wv = W;
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(n_classes), b_prev = b, bv = b;
  double t = 1.0;
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    Eigen::MatrixXd logits = Z * Wv;
    logits.rowwise() += bv;
    const Eigen::MatrixXd R = (softmax_rows(logits) - Y) / static_cast<double>(n);
    const Eigen::MatrixXd gW = Z.transpose() * R + options.l2 * Wv;
    const Eigen::RowVectorXd gb = R.colwise().sum();
    const double gnorm = std::max(gW.cwiseAbs().maxCoeff(), gb.cwiseAbs().maxCoeff());
    if (gnorm < options.tolerance) {
      W = Wv;
      b = bv;
      break;
    }
    W_prev = W;
    b_prev = b;
    W = Wv - step * gW;
    b = bv - step * gb;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double momentum = (t - 1.0) / t_next;
    Wv = W + momentum * (W - W_prev);
    bv = b + momentum * (b - b_prev);
    t = t_next;
  }
  model.W = W;
  model.b = b;
  model.iterations = it;
  return model;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& positive) {
  if (scores.size() != positive.size()) throw ShapeError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double n_pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (positive[i]) {
      n_pos += 1;
      rank_sum += rank[i];
    }
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ProbeError("auroc needs both positive and negative examples");
  return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

double auroc_trapezoid(const std::vector<double>& scores, const std::vector<int>& positive) {
  if (scores.size() != positive.size()) throw ShapeError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double P = 0;
  for (int p : positive) P += p ? 1 : 0;
  const double N = static_cast<double>(n) - P;
  if (P == 0 || N == 0) throw ProbeError("auroc needs both positive and negative examples");
  double area = 0, tp = 0, fp = 0, prev_tpr = 0, prev_fpr = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (positive[order[j]] ? tp : fp) += 1;
      ++j;
    }
    const double tpr = tp / P, fpr = fp / N;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2;
    prev_tpr = tpr;
    prev_fpr = fpr;
    i = j;
  }
  return area;
}

namespace {

struct ClassIndex {
  std::vector<int> classes;  // sorted distinct labels
  std::vector<int> y;        // dense index per row
};

ClassIndex index_classes(const std::vector<int>& labels) {
  ClassIndex c;
  c.classes = labels;
  std::sort(c.classes.begin(), c.classes.end());
  c.classes.erase(std::unique(c.classes.begin(), c.classes.end()), c.classes.end());
  if (c.classes.size() < 2) throw ProbeError("probe needs at least two classes");
  for (int l : labels) {
    c.y.push_back(static_cast<int>(std::lower_bound(c.classes.begin(), c.classes.end(), l) - c.classes.begin()));
  }
  return c;
}

// Row permutation ordering the table by person id.
std::vector<std::size_t> id_order(const EmbeddingTable& table) {
  std::vector<std::size_t> order(table.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&table](std::size_t a, std::size_t b) { return table.person_ids[a] < table.person_ids[b]; });
  return order;
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

ProbeReport summarize(const std::string& metric, const std::vector<double>& scores, std::size_t n) {
  ProbeReport r;
  r.metric = metric;
  r.folds = static_cast<int>(scores.size());
  r.n = n;
  r.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  double ss = 0;
  for (double s : scores) ss += (s - r.mean) * (s - r.mean);
  const double sd = scores.size() > 1 ? std::sqrt(ss / static_cast<double>(scores.size() - 1)) : 0.0;
  r.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(scores.size()));
  return r;
}

template <typename Evaluate>
ProbeReport cross_validate(const EmbeddingTable& table, int folds, std::uint64_t seed, const std::string& metric,
                           Evaluate evaluate) {
  if (table.size() == 0) throw ProbeError("probe on an empty table");
  const std::vector<int> raw = table.require_labels();
  const ClassIndex classes = index_classes(raw);
  const std::vector<int> fold = stratified_folds(table.person_ids, raw, folds, seed);
  const std::vector<std::size_t> order = id_order(table);
  std::vector<double> scores;
  for (int f = 0; f < folds; ++f) {
    std::vector<std::size_t> tr, te;
    for (std::size_t i : order) (fold[i] == f ? te : tr).push_back(i);
    std::vector<int> ytr, yte;
    for (std::size_t i : tr) ytr.push_back(classes.y[i]);
    for (std::size_t i : te) yte.push_back(classes.y[i]);
    scores.push_back(evaluate(gather(table.vectors, tr), ytr, gather(table.vectors, te), yte,
                              static_cast<int>(classes.classes.size())));
  }
  return summarize(metric, scores, table.size());
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += static_cast<std::size_t>(pred[i] == truth[i]);
  return truth.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace

ProbeReport linear_probe(const EmbeddingTable& table, int folds, ProbeMetric metric, std::uint64_t seed) {
  return cross_validate(table, folds, seed, to_string(metric),
                        [metric](const Eigen::MatrixXd& Xtr, const std::vector<int>& ytr, const Eigen::MatrixXd& Xte,
                                 const std::vector<int>& yte, int C) {
                          if (metric == ProbeMetric::auroc && C != 2) {
                            throw ProbeError("auroc is only defined for binary labels, got " + std::to_string(C) +
                                             " classes");
                          }
                          const LogisticModel model = fit_logistic(Xtr, ytr, C);
                          if (metric == ProbeMetric::accuracy) return accuracy(model.predict(Xte), yte);
                          const Eigen::MatrixXd p = model.probabilities(Xte);
                          std::vector<double> s(p.col(1).data(), p.col(1).data() + p.rows());
                          return auroc(s, yte);
                        });
}

std::vector<int> knn_predict(const Eigen::MatrixXd& train, const std::vector<int>& train_labels,
                             const Eigen::MatrixXd& query, int k, bool exclude_self) {
  if (k < 1) throw ProbeError("k_neighbors must be >= 1");
  if (train.cols() != query.cols()) throw ShapeError("knn_predict: dimension mismatch");
  if (static_cast<std::size_t>(train.rows()) != train_labels.size()) throw ShapeError("knn_predict: label count");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(query.rows()));
  std::vector<std::pair<double, Eigen::Index>> dist;
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    dist.clear();
    for (Eigen::Index i = 0; i < train.rows(); ++i) {
      if (exclude_self && i == q) continue;
      dist.emplace_back((train.row(i) - query.row(q)).norm(), i);
    }
    if (dist.empty()) throw ProbeError("knn_predict: no neighbors available");
    const std::size_t keep = std::min(static_cast<std::size_t>(k), dist.size());
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(keep), dist.end());
    std::map<int, std::pair<int, double>> votes;  // label -> (count, distance sum)
    for (std::size_t j = 0; j < keep; ++j) {
      auto& v = votes[train_labels[static_cast<std::size_t>(dist[j].second)]];
      v.first += 1;
      v.second += dist[j].first;
    }
    int best = votes.begin()->first;
    for (const auto& [label, v] : votes) {
      const auto& b = votes[best];
      if (v.first > b.first || (v.first == b.first && v.second < b.second)) best = label;
    }
    out.push_back(best);
  }
  return out;
}

ProbeReport knn_probe(const EmbeddingTable& table, int k_neighbors, int folds, std::uint64_t seed) {
  if (k_neighbors < 1) throw ProbeError("k_neighbors must be >= 1");
  return cross_validate(table, folds, seed, "accuracy",
                        [k_neighbors](const Eigen::MatrixXd& Xtr, const std::vector<int>& ytr,
                                      const Eigen::MatrixXd& Xte, const std::vector<int>& yte, int) {
                          return accuracy(knn_predict(Xtr, ytr, Xte, k_neighbors), yte);
                        });
}

Projection pca_project(const Eigen::MatrixXd& X, int dims, double tol) {
  const Eigen::Index n = X.rows(), d = X.cols();
  if (n < 3) throw ProjectionError("projection needs at least 3 rows, got " + std::to_string(n));
  if (dims < 1 || dims > d) throw ProjectionError("projection dims must be in [1, " + std::to_string(d) + "]");
  const Eigen::MatrixXd Xc = X.rowwise() - X.colwise().mean();
  Eigen::MatrixXd C = Xc.transpose() * Xc / static_cast<double>(n - 1);
  const double trace = C.trace();
  if (!(trace > 1e-300)) throw ProjectionError("data has rank 0 (all rows identical)");

  Projection p;
  p.components.resize(d, dims);
  p.explained_variance.resize(dims);
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> normal;
  for (int c = 0; c < dims; ++c) {
    Eigen::VectorXd v(d);
    for (Eigen::Index j = 0; j < d; ++j) v(j) = normal(rng);
    for (int q = 0; q < c; ++q) v -= p.components.col(q).dot(v) * p.components.col(q);
    v.normalize();
    double lambda = v.dot(C * v);
    bool degenerate = false;
    for (int it = 0; it < 100000; ++it) {
      Eigen::VectorXd w = C * v;
      for (int q = 0; q < c; ++q) w -= p.components.col(q).dot(w) * p.components.col(q);
      const double norm = w.norm();
      if (norm <= 1e-14 * trace) {
        degenerate = true;
        break;
      }
      w /= norm;
      const double next = w.dot(C * w);
      const double dv = std::min((w - v).norm(), (w + v).norm());
      v = w;
      const bool settled = std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next));
      lambda = next;
      if (settled && dv <= std::sqrt(tol)) break;
    }
    if (degenerate) lambda = 0.0;
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    p.components.col(c) = v;
    p.explained_variance(c) = lambda;
    C -= lambda * v * v.transpose();
  }
  p.coords = Xc * p.components;
  return p;
}

Projection pca_project(const EmbeddingTable& table, int dims) { return pca_project(table.vectors, dims); }

void write_projection_csv(const std::filesystem::path& path, const EmbeddingTable& table, const Projection& proj) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write projection file " + path.string());
  out << "person_id,label,x,y\n";
  char buf[96];
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << csv_escape(table.person_ids[i]) << ',';
    if (table.labels[i]) out << *table.labels[i];
    const double y = proj.coords.cols() > 1 ? proj.coords(r, 1) : 0.0;
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g\n", proj.coords(r, 0), y);
    out << buf;
  }
  if (!out) throw IoError("failed writing projection file " + path.string());
}

}  // namespace lifestream

namespace lifestream {

void save_person_states(const std::filesystem::path& path, const PersonStates& states) {
  TensorFile f;
  f.meta["kind"] = "person_states";
  f.meta["vocabulary_digest"] = states.vocabulary_digest;
  nlohmann::json persons = nlohmann::json::array();
  for (std::size_t i = 0; i < states.person_ids.size(); ++i) {
    nlohmann::json p = {{"id", states.person_ids[i]}, {"last_time", states.last_times[i]}};
    p["label"] = states.labels[i] ? nlohmann::json(*states.labels[i]) : nlohmann::json(nullptr);
    persons.push_back(std::move(p));
    f.tensors.emplace_back(states.person_ids[i], states.states[i]);
  }
  f.meta["persons"] = std::move(persons);
  write_tensor_file(path, f);
}

PersonStates load_person_states(const std::filesystem::path& path) {
  const TensorFile f = read_tensor_file(path);
  PersonStates s;
  try {
    if (f.meta.at("kind").get<std::string>() != "person_states") {
      throw CheckpointError(path.string() + " is not a state file");
    }
    s.vocabulary_digest = f.meta.at("vocabulary_digest").get<std::string>();
    for (const auto& p : f.meta.at("persons")) {
      s.person_ids.push_back(p.at("id").get<std::string>());
      s.last_times.push_back(p.at("last_time").get<std::int64_t>());
      s.labels.push_back(p.at("label").is_null() ? std::nullopt : std::optional<int>(p.at("label").get<int>()));
      s.states.push_back(f.at(s.person_ids.back()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed state header: " + e.what());
  }
  return s;
}

PersonStates to_person_states(const EmbeddingExport& exported, const Checkpoint& ckpt) {
  PersonStates s;
  s.vocabulary_digest = ckpt.digest();
  s.person_ids = exported.table.person_ids;
  s.labels = exported.table.labels;
  s.last_times = exported.last_times;
  s.states = exported.states;
  return s;
}

PersonStates update_person_states(const Checkpoint& ckpt, const PersonStates& states,
                                  const std::vector<RawSequence>& new_events) {
  if (states.vocabulary_digest != ckpt.digest()) {
    throw CompatibilityError("state file vocabulary digest " + states.vocabulary_digest +
                             " does not match checkpoint digest " + ckpt.digest());
  }
  const nd::Index d = ckpt.encoder.hidden_size();
  for (std::size_t i = 0; i < states.states.size(); ++i) {
    if (states.states[i].rows() != 1 || states.states[i].cols() != d) {
      throw CompatibilityError("state of \"" + states.person_ids[i] + "\" has width " +
                               std::to_string(states.states[i].cols()) + ", checkpoint hidden size is " +
                               std::to_string(d));
    }
  }
  PersonStates out = states;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < out.person_ids.size(); ++i) slot.emplace(out.person_ids[i], i);
  for (const RawSequence& seq : new_events) {
    if (seq.events.empty()) continue;
    auto it = slot.find(seq.person_id);
    std::optional<std::int64_t> previous;
    nd::Array<float> start = nd::Array<float>::Zero(1, d);
    if (it != slot.end()) {
      previous = out.last_times[it->second];
      start = out.states[it->second];
    }
    const EventSequence tail = ckpt.vocabulary.apply(seq, previous);
    const SequenceEmbedding<float> next =
        incremental_update(start, std::span<const Event>(tail.events), ckpt.encoder);
    if (it == slot.end()) {
      slot.emplace(seq.person_id, out.person_ids.size());
      out.person_ids.push_back(seq.person_id);
      out.labels.push_back(seq.label);
      out.last_times.push_back(seq.events.back().time);
      out.states.push_back(next.state);
    } else {
      out.states[it->second] = next.state;
      out.last_times[it->second] = seq.events.back().time;
      if (seq.label) out.labels[it->second] = seq.label;
    }
  }
  return out;
}

EmbeddingTable states_table(const PersonStates& states) {
  EmbeddingTable t;
  t.person_ids = states.person_ids;
  t.labels = states.labels;
  const Eigen::Index d = states.states.empty() ? 0 : static_cast<Eigen::Index>(states.states.front().cols());
  t.vectors.resize(static_cast<Eigen::Index>(states.states.size()), d);
  for (std::size_t i = 0; i < states.states.size(); ++i) {
    t.vectors.row(static_cast<Eigen::Index>(i)) = normalize_rows(states.states[i]).cast<double>();
  }
  return t;
}

}  // namespace lifestream
