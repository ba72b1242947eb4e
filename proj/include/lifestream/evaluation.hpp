#pragma once

// Embedding export and downstream probes: stratified k-fold linear probe,
// kNN probe, AUROC, and a 2-D PCA projection for plotting.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "lifestream/checkpoint.hpp"
#include "lifestream/ingest.hpp"

namespace lifestream {

struct EmbeddingTable {
  std::vector<std::string> person_ids;
  std::vector<std::optional<int>> labels;
  Eigen::MatrixXd vectors;  // one unit-norm row per person

  std::size_t size() const { return person_ids.size(); }
  // Throws ProbeError unless every row is labeled.
  std::vector<int> require_labels() const;
};

struct EmbeddingExport {
  EmbeddingTable table;
  std::vector<nd::Array<float>> states;  // raw h_T per person, [1 x d]
  std::vector<std::int64_t> last_times;  // time of each person's last event
};

// Raw final states keyed by person, with each person's last event time so
// an update can continue the time deltas. Stored in the tensor container,
// one tensor per person_id.
struct PersonStates {
  std::string vocabulary_digest;
  std::vector<std::string> person_ids;
  std::vector<std::optional<int>> labels;
  std::vector<std::int64_t> last_times;
  std::vector<nd::Array<float>> states;  // [1 x d] each
};

void save_person_states(const std::filesystem::path& path, const PersonStates& states);
PersonStates load_person_states(const std::filesystem::path& path);

// Infer-mode encoding of every person. CompatibilityError when `schema`
// differs from the checkpoint's.
EmbeddingExport export_embeddings(const Checkpoint& ckpt, const std::vector<RawSequence>& data, const Schema& schema);

PersonStates to_person_states(const EmbeddingExport& exported, const Checkpoint& ckpt);

// Continues every stored state over the person's events in `new_events`
// (persons absent from the file start from a zero state). Returns updated
// states; CompatibilityError on digest or width mismatch.
PersonStates update_person_states(const Checkpoint& ckpt, const PersonStates& states,
                                  const std::vector<RawSequence>& new_events);

// Unit-norm view of the states.
EmbeddingTable states_table(const PersonStates& states);

// CSV "person_id,label,e0,...,e{d-1}", 9 significant digits.
void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable read_embeddings_csv(const std::filesystem::path& path);

enum class ProbeMetric { accuracy, auroc };
std::string to_string(ProbeMetric m);
ProbeMetric parse_probe_metric(const std::string& name);

struct ProbeReport {
  std::string metric;
  double mean = 0;
  double ci95 = 0;  // 1.96 * standard error over folds
  int folds = 0;
  std::size_t n = 0;

  nlohmann::json to_json() const;
};

// Fold index per row. Rows are grouped by label and ordered by person id
// before a seeded shuffle, so the assignment does not depend on row order.
std::vector<int> stratified_folds(const std::vector<std::string>& ids, const std::vector<int>& labels, int folds,
                                  std::uint64_t seed);

// Multinomial logistic regression with an L2 penalty on the weights.
struct LogisticModel {
  Eigen::MatrixXd W;  // [d x C]
  Eigen::RowVectorXd b;
  Eigen::RowVectorXd mean;   // feature standardization
  Eigen::RowVectorXd scale;
  int iterations = 0;

  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& X) const;
  std::vector<int> predict(const Eigen::MatrixXd& X) const;
};

struct LogisticOptions {
  double l2 = 1e-3;
  double tolerance = 1e-6;
  int max_iterations = 500;
};

LogisticModel fit_logistic(const Eigen::MatrixXd& X, const std::vector<int>& y, int n_classes,
                           const LogisticOptions& options = {});

// Mann-Whitney rank statistic with mid-ranks for ties.
double auroc(const std::vector<double>& scores, const std::vector<int>& positive);
// Trapezoidal area under the empirical ROC curve.
double auroc_trapezoid(const std::vector<double>& scores, const std::vector<int>& positive);

ProbeReport linear_probe(const EmbeddingTable& table, int folds = 5, ProbeMetric metric = ProbeMetric::accuracy,
                         std::uint64_t seed = 0);

// Majority vote over the k nearest training rows (euclidean, ties by lower
// row index). Vote ties go to the class with the smallest summed distance,
// then the lower label. exclude_self skips the training row with the same
// index as the query (for train == query evaluations).
std::vector<int> knn_predict(const Eigen::MatrixXd& train, const std::vector<int>& train_labels,
                             const Eigen::MatrixXd& query, int k, bool exclude_self = false);

ProbeReport knn_probe(const EmbeddingTable& table, int k_neighbors = 5, int folds = 5, std::uint64_t seed = 0);

struct Projection {
  Eigen::MatrixXd coords;       // [n x dims]
  Eigen::MatrixXd components;   // [d x dims], unit columns
  Eigen::VectorXd explained_variance;  // eigenvalues of the sample covariance
};

// Power iteration with deflation on the d x d sample covariance. Each
// component's largest-magnitude entry is made positive.
Projection pca_project(const Eigen::MatrixXd& X, int dims = 2, double tol = 1e-9);
Projection pca_project(const EmbeddingTable& table, int dims = 2);

// CSV "person_id,label,x,y".
void write_projection_csv(const std::filesystem::path& path, const EmbeddingTable& table, const Projection& proj);

}  // namespace lifestream
