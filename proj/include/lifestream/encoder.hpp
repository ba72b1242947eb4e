#pragma once

// Event encoder + GRU sequence encoder.
//
// Events are embedded per field (table lookup for categoricals, batch
// normalization for numericals) and concatenated. A GRU folds the event
// vectors from a zero state; the raw final state h_T is kept for
// incremental updates and its L2-normalized view is the published
// embedding.
//
// GRU convention (fixed here so independent reimplementations agree):
//   u  = sigmoid(z W_z + h U_z + b_z)
//   r  = sigmoid(z W_r + h U_r + b_r)
//   h~ = tanh(z W_h + (r * h) U_h + b_h)
//   h' = (1 - u) * h + u * h~

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lifestream/errors.hpp"
#include "lifestream/ingest.hpp"
#include "lifestream/ndgrad.hpp"

namespace lifestream {

struct EncoderConfig {
  // Per-field overrides; fields not listed use default_embedding_width().
  std::map<std::string, int> embedding_widths;
  int hidden_size = 256;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  // Longer sequences keep their most recent max_seq_len events.
  int max_seq_len = 1000;

  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

// min(ceil(cardinality / 2), 16)
int default_embedding_width(std::int64_t cardinality);

template <typename S>
struct EncoderParams {
  EncoderConfig config;
  std::vector<std::string> categorical_names;
  std::vector<std::string> numerical_names;
  std::vector<nd::Array<S>> embeddings;  // [cardinality x width] per categorical field
  std::vector<nd::BatchNormState<S>> norms;  // per numerical field
  nd::Array<S> W_z, W_r, W_h;  // [input_width x d]
  nd::Array<S> U_z, U_r, U_h;  // [d x d]
  nd::Array<S> b_z, b_r, b_h;  // [1 x d]

  nd::Index hidden_size() const { return U_z.rows(); }
  nd::Index input_width() const { return W_z.rows(); }

  // Learnable tensors in a fixed order with stable names.
  std::vector<std::pair<std::string, nd::Array<S>*>> trainable() {
    std::vector<std::pair<std::string, nd::Array<S>*>> out;
    for (std::size_t i = 0; i < embeddings.size(); ++i) out.emplace_back("embedding/" + categorical_names[i], &embeddings[i]);
    out.emplace_back("gru/W_z", &W_z);
    out.emplace_back("gru/W_r", &W_r);
    out.emplace_back("gru/W_h", &W_h);
    out.emplace_back("gru/U_z", &U_z);
    out.emplace_back("gru/U_r", &U_r);
    out.emplace_back("gru/U_h", &U_h);
    out.emplace_back("gru/b_z", &b_z);
    out.emplace_back("gru/b_r", &b_r);
    out.emplace_back("gru/b_h", &b_h);
    return out;
  }

  template <typename T>
  EncoderParams<T> cast() const {
    EncoderParams<T> out;
    out.config = config;
    out.categorical_names = categorical_names;
    out.numerical_names = numerical_names;
    for (const auto& e : embeddings) out.embeddings.push_back(e.template cast<T>());
    for (const auto& n : norms) out.norms.push_back({static_cast<T>(n.running_mean), static_cast<T>(n.running_var)});
    out.W_z = W_z.template cast<T>();
    out.W_r = W_r.template cast<T>();
    out.W_h = W_h.template cast<T>();
    out.U_z = U_z.template cast<T>();
    out.U_r = U_r.template cast<T>();
    out.U_h = U_h.template cast<T>();
    out.b_z = b_z.template cast<T>();
    out.b_r = b_r.template cast<T>();
    out.b_h = b_h.template cast<T>();
    return out;
  }
};

// Matrices uniform in +-sqrt(1/fan_in), biases zero, embedding tables
// uniform in +-0.1. Batch-norm running statistics start from the
// vocabulary's training statistics.
template <typename S>
EncoderParams<S> init_encoder(const Vocabulary& vocab, const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderParams<S> p;
  p.config = config;
  p.categorical_names = vocab.categorical_names();
  p.numerical_names = vocab.numerical_names();
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](nd::Index r, nd::Index c, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    nd::Array<S> a(r, c);
    for (nd::Index i = 0; i < a.size(); ++i) a.data()[i] = static_cast<S>(dist(rng));
    return a;
  };
  nd::Index input_width = 0;
  for (std::size_t f = 0; f < vocab.categorical_count(); ++f) {
    const std::int64_t card = vocab.cardinality(f);
    auto it = config.embedding_widths.find(p.categorical_names[f]);
    const int width = it != config.embedding_widths.end() ? it->second : default_embedding_width(card);
    p.embeddings.push_back(uniform(card, width, 0.1));
    input_width += width;
  }
  for (std::size_t f = 0; f < vocab.numerical_count(); ++f) {
    const auto& st = vocab.stats(f);
    p.norms.push_back({static_cast<S>(st.mean), static_cast<S>(st.var)});
    input_width += 1;
  }
  const nd::Index d = config.hidden_size;
  const double in_bound = std::sqrt(1.0 / static_cast<double>(input_width));
  const double h_bound = std::sqrt(1.0 / static_cast<double>(d));
  p.W_z = uniform(input_width, d, in_bound);
  p.W_r = uniform(input_width, d, in_bound);
  p.W_h = uniform(input_width, d, in_bound);
  p.U_z = uniform(d, d, h_bound);
  p.U_r = uniform(d, d, h_bound);
  p.U_h = uniform(d, d, h_bound);
  p.b_z = nd::Array<S>::Zero(1, d);
  p.b_r = nd::Array<S>::Zero(1, d);
  p.b_h = nd::Array<S>::Zero(1, d);
  return p;
}

// Parameters placed on a graph as leaves.
template <typename S>
struct EncoderVars {
  std::vector<nd::Var<S>> embeddings;
  nd::Var<S> W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h;

  // Same order as EncoderParams::trainable().
  std::vector<nd::Var<S>> trainable() const {
    std::vector<nd::Var<S>> out = embeddings;
    for (const auto& v : {W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h}) out.push_back(v);
    return out;
  }
};

template <typename S>
EncoderVars<S> bind(nd::Graph<S>& g, const EncoderParams<S>& p, bool requires_grad) {
  EncoderVars<S> v;
  for (const auto& e : p.embeddings) v.embeddings.push_back(g.leaf(e, requires_grad));
  v.W_z = g.leaf(p.W_z, requires_grad);
  v.W_r = g.leaf(p.W_r, requires_grad);
  v.W_h = g.leaf(p.W_h, requires_grad);
  v.U_z = g.leaf(p.U_z, requires_grad);
  v.U_r = g.leaf(p.U_r, requires_grad);
  v.U_h = g.leaf(p.U_h, requires_grad);
  v.b_z = g.leaf(p.b_z, requires_grad);
  v.b_r = g.leaf(p.b_r, requires_grad);
  v.b_h = g.leaf(p.b_h, requires_grad);
  return v;
}

// z_t = e(x_t) for a batch of event rows: [rows x input_width]. Columns are
// the categorical embeddings followed by the normalized numericals, in
// vocabulary field order. Train mode updates `norms`.
template <typename S>
nd::Var<S> encode_events(nd::Graph<S>& g, const EncoderVars<S>& vars, std::span<nd::BatchNormState<S>> norms,
                         const EncoderConfig& config, std::span<const Event* const> events, nd::Mode mode) {
  const std::size_t n_cat = vars.embeddings.size();
  const std::size_t n_num = norms.size();
  std::vector<nd::Var<S>> parts;
  parts.reserve(n_cat + n_num);
  std::vector<nd::Index> idx(events.size());
  for (std::size_t f = 0; f < n_cat; ++f) {
    for (std::size_t r = 0; r < events.size(); ++r) {
      if (events[r]->categoricals.size() != n_cat) throw ShapeError("encode_events: categorical field count mismatch");
      idx[r] = events[r]->categoricals[f];
    }
    parts.push_back(nd::gather_rows(vars.embeddings[f], std::span<const nd::Index>(idx)));
  }
  const S eps = static_cast<S>(config.bn_eps);
  const S momentum = static_cast<S>(config.bn_momentum);
  for (std::size_t f = 0; f < n_num; ++f) {
    nd::Array<S> col(static_cast<nd::Index>(events.size()), 1);
    for (std::size_t r = 0; r < events.size(); ++r) {
      if (events[r]->numericals.size() != n_num) throw ShapeError("encode_events: numerical field count mismatch");
      col(static_cast<nd::Index>(r), 0) = static_cast<S>(events[r]->numericals[f]);
    }
    parts.push_back(nd::batch_norm(g.constant(std::move(col)), norms[f], mode, eps, momentum));
  }
  return nd::concat_cols(std::span<const nd::Var<S>>(parts));
}

// One GRU step from precomputed input projections xz = z W_z etc.
template <typename S>
nd::Var<S> gru_step(const nd::Var<S>& h, const nd::Var<S>& xz, const nd::Var<S>& xr, const nd::Var<S>& xh,
                    const EncoderVars<S>& v) {
  using namespace nd;
  Var<S> u = sigmoid(add_row(add(xz, matmul(h, v.U_z)), v.b_z));
  Var<S> r = sigmoid(add_row(add(xr, matmul(h, v.U_r)), v.b_r));
  Var<S> cand = nd::tanh(add_row(add(xh, matmul(mul_elem(r, h), v.U_h)), v.b_h));
  return add(mul_elem(one_minus(u), h), mul_elem(u, cand));
}

template <typename S>
nd::Var<S> gru_cell(const nd::Var<S>& h, const nd::Var<S>& z, const EncoderVars<S>& v) {
  if (h.cols() != v.U_z.rows()) throw ShapeError("gru_cell: state width does not match hidden size");
  if (z.cols() != v.W_z.rows()) throw ShapeError("gru_cell: input width does not match parameters");
  if (h.rows() != z.rows()) throw ShapeError("gru_cell: state and input row counts differ");
  return gru_step(h, nd::matmul(z, v.W_z), nd::matmul(z, v.W_r), nd::matmul(z, v.W_h), v);
}

// Folds every sequence through the GRU in lockstep and returns the raw
// final states [n x d]. Shorter sequences are padded; once a sequence ends
// its row is carried through unchanged. `initial` (optional, [n x d])
// replaces the zero start state. max_len > 0 keeps only the most recent
// max_len events of each sequence.
template <typename S>
nd::Var<S> encode_batch(nd::Graph<S>& g, const EncoderVars<S>& vars, std::span<nd::BatchNormState<S>> norms,
                        const EncoderConfig& config, std::span<const EventSequence* const> seqs, nd::Mode mode,
                        int max_len, const nd::Array<S>* initial = nullptr) {
  using namespace nd;
  const auto n = static_cast<Index>(seqs.size());
  const Index d = vars.U_z.rows();
  if (n == 0) throw InputError("encode_batch: no sequences");
  std::vector<const Event*> rows;
  std::vector<Index> offset(seqs.size()), length(seqs.size());
  Index longest = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& ev = seqs[i]->events;
    if (ev.empty()) throw InputError("encode: sequence of person \"" + seqs[i]->person_id + "\" is empty");
    std::size_t first = 0;
    if (max_len > 0 && ev.size() > static_cast<std::size_t>(max_len)) first = ev.size() - static_cast<std::size_t>(max_len);
    offset[i] = static_cast<Index>(rows.size());
    length[i] = static_cast<Index>(ev.size() - first);
    longest = std::max(longest, length[i]);
    for (std::size_t e = first; e < ev.size(); ++e) rows.push_back(&ev[e]);
  }
  Var<S> z = encode_events(g, vars, norms, config, std::span<const Event* const>(rows), mode);
  Var<S> xz = matmul(z, vars.W_z);
  Var<S> xr = matmul(z, vars.W_r);
  Var<S> xh = matmul(z, vars.W_h);

  Var<S> h;
  if (initial != nullptr) {
    if (initial->rows() != n || initial->cols() != d) throw ShapeError("encode_batch: initial state has wrong shape");
    h = g.constant(*initial);
  } else {
    h = g.constant(Array<S>::Zero(n, d));
  }
  std::vector<Index> at(seqs.size());
  std::vector<char> active(seqs.size());
  for (Index t = 0; t < longest; ++t) {
    bool all_active = true;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      active[i] = t < length[i];
      all_active = all_active && active[i];
      at[i] = offset[i] + std::min(t, length[i] - 1);
    }
    const std::span<const Index> pick_rows(at);
    Var<S> next = gru_step(h, gather_rows(xz, pick_rows), gather_rows(xr, pick_rows), gather_rows(xh, pick_rows), vars);
    h = all_active ? next : blend_rows(next, h, std::span<const char>(active));
  }
  return h;
}

template <typename S>
struct SequenceEmbedding {
  nd::Array<S> embedding;  // [1 x d], unit norm
  nd::Array<S> state;      // [1 x d], raw h_T
};

template <typename S>
nd::Array<S> normalize_rows(const nd::Array<S>& x, S eps = S(1e-12)) {
  nd::Array<S> out(x.rows(), x.cols());
  for (nd::Index i = 0; i < x.rows(); ++i) out.row(i) = x.row(i) / std::max(x.row(i).norm(), eps);
  return out;
}

// Infer-mode encoding of one sequence.
template <typename S>
SequenceEmbedding<S> encode_sequence(const EventSequence& seq, const EncoderParams<S>& params) {
  nd::Graph<S> g;
  std::vector<nd::BatchNormState<S>> norms = params.norms;
  const EncoderVars<S> vars = bind(g, params, false);
  const EventSequence* one[] = {&seq};
  nd::Var<S> h = encode_batch(g, vars, std::span<nd::BatchNormState<S>>(norms), params.config,
                              std::span<const EventSequence* const>(one), nd::Mode::infer, params.config.max_seq_len);
  return {normalize_rows(h.value()), h.value()};
}

// Continues the fold from a stored raw state over `new_events`.
template <typename S>
SequenceEmbedding<S> incremental_update(const nd::Array<S>& state, std::span<const Event> new_events,
                                        const EncoderParams<S>& params) {
  if (state.rows() != 1 || state.cols() != params.hidden_size()) {
    throw ShapeError("incremental_update: state is " + std::to_string(state.rows()) + "x" +
                     std::to_string(state.cols()) + ", encoder expects 1x" + std::to_string(params.hidden_size()));
  }
  if (new_events.empty()) return {normalize_rows(state), state};
  EventSequence tail{"", std::vector<Event>(new_events.begin(), new_events.end()), std::nullopt};
  nd::Graph<S> g;
  std::vector<nd::BatchNormState<S>> norms = params.norms;
  const EncoderVars<S> vars = bind(g, params, false);
  const EventSequence* one[] = {&tail};
  nd::Var<S> h = encode_batch(g, vars, std::span<nd::BatchNormState<S>>(norms), params.config,
                              std::span<const EventSequence* const>(one), nd::Mode::infer, 0, &state);
  return {normalize_rows(h.value()), h.value()};
}

}  // namespace lifestream
