#pragma once

// Dense reverse-mode differentiation over Eigen matrices.
//
// A Graph is a tape: every operation appends a node holding its forward
// value and a backward rule. Because parents are always recorded before
// their children, reverse tape order is a valid topological order, so
// backward() is a single sweep that visits each reachable node once.
//
// Everything is templated on the scalar type. Production code uses float;
// the gradient-check tests instantiate double.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lifestream/errors.hpp"

namespace lifestream::nd {

using Index = Eigen::Index;

template <typename S>
using Array = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Mode { train, infer };

template <typename S>
class Graph;

// Lightweight handle to a node on a Graph. Copyable; does not own anything.
template <typename S>
class Var {
 public:
  Var() = default;
  Var(Graph<S>* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Array<S>& value() const { return graph_->value(id_); }
  const Array<S>& grad() const { return graph_->grad(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Graph<S>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph<S>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename S>
class Graph {
 public:
  // Called with the node's accumulated output gradient.
  using BackwardFn = std::function<void(Graph&, const Array<S>&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<S> leaf(Array<S> value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, true, {}, {}});
    return Var<S>(this, nodes_.size() - 1);
  }

  Var<S> constant(Array<S> value) { return leaf(std::move(value), false); }

  // Appends an interior node. `fn` is dropped when no parent needs a
  // gradient, which turns the node into a constant.
  Var<S> record(Array<S> value, std::vector<std::size_t> parents, BackwardFn fn) {
    bool needs = false;
    for (std::size_t p : parents) needs = needs || nodes_[p].requires_grad;
    if (!needs) {
      fn = nullptr;
      parents.clear();
    }
    nodes_.push_back(Node{std::move(value), {}, needs, false, std::move(fn), std::move(parents)});
    return Var<S>(this, nodes_.size() - 1);
  }

  const Array<S>& value(std::size_t id) const { return nodes_[id].value; }

  // Gradient of a node; zero-shaped like the value if nothing was
  // accumulated yet.
  const Array<S>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Array<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Adds `delta` into the gradient of node `id` (no-op for constants).
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& delta) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = delta;
    } else {
      n.grad += delta;
    }
  }

  // Mutable gradient buffer, allocated to zeros on first use. For
  // scatter-style backward rules.
  Array<S>* grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() == 0) n.grad = Array<S>::Zero(n.value.rows(), n.value.cols());
    return &n.grad;
  }

  // Propagates d(loss)/d(node) to every node reachable from `loss`.
  // Interior gradients are recomputed from scratch on each call; leaf
  // gradients accumulate across calls until zero_grad().
  void backward(const Var<S>& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw ContractError("backward: loss must be a 1x1 scalar, got " + std::to_string(loss.rows()) +
                          "x" + std::to_string(loss.cols()));
    }
    const std::size_t top = loss.id();
    std::vector<char> reachable(top + 1, 0);
    reachable[top] = 1;
    for (std::size_t i = top + 1; i-- > 0;) {
      if (!reachable[i]) continue;
      Node& n = nodes_[i];
      if (!n.leaf) n.grad.resize(0, 0);
      for (std::size_t p : n.parents) reachable[p] = 1;
    }
    accumulate(top, Array<S>::Ones(1, 1));
    for (std::size_t i = top + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!reachable[i] || n.leaf || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad.resize(0, 0);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Array<S> value;
    Array<S> grad;
    bool requires_grad = false;
    bool leaf = true;
    BackwardFn backward;
    std::vector<std::size_t> parents;
  };
  std::deque<Node> nodes_;
};

namespace detail {

template <typename S>
void require_same_shape(const char* op, const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

template <typename S>
Graph<S>& same_graph(const Var<S>& a, const Var<S>& b) {
  if (&a.graph() != &b.graph()) throw ContractError("operands live on different graphs");
  return a.graph();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  Graph<S>& g = detail::same_graph(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " differ");
  }
  Array<S> out = a.value() * b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph<S>& gr, const Array<S>& go) {
    if (gr.requires_grad(ia)) gr.accumulate(ia, go * gr.value(ib).transpose());
    if (gr.requires_grad(ib)) gr.accumulate(ib, gr.value(ia).transpose() * go);
  });
}

template <typename S>
Var<S> transpose(const Var<S>& a) {
  Array<S> out = a.value().transpose();
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia](Graph<S>& gr, const Array<S>& go) { gr.accumulate(ia, go.transpose()); });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  Graph<S>& g = detail::same_graph(a, b);
  detail::require_same_shape("add", a, b);
  Array<S> out = a.value() + b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph<S>& gr, const Array<S>& go) {
    gr.accumulate(ia, go);
    gr.accumulate(ib, go);
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  Graph<S>& g = detail::same_graph(a, b);
  detail::require_same_shape("sub", a, b);
  Array<S> out = a.value() - b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph<S>& gr, const Array<S>& go) {
    gr.accumulate(ia, go);
    gr.accumulate(ib, -go);
  });
}

// Adds a [1 x n] row vector to every row of `a`. The only broadcast the
// module supports.
template <typename S>
Var<S> add_row(const Var<S>& a, const Var<S>& bias) {
  Graph<S>& g = detail::same_graph(a, bias);
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_row: bias must be 1x" + std::to_string(a.cols()));
  }
  Array<S> out = a.value().rowwise() + bias.value().row(0);
  const std::size_t ia = a.id(), ib = bias.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph<S>& gr, const Array<S>& go) {
    gr.accumulate(ia, go);
    gr.accumulate(ib, go.colwise().sum());
  });
}

template <typename S>
Var<S> mul_elem(const Var<S>& a, const Var<S>& b) {
  Graph<S>& g = detail::same_graph(a, b);
  detail::require_same_shape("mul_elem", a, b);
  Array<S> out = a.value().cwiseProduct(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph<S>& gr, const Array<S>& go) {
    if (gr.requires_grad(ia)) gr.accumulate(ia, go.cwiseProduct(gr.value(ib)));
    if (gr.requires_grad(ib)) gr.accumulate(ib, go.cwiseProduct(gr.value(ia)));
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Array<S> out = a.value() * factor;
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia},
                          [ia, factor](Graph<S>& gr, const Array<S>& go) { gr.accumulate(ia, go * factor); });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S offset) {
  Array<S> out = a.value().array() + offset;
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia}, [ia](Graph<S>& gr, const Array<S>& go) { gr.accumulate(ia, go); });
}

template <typename S>
Var<S> one_minus(const Var<S>& a) {
  Array<S> out = (S(1) - a.value().array()).matrix();
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia}, [ia](Graph<S>& gr, const Array<S>& go) { gr.accumulate(ia, -go); });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  Array<S> out = a.value().unaryExpr([](S x) {
    // Split by sign so exp never overflows.
    if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
  });
  const std::size_t ia = a.id();
  Graph<S>& g = a.graph();
  const std::size_t self = g.size();
  return g.record(std::move(out), {ia}, [ia, self](Graph<S>& gr, const Array<S>& go) {
    const auto& s = gr.value(self).array();
    gr.accumulate(ia, (go.array() * s * (S(1) - s)).matrix());
  });
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
  Array<S> out = a.value().array().tanh().matrix();
  const std::size_t ia = a.id();
  Graph<S>& g = a.graph();
  const std::size_t self = g.size();
  return g.record(std::move(out), {ia}, [ia, self](Graph<S>& gr, const Array<S>& go) {
    const auto& t = gr.value(self).array();
    gr.accumulate(ia, (go.array() * (S(1) - t * t)).matrix());
  });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  Array<S> out = a.value().cwiseMax(S(0));
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia}, [ia](Graph<S>& gr, const Array<S>& go) {
    Array<S> d = go;
    const Array<S>& x = gr.value(ia);
    for (Index k = 0; k < d.size(); ++k) {
      if (!(x.data()[k] > S(0))) d.data()[k] = S(0);
    }
    gr.accumulate(ia, d);
  });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  Array<S> out = a.value().cwiseAbs2();
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia}, [ia](Graph<S>& gr, const Array<S>& go) {
    gr.accumulate(ia, S(2) * go.cwiseProduct(gr.value(ia)));
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Var<S> sum(const Var<S>& a) {
  Array<S> out(1, 1);
  out(0, 0) = a.value().sum();
  const std::size_t ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return a.graph().record(std::move(out), {ia}, [ia, r, c](Graph<S>& gr, const Array<S>& go) {
    gr.accumulate(ia, Array<S>::Constant(r, c, go(0, 0)));
  });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty input");
  return scale(sum(a), S(1) / static_cast<S>(a.value().size()));
}

// ---------------------------------------------------------------------------
// Structural

template <typename S>
Var<S> concat_cols(std::span<const Var<S>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  Graph<S>& g = parts.front().graph();
  const Index rows = parts.front().rows();
  Index total = 0;
  std::vector<std::size_t> ids;
  std::vector<Index> widths;
  for (const Var<S>& p : parts) {
    if (&p.graph() != &g) throw ContractError("concat_cols: parts live on different graphs");
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + std::to_string(p.rows()) + " vs " + std::to_string(rows));
    }
    ids.push_back(p.id());
    widths.push_back(p.cols());
    total += p.cols();
  }
  Array<S> out(rows, total);
  Index offset = 0;
  for (const Var<S>& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return g.record(std::move(out), ids, [ids, widths](Graph<S>& gr, const Array<S>& go) {
    Index off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      gr.accumulate(ids[i], go.middleCols(off, widths[i]));
      off += widths[i];
    }
  });
}

template <typename S>
Var<S> concat_cols(std::initializer_list<Var<S>> parts) {
  std::vector<Var<S>> v(parts);
  return concat_cols(std::span<const Var<S>>(v));
}

// Row lookup: out[i] = table[indices[i]]. Backward scatter-adds, so
// repeated indices accumulate.
template <typename S>
Var<S> gather_rows(const Var<S>& table, std::span<const Index> indices) {
  const Index vocab = table.rows();
  Array<S> out(static_cast<Index>(indices.size()), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Index k = indices[i];
    if (k < 0 || k >= vocab) {
      throw BoundsError("gather_rows: index " + std::to_string(k) + " outside table of " + std::to_string(vocab) +
                        " rows");
    }
    out.row(static_cast<Index>(i)) = table.value().row(k);
  }
  const std::size_t it = table.id();
  std::vector<Index> idx(indices.begin(), indices.end());
  return table.graph().record(std::move(out), {it}, [it, idx = std::move(idx)](Graph<S>& gr, const Array<S>& go) {
    Array<S>* gt = gr.grad_buffer(it);
    if (gt == nullptr) return;
    for (std::size_t i = 0; i < idx.size(); ++i) gt->row(idx[i]) += go.row(static_cast<Index>(i));
  });
}

// Row-wise select: out[i] = take_first[i] ? a[i] : b[i].
template <typename S>
Var<S> blend_rows(const Var<S>& a, const Var<S>& b, std::span<const char> take_first) {
  Graph<S>& g = detail::same_graph(a, b);
  detail::require_same_shape("blend_rows", a, b);
  if (static_cast<Index>(take_first.size()) != a.rows()) throw ShapeError("blend_rows: mask length mismatch");
  Array<S> out = b.value();
  for (Index i = 0; i < a.rows(); ++i) {
    if (take_first[static_cast<std::size_t>(i)]) out.row(i) = a.value().row(i);
  }
  const std::size_t ia = a.id(), ib = b.id();
  std::vector<char> mask(take_first.begin(), take_first.end());
  return g.record(std::move(out), {ia, ib}, [ia, ib, mask = std::move(mask)](Graph<S>& gr, const Array<S>& go) {
    Array<S>* ga = gr.grad_buffer(ia);
    Array<S>* gb = gr.grad_buffer(ib);
    for (Index i = 0; i < go.rows(); ++i) {
      Array<S>* dst = mask[static_cast<std::size_t>(i)] ? ga : gb;
      if (dst != nullptr) dst->row(i) += go.row(i);
    }
  });
}

// Picks entries a(i, j) into a [P x 1] column.
template <typename S>
Var<S> pick(const Var<S>& a, std::span<const std::pair<Index, Index>> entries) {
  Array<S> out(static_cast<Index>(entries.size()), 1);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto [i, j] = entries[k];
    if (i < 0 || j < 0 || i >= a.rows() || j >= a.cols()) throw BoundsError("pick: entry out of range");
    out(static_cast<Index>(k), 0) = a.value()(i, j);
  }
  const std::size_t ia = a.id();
  std::vector<std::pair<Index, Index>> at(entries.begin(), entries.end());
  return a.graph().record(std::move(out), {ia}, [ia, at = std::move(at)](Graph<S>& gr, const Array<S>& go) {
    Array<S>* ga = gr.grad_buffer(ia);
    if (ga == nullptr) return;
    for (std::size_t k = 0; k < at.size(); ++k) (*ga)(at[k].first, at[k].second) += go(static_cast<Index>(k), 0);
  });
}

// ---------------------------------------------------------------------------
// Normalization

template <typename S>
struct BatchNormState {
  S running_mean = S(0);
  S running_var = S(1);
};

// Normalizes a single column. Train mode uses the batch mean and biased
// variance and folds them into the running statistics (the variance with
// the unbiased m/(m-1) correction). Infer mode uses the running
// statistics. There is no learnable scale or shift.
template <typename S>
Var<S> batch_norm(const Var<S>& x, BatchNormState<S>& state, Mode mode, S eps = S(1e-5), S momentum = S(0.1)) {
  if (x.cols() != 1) throw ShapeError("batch_norm: expects a single column");
  const Index m = x.rows();
  const std::size_t ix = x.id();
  if (mode == Mode::infer) {
    const S inv = S(1) / std::sqrt(state.running_var + eps);
    Array<S> out = ((x.value().array() - state.running_mean) * inv).matrix();
    return x.graph().record(std::move(out), {ix},
                            [ix, inv](Graph<S>& gr, const Array<S>& go) { gr.accumulate(ix, go * inv); });
  }
  if (m < 2) throw BatchError("batch_norm: train mode needs at least 2 rows, got " + std::to_string(m));
  const S mu = x.value().mean();
  const S var = (x.value().array() - mu).square().mean();
  const S inv = S(1) / std::sqrt(var + eps);
  Array<S> out = ((x.value().array() - mu) * inv).matrix();
  state.running_mean = (S(1) - momentum) * state.running_mean + momentum * mu;
  state.running_var = (S(1) - momentum) * state.running_var + momentum * var * static_cast<S>(m) / static_cast<S>(m - 1);
  Graph<S>& g = x.graph();
  const std::size_t self = g.size();
  return g.record(std::move(out), {ix}, [ix, inv, self](Graph<S>& gr, const Array<S>& go) {
    const auto& y = gr.value(self).array();
    const S gmean = go.mean();
    const S gymean = (go.array() * y).mean();
    gr.accumulate(ix, (inv * (go.array() - gmean - y * gymean)).matrix());
  });
}

// Divides each row by max(||row||, eps).
template <typename S>
Var<S> l2_normalize(const Var<S>& x, S eps = S(1e-12)) {
  const Index m = x.rows();
  Eigen::Matrix<S, Eigen::Dynamic, 1> norms = x.value().rowwise().norm();
  Array<S> out(m, x.cols());
  for (Index i = 0; i < m; ++i) out.row(i) = x.value().row(i) / std::max(norms(i), eps);
  const std::size_t ix = x.id();
  Graph<S>& g = x.graph();
  const std::size_t self = g.size();
  return g.record(std::move(out), {ix}, [ix, self, norms, eps](Graph<S>& gr, const Array<S>& go) {
    const Array<S>& y = gr.value(self);
    Array<S> dx(go.rows(), go.cols());
    for (Index i = 0; i < go.rows(); ++i) {
      if (norms(i) > eps) {
        dx.row(i) = (go.row(i) - y.row(i) * y.row(i).dot(go.row(i))) / norms(i);
      } else {
        dx.row(i) = go.row(i) / eps;
      }
    }
    gr.accumulate(ix, dx);
  });
}

// ---------------------------------------------------------------------------
// Task-specific kernels

// Euclidean distance between unit vectors from their Gram matrix:
// D = sqrt(max(2 - 2G, eps)) with the diagonal pinned to zero. The clamp
// region and the diagonal carry no gradient.
template <typename S>
Var<S> sphere_distance(const Var<S>& gram, S eps = S(1e-12)) {
  if (gram.rows() != gram.cols()) throw ShapeError("sphere_distance: Gram matrix must be square");
  const Index n = gram.rows();
  Array<S> out(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      out(i, j) = i == j ? S(0) : std::sqrt(std::max(S(2) - S(2) * gram.value()(i, j), eps));
    }
  }
  const std::size_t ig = gram.id();
  Graph<S>& g = gram.graph();
  const std::size_t self = g.size();
  return g.record(std::move(out), {ig}, [ig, self, eps](Graph<S>& gr, const Array<S>& go) {
    const Array<S>& d = gr.value(self);
    const Array<S>& gv = gr.value(ig);
    Array<S> dg = Array<S>::Zero(go.rows(), go.cols());
    for (Index i = 0; i < go.rows(); ++i) {
      for (Index j = 0; j < go.cols(); ++j) {
        if (i != j && S(2) - S(2) * gv(i, j) > eps) dg(i, j) = -go(i, j) / d(i, j);
      }
    }
    gr.accumulate(ig, dg);
  });
}

// Mean softmax cross-entropy of `logits` [n x C] against integer classes.
template <typename S>
Var<S> softmax_cross_entropy(const Var<S>& logits, std::span<const int> labels) {
  const Index n = logits.rows(), c = logits.cols();
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("softmax_cross_entropy: label count mismatch");
  if (n == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  Array<S> prob(n, c);
  S total = 0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw BoundsError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
    const S mx = logits.value().row(i).maxCoeff();
    auto e = (logits.value().row(i).array() - mx).exp();
    const S z = e.sum();
    prob.row(i) = (e / z).matrix();
    total += -(logits.value()(i, y) - mx - std::log(z));
  }
  Array<S> out(1, 1);
  out(0, 0) = total / static_cast<S>(n);
  const std::size_t il = logits.id();
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.graph().record(std::move(out), {il},
                               [il, prob = std::move(prob), ys = std::move(ys)](Graph<S>& gr, const Array<S>& go) {
                                 Array<S> d = prob;
                                 for (std::size_t i = 0; i < ys.size(); ++i) d(static_cast<Index>(i), ys[i]) -= S(1);
                                 gr.accumulate(il, d * (go(0, 0) / static_cast<S>(ys.size())));
                               });
}

}  // namespace lifestream::nd
