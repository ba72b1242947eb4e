#pragma once

// Pairwise distances on the unit sphere, negative-pair mining and the
// metric-learning losses.
//
// Pair label convention follows the losses: positives (same person, Y = 0)
// and negatives (different persons, Y = 1) are kept in separate lists of
// unordered index pairs (i < j).

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lifestream/errors.hpp"
#include "lifestream/ndgrad.hpp"
#include "lifestream/pairing.hpp"

namespace lifestream {

using IndexPair = std::pair<nd::Index, nd::Index>;

enum class LossKind { contrastive, margin, triplet };
enum class NegativeStrategy { random, hard, distance_weighted, semi_hard };
enum class Reduction { sum, mean };

std::string to_string(LossKind k);
std::string to_string(NegativeStrategy s);
std::string to_string(Reduction r);
LossKind parse_loss_kind(const std::string& name);
NegativeStrategy parse_negative_strategy(const std::string& name);
Reduction parse_reduction(const std::string& name);

struct LossConfig {
  LossKind loss = LossKind::contrastive;
  double contrastive_margin = 0.5;  // m of the contrastive loss
  double margin_b = 1.0;            // b of the margin loss
  double margin_m = 0.25;           // m of the margin loss
  double triplet_alpha = 0.3;
  Reduction reduction = Reduction::mean;

  void validate() const;
};

struct NegSamplingConfig {
  NegativeStrategy strategy = NegativeStrategy::hard;
  int neg_count = 5;

  void validate() const;
};

struct PairSelection {
  std::vector<IndexPair> positives;
  std::vector<IndexPair> negatives;
};

struct Triplet {
  nd::Index anchor;
  nd::Index positive;
  nd::Index negative;
  bool operator==(const Triplet&) const = default;
};

// D(i, j) = sqrt(2 - 2 <e_i, e_j>) for unit-norm rows, via one Gram matrix.
template <typename S>
nd::Var<S> distance_matrix(const nd::Var<S>& embeddings, S eps = S(1e-12)) {
  return nd::sphere_distance(nd::matmul(embeddings, nd::transpose(embeddings)), eps);
}

// All unordered same-label pairs as positives, cross-label pairs as
// negatives. SelectionError when fewer than two distinct labels exist.
PairSelection label_pairs(std::span<const int> labels);

namespace detail {

// Negative candidates of every index, ascending.
inline std::vector<std::vector<nd::Index>> negative_lists(const PairSelection& sel, nd::Index n) {
  std::vector<std::vector<nd::Index>> out(static_cast<std::size_t>(n));
  for (const auto& [i, j] : sel.negatives) {
    out[static_cast<std::size_t>(i)].push_back(j);
    out[static_cast<std::size_t>(j)].push_back(i);
  }
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

// Collects unordered pairs once, in first-seen order.
class PairSet {
 public:
  void add(nd::Index a, nd::Index b) {
    const IndexPair p{std::min(a, b), std::max(a, b)};
    if (seen_.emplace(p, true).second) pairs_.push_back(p);
  }
  std::vector<IndexPair> take() { return std::move(pairs_); }

 private:
  std::map<IndexPair, bool> seen_;
  std::vector<IndexPair> pairs_;
};

// Sampling weight of the distance-weighted strategy: the inverse density
// of pairwise distances between points uniform on the unit sphere in
// `dim` dimensions, clamped to [1e-8, 1e8]. Evaluated in log space.
inline double inverse_sphere_density(double d, double dim) {
  const double dd = std::clamp(d, 1e-6, 2.0 - 1e-6);
  const double log_q = (dim - 2.0) * std::log(dd) + 0.5 * (dim - 3.0) * std::log(1.0 - 0.25 * dd * dd);
  return std::clamp(std::exp(std::clamp(-log_q, -700.0, 700.0)), 1e-8, 1e8);
}

}  // namespace detail

// Filters selection.negatives with the configured strategy and keeps the
// positives. `embedding_dim` is only used by distance_weighted.
//   random            per anchor, neg_count candidates uniformly without replacement
//   hard              per anchor, the neg_count closest candidates (ties: lower index)
//   semi_hard         per ordered positive (a, p), the closest candidate farther than
//                     d(a, p); the farthest one when none is (ties: lower index)
//   distance_weighted per anchor, neg_count candidates without replacement with
//                     probability proportional to the clamped inverse density
template <typename S>
PairSelection select_negatives(const nd::Array<S>& D, const PairSelection& selection, const NegSamplingConfig& cfg,
                               Rng& rng, nd::Index embedding_dim = 0) {
  cfg.validate();
  const nd::Index n = D.rows();
  if (D.cols() != n) throw ShapeError("select_negatives: distance matrix must be square");
  for (const auto& pairs : {selection.positives, selection.negatives}) {
    for (const auto& [i, j] : pairs) {
      if (i < 0 || j < 0 || i >= n || j >= n) throw BoundsError("select_negatives: pair index outside the batch");
    }
  }
  if (selection.negatives.empty()) throw SelectionError("select_negatives: no negative pairs available");
  const auto candidates = detail::negative_lists(selection, n);
  const auto count = static_cast<std::size_t>(cfg.neg_count);
  detail::PairSet chosen;

  auto closer = [&D](nd::Index a) {
    return [&D, a](nd::Index x, nd::Index y) { return D(a, x) < D(a, y) || (D(a, x) == D(a, y) && x < y); };
  };

  switch (cfg.strategy) {
    case NegativeStrategy::hard: {
      for (nd::Index a = 0; a < n; ++a) {
        std::vector<nd::Index> c = candidates[static_cast<std::size_t>(a)];
        const std::size_t keep = std::min(count, c.size());
        std::partial_sort(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(keep), c.end(), closer(a));
        for (std::size_t i = 0; i < keep; ++i) chosen.add(a, c[i]);
      }
      break;
    }
    case NegativeStrategy::random: {
      for (nd::Index a = 0; a < n; ++a) {
        std::vector<nd::Index> c = candidates[static_cast<std::size_t>(a)];
        const std::size_t keep = std::min(count, c.size());
        for (std::size_t i = 0; i < keep; ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, c.size() - 1);
          std::swap(c[i], c[pick(rng)]);
          chosen.add(a, c[i]);
        }
      }
      break;
    }
    case NegativeStrategy::distance_weighted: {
      if (embedding_dim < 1) throw SelectionError("distance_weighted sampling needs the embedding dimension");
      for (nd::Index a = 0; a < n; ++a) {
        std::vector<nd::Index> c = candidates[static_cast<std::size_t>(a)];
        std::vector<double> w;
        w.reserve(c.size());
        for (nd::Index j : c) {
          w.push_back(detail::inverse_sphere_density(static_cast<double>(D(a, j)), static_cast<double>(embedding_dim)));
        }
        const std::size_t keep = std::min(count, c.size());
        for (std::size_t i = 0; i < keep; ++i) {
          std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
          const std::size_t at = pick(rng);
          chosen.add(a, c[at]);
          w[at] = 0.0;
        }
      }
      break;
    }
    case NegativeStrategy::semi_hard: {
      for (const auto& [i, j] : selection.positives) {
        for (const auto& [a, p] : {IndexPair{i, j}, IndexPair{j, i}}) {
          const auto& c = candidates[static_cast<std::size_t>(a)];
          if (c.empty()) continue;
          const S dap = D(a, p);
          nd::Index best = -1;
          for (nd::Index x : c) {
            if (D(a, x) > dap && (best < 0 || D(a, x) < D(a, best))) best = x;
          }
          if (best < 0) {
            for (nd::Index x : c) {
              if (best < 0 || D(a, x) > D(a, best)) best = x;
            }
          }
          chosen.add(a, best);
        }
      }
      break;
    }
  }
  PairSelection out{selection.positives, chosen.take()};
  if (out.negatives.empty()) throw SelectionError("select_negatives: strategy selected no negatives");
  return out;
}

// Each ordered positive (a, p) crossed with every selected negative that
// touches a.
std::vector<Triplet> make_triplets(const PairSelection& selection);

namespace detail {

template <typename S>
nd::Var<S> reduce(const nd::Var<S>& total, std::size_t count, Reduction r) {
  return r == Reduction::mean ? nd::scale(total, S(1) / static_cast<S>(count)) : total;
}

template <typename S>
nd::Var<S> pick_pairs(const nd::Var<S>& D, const std::vector<IndexPair>& pairs) {
  return nd::pick(D, std::span<const IndexPair>(pairs));
}

}  // namespace detail

// Positive pairs contribute D^2 / 2, negative pairs max(0, m - D)^2 / 2.
template <typename S>
nd::Var<S> contrastive_loss(const nd::Var<S>& D, const PairSelection& sel, S margin, Reduction reduction) {
  using namespace nd;
  const std::size_t count = sel.positives.size() + sel.negatives.size();
  if (count == 0) throw LossError("contrastive_loss: empty pair selection");
  Var<S> pos = square(lifestream::detail::pick_pairs(D, sel.positives));
  Var<S> neg = square(relu(add_scalar(scale(lifestream::detail::pick_pairs(D, sel.negatives), S(-1)), margin)));
  Var<S> total = scale(add(sum(pos), sum(neg)), S(0.5));
  return lifestream::detail::reduce(total, count, reduction);
}

// Positive pairs contribute max(0, D - b + m), negative pairs
// max(0, b - D + m).
template <typename S>
nd::Var<S> margin_loss(const nd::Var<S>& D, const PairSelection& sel, S b, S m, Reduction reduction) {
  using namespace nd;
  const std::size_t count = sel.positives.size() + sel.negatives.size();
  if (count == 0) throw LossError("margin_loss: empty pair selection");
  Var<S> pos = relu(add_scalar(lifestream::detail::pick_pairs(D, sel.positives), m - b));
  Var<S> neg = relu(add_scalar(scale(lifestream::detail::pick_pairs(D, sel.negatives), S(-1)), b + m));
  return lifestream::detail::reduce(add(sum(pos), sum(neg)), count, reduction);
}

// max(0, d(a, p) - d(a, n) + alpha) per triplet.
template <typename S>
nd::Var<S> triplet_loss(const nd::Var<S>& D, std::span<const Triplet> triplets, S alpha, Reduction reduction) {
  using namespace nd;
  if (triplets.empty()) throw LossError("triplet_loss: no triplets");
  std::vector<IndexPair> ap, an;
  ap.reserve(triplets.size());
  an.reserve(triplets.size());
  for (const Triplet& t : triplets) {
    ap.emplace_back(t.anchor, t.positive);
    an.emplace_back(t.anchor, t.negative);
  }
  Var<S> hinge = relu(add_scalar(sub(lifestream::detail::pick_pairs(D, ap), lifestream::detail::pick_pairs(D, an)), alpha));
  return lifestream::detail::reduce(sum(hinge), triplets.size(), reduction);
}

// Dispatches on cfg.loss. For triplet loss the triplets are built from
// `sel` with make_triplets().
template <typename S>
nd::Var<S> metric_loss(const nd::Var<S>& D, const PairSelection& sel, const LossConfig& cfg) {
  switch (cfg.loss) {
    case LossKind::contrastive:
      return contrastive_loss(D, sel, static_cast<S>(cfg.contrastive_margin), cfg.reduction);
    case LossKind::margin:
      return margin_loss(D, sel, static_cast<S>(cfg.margin_b), static_cast<S>(cfg.margin_m), cfg.reduction);
    case LossKind::triplet: {
      const std::vector<Triplet> t = make_triplets(sel);
      return triplet_loss(D, std::span<const Triplet>(t), static_cast<S>(cfg.triplet_alpha), cfg.reduction);
    }
  }
  throw ConfigError("unknown loss");
}

}  // namespace lifestream
