#include "lifestream/metric.hpp"

#include <set>

namespace lifestream {

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::contrastive:
      return "contrastive";
    case LossKind::margin:
      return "margin";
    case LossKind::triplet:
      return "triplet";
  }
  return "?";
}

std::string to_string(NegativeStrategy s) {
  switch (s) {
    case NegativeStrategy::random:
      return "random";
    case NegativeStrategy::hard:
      return "hard";
    case NegativeStrategy::distance_weighted:
      return "distance_weighted";
    case NegativeStrategy::semi_hard:
      return "semi_hard";
  }
  return "?";
}

std::string to_string(Reduction r) { return r == Reduction::sum ? "sum" : "mean"; }

LossKind parse_loss_kind(const std::string& name) {
  if (name == "contrastive") return LossKind::contrastive;
  if (name == "margin") return LossKind::margin;
  if (name == "triplet") return LossKind::triplet;
  throw ConfigError("unknown loss \"" + name + "\" (contrastive|margin|triplet)");
}

NegativeStrategy parse_negative_strategy(const std::string& name) {
  if (name == "random") return NegativeStrategy::random;
  if (name == "hard") return NegativeStrategy::hard;
  if (name == "distance_weighted") return NegativeStrategy::distance_weighted;
  if (name == "semi_hard") return NegativeStrategy::semi_hard;
  throw ConfigError("unknown negative strategy \"" + name + "\" (random|hard|distance_weighted|semi_hard)");
}

Reduction parse_reduction(const std::string& name) {
  if (name == "sum") return Reduction::sum;
  if (name == "mean") return Reduction::mean;
  throw ConfigError("unknown reduction \"" + name + "\" (sum|mean)");
}

void LossConfig::validate() const {
  if (!(contrastive_margin > 0)) throw ConfigError("metric: contrastive_margin must be > 0");
  if (!(margin_b > 0) || !(margin_m > 0)) throw ConfigError("metric: margin_b and margin_m must be > 0");
  if (!(triplet_alpha > 0)) throw ConfigError("metric: triplet_alpha must be > 0");
}

void NegSamplingConfig::validate() const {
  if (neg_count < 1) throw ConfigError("metric: neg_count must be >= 1");
}

PairSelection label_pairs(std::span<const int> labels) {
  const auto n = static_cast<nd::Index>(labels.size());
  if (n < 2) throw SelectionError("label_pairs: need at least 2 samples");
  if (std::set<int>(labels.begin(), labels.end()).size() < 2) {
    throw SelectionError("label_pairs: all samples share one label, no negative pairs exist");
  }
  PairSelection sel;
  for (nd::Index i = 0; i < n; ++i) {
    for (nd::Index j = i + 1; j < n; ++j) {
      auto& dst = labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)] ? sel.positives : sel.negatives;
      dst.emplace_back(i, j);
    }
  }
  return sel;
}

std::vector<Triplet> make_triplets(const PairSelection& selection) {
  nd::Index n = 0;
  for (const auto& pairs : {selection.positives, selection.negatives}) {
    for (const auto& [i, j] : pairs) n = std::max({n, i + 1, j + 1});
  }
  const auto negs = detail::negative_lists(selection, n);
  std::vector<Triplet> out;
  for (const auto& [i, j] : selection.positives) {
    for (const auto& [a, p] : {IndexPair{i, j}, IndexPair{j, i}}) {
      for (nd::Index x : negs[static_cast<std::size_t>(a)]) out.push_back({a, p, x});
    }
  }
  return out;
}

}  // namespace lifestream
