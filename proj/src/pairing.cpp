#include "lifestream/pairing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "lifestream/errors.hpp"

namespace lifestream {

std::string to_string(SubSeqStrategy s) {
  switch (s) {
    case SubSeqStrategy::random_sample:
      return "random_sample";
    case SubSeqStrategy::disjoint:
      return "disjoint";
    case SubSeqStrategy::random_slice:
      return "random_slice";
  }
  return "?";
}

SubSeqStrategy parse_subseq_strategy(const std::string& name) {
  if (name == "random_sample") return SubSeqStrategy::random_sample;
  if (name == "disjoint") return SubSeqStrategy::disjoint;
  if (name == "random_slice") return SubSeqStrategy::random_slice;
  throw ConfigError("unknown sub-sequence strategy \"" + name + "\" (random_sample|disjoint|random_slice)");
}

void SubSeqConfig::validate() const {
  if (k < 2) throw ConfigError("pairing: k must be >= 2");
  if (min_len < 1 || min_len > max_len) throw ConfigError("pairing: need 1 <= min_len <= max_len");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) throw ConfigError("pairing: sample_fraction must be in (0, 1]");
}

std::vector<Selection> partition_by_assignment(std::span<const int> assignment, int k) {
  std::vector<Selection> parts(static_cast<std::size_t>(k));
  for (std::size_t pos = 0; pos < assignment.size(); ++pos) {
    const int part = assignment[pos];
    if (part < 1 || part > k) throw InputError("partition_by_assignment: label outside [1, k]");
    parts[static_cast<std::size_t>(part - 1)].push_back(pos);
  }
  return parts;
}

std::vector<Selection> split_disjoint(std::size_t length, int k, Rng& rng) {
  if (k < 1) throw InputError("split_disjoint: k must be >= 1");
  if (length < static_cast<std::size_t>(k)) {
    throw InputError("split_disjoint: sequence of length " + std::to_string(length) + " cannot give " +
                     std::to_string(k) + " non-empty parts");
  }
  std::uniform_int_distribution<int> part(1, k);
  std::vector<int> assignment(length);
  constexpr int kMaxAttempts = 16;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    for (int& a : assignment) a = part(rng);
    auto parts = partition_by_assignment(assignment, k);
    if (std::none_of(parts.begin(), parts.end(), [](const Selection& s) { return s.empty(); })) return parts;
  }
  throw GenerationError("split_disjoint: every part non-empty not reached in 16 attempts (length " +
                        std::to_string(length) + ", k " + std::to_string(k) + ")");
}

std::vector<Selection> sample_slice(std::size_t length, int k, int m, int M, Rng& rng) {
  if (m < 1 || m > M) throw InputError("sample_slice: need 1 <= m <= M");
  if (length < static_cast<std::size_t>(m)) {
    throw InputError("sample_slice: sequence of length " + std::to_string(length) + " shorter than m = " +
                     std::to_string(m));
  }
  std::vector<Selection> out;
  out.reserve(static_cast<std::size_t>(k));
  const std::size_t hi = std::min(static_cast<std::size_t>(M), length);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> len_dist(static_cast<std::size_t>(m), hi);
    const std::size_t len = len_dist(rng);
    std::uniform_int_distribution<std::size_t> start_dist(0, length - len);
    const std::size_t start = start_dist(rng);
    Selection s(len);
    std::iota(s.begin(), s.end(), start);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Selection> sample_random(std::size_t length, int k, double fraction, Rng& rng) {
  const auto take_n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(length)));
  if (take_n < 1 || take_n > length) throw InputError("sample_random: ceil(fraction * length) must be in [1, length]");
  std::vector<Selection> out;
  out.reserve(static_cast<std::size_t>(k));
  std::vector<std::size_t> pool(length);
  for (int i = 0; i < k; ++i) {
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    // Partial Fisher-Yates.
    for (std::size_t j = 0; j < take_n; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, length - 1);
      std::swap(pool[j], pool[pick(rng)]);
    }
    Selection s(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take_n));
    std::sort(s.begin(), s.end());
    out.push_back(std::move(s));
  }
  return out;
}

bool strategy_accepts(std::size_t length, const SubSeqConfig& cfg) {
  switch (cfg.strategy) {
    case SubSeqStrategy::disjoint:
      return length >= static_cast<std::size_t>(cfg.k);
    case SubSeqStrategy::random_slice:
      return length >= static_cast<std::size_t>(cfg.min_len);
    case SubSeqStrategy::random_sample:
      return length >= 1;
  }
  return false;
}

std::vector<Selection> generate_subsequences(std::size_t length, const SubSeqConfig& cfg, Rng& rng) {
  switch (cfg.strategy) {
    case SubSeqStrategy::disjoint:
      return split_disjoint(length, cfg.k, rng);
    case SubSeqStrategy::random_slice:
      return sample_slice(length, cfg.k, cfg.min_len, cfg.max_len, rng);
    case SubSeqStrategy::random_sample:
      return sample_random(length, cfg.k, cfg.sample_fraction, rng);
  }
  throw ConfigError("unknown strategy");
}

EventSequence take(const EventSequence& seq, const Selection& sel) {
  EventSequence out{seq.person_id, {}, seq.label};
  out.events.reserve(sel.size());
  for (std::size_t i : sel) out.events.push_back(seq.events.at(i));
  return out;
}

TrainingBatch make_batch(std::span<const EventSequence> dataset, std::span<const std::size_t> person_indices,
                         const SubSeqConfig& cfg, Rng& rng) {
  cfg.validate();
  if (person_indices.size() < 2) throw BatchError("make_batch: need at least 2 persons");
  std::set<std::size_t> used;
  for (std::size_t p : person_indices) {
    if (p >= dataset.size()) throw BatchError("make_batch: person index out of range");
    if (!used.insert(p).second) throw BatchError("make_batch: duplicate person index");
  }
  std::vector<std::size_t> chosen(person_indices.begin(), person_indices.end());
  std::set<std::size_t> rejected;
  for (std::size_t& p : chosen) {
    if (strategy_accepts(dataset[p].events.size(), cfg)) continue;
    rejected.insert(p);
    std::vector<std::size_t> spare;
    for (std::size_t q = 0; q < dataset.size(); ++q) {
      if (!used.count(q) && !rejected.count(q) && strategy_accepts(dataset[q].events.size(), cfg)) spare.push_back(q);
    }
    if (spare.empty()) {
      throw BatchError("make_batch: cannot find " + std::to_string(chosen.size()) +
                       " distinct persons satisfying the sub-sequence strategy");
    }
    std::uniform_int_distribution<std::size_t> pick(0, spare.size() - 1);
    p = spare[pick(rng)];
    used.insert(p);
  }

  TrainingBatch batch;
  batch.n = static_cast<int>(chosen.size());
  batch.k = cfg.k;
  batch.persons = chosen;
  batch.samples.reserve(chosen.size() * static_cast<std::size_t>(cfg.k));
  for (std::size_t b = 0; b < chosen.size(); ++b) {
    const EventSequence& seq = dataset[chosen[b]];
    for (const Selection& sel : generate_subsequences(seq.events.size(), cfg, rng)) {
      batch.samples.push_back(take(seq, sel));
      batch.labels.push_back(static_cast<int>(b));
    }
  }
  return batch;
}

}  // namespace lifestream
