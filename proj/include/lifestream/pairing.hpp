#pragma once

// Sub-sequence generation and N x K batch assembly.
//
// A sub-sequence is a Selection: strictly increasing indices into the
// source sequence, so event order is preserved by construction.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lifestream/ingest.hpp"

namespace lifestream {

using Rng = std::mt19937_64;
using Selection = std::vector<std::size_t>;

enum class SubSeqStrategy { random_sample, disjoint, random_slice };

std::string to_string(SubSeqStrategy s);
SubSeqStrategy parse_subseq_strategy(const std::string& name);

struct SubSeqConfig {
  SubSeqStrategy strategy = SubSeqStrategy::random_slice;
  int k = 5;
  int min_len = 25;   // random_slice lower bound m
  int max_len = 200;  // random_slice upper bound M
  double sample_fraction = 0.8;

  void validate() const;
};

// Algorithm core of the disjoint split: part i (1-based label) collects the
// positions whose assignment equals i.
std::vector<Selection> partition_by_assignment(std::span<const int> assignment, int k);

// Assigns every event a part uniform in [1, k] and re-draws (at most 16
// times) while any part is empty.
std::vector<Selection> split_disjoint(std::size_t length, int k, Rng& rng);

// k contiguous slices with length uniform in [m, min(M, l)] and start
// uniform in [0, l - length]. Slices may overlap.
std::vector<Selection> sample_slice(std::size_t length, int k, int m, int M, Rng& rng);

// k independent draws of ceil(fraction * l) positions without replacement.
std::vector<Selection> sample_random(std::size_t length, int k, double fraction, Rng& rng);

bool strategy_accepts(std::size_t length, const SubSeqConfig& cfg);
std::vector<Selection> generate_subsequences(std::size_t length, const SubSeqConfig& cfg, Rng& rng);

EventSequence take(const EventSequence& seq, const Selection& sel);

struct TrainingBatch {
  std::vector<EventSequence> samples;  // person-major: sample p * K + j
  std::vector<int> labels;             // batch-local person index 0..N-1
  std::vector<std::size_t> persons;    // dataset index of each batch person
  int n = 0;
  int k = 0;
};

// Persons failing the strategy precondition are replaced by random unused
// persons from the dataset; BatchError when N distinct persons cannot be
// found.
TrainingBatch make_batch(std::span<const EventSequence> dataset, std::span<const std::size_t> person_indices,
                         const SubSeqConfig& cfg, Rng& rng);

}  // namespace lifestream
