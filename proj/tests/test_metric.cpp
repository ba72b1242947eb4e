#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "lifestream/errors.hpp"
#include "lifestream/metric.hpp"
#include "support.hpp"

using namespace lifestream;
using namespace lifestream::nd;
using support::Mat;
using support::random_matrix;

namespace {

using PairSet = std::set<IndexPair>;

PairSet as_set(const std::vector<IndexPair>& v) {
  PairSet s;
  for (const auto& [i, j] : v) s.insert({std::min(i, j), std::max(i, j)});
  return s;
}

Mat unit_rows(Index n, Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Mat m(n, d);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = z(rng);
  for (Index i = 0; i < n; ++i) m.row(i) /= m.row(i).matrix().norm();
  return m;
}

Mat direct_distances(const Mat& e) {
  Mat d(e.rows(), e.rows());
  for (Index i = 0; i < e.rows(); ++i) {
    for (Index j = 0; j < e.rows(); ++j) d(i, j) = (e.row(i) - e.row(j)).matrix().norm();
  }
  return d;
}

Mat symmetric(std::initializer_list<std::tuple<Index, Index, double>> entries, Index n) {
  Mat d = Mat::Zero(n, n);
  for (const auto& [i, j, v] : entries) d(i, j) = d(j, i) = v;
  return d;
}

double loss_value(const Mat& d, const PairSelection& sel, const LossConfig& cfg) {
  Graph<double> g;
  return metric_loss(g.constant(d), sel, cfg).value()(0, 0);
}

}  // namespace

TEST_CASE("distance matrix") {
  std::mt19937_64 rng(1);
  Graph<double> g;
  Mat e(3, 2);
  e << 1, 0, -1, 0, 0, 1;
  const Mat d = distance_matrix(g.constant(e)).value();
  CHECK(d(0, 0) == 0.0);
  CHECK(d(0, 1) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(d(0, 2) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));

  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const Mat pair = unit_rows(2, 16, rng);
    Graph<double> gg;
    const Mat dd = distance_matrix(gg.constant(pair)).value();
    worst = std::max(worst, std::abs(dd(0, 1) - direct_distances(pair)(0, 1)));
  }
  CHECK(worst < 1e-5);

  const Mat big = distance_matrix(g.constant(unit_rows(40, 8, rng))).value();
  CHECK(big.minCoeff() >= 0.0);
  CHECK(big.maxCoeff() <= 2.0);
  CHECK((big - big.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(big.matrix().diagonal().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("label pairs") {
  const std::vector<int> labels{0, 0, 1, 1};
  const PairSelection s = label_pairs(labels);
  CHECK(s.positives == std::vector<IndexPair>{{0, 1}, {2, 3}});
  CHECK(s.negatives == std::vector<IndexPair>{{0, 2}, {0, 3}, {1, 2}, {1, 3}});
  const std::vector<int> two{0, 1};
  CHECK(label_pairs(two).positives.empty());
  CHECK(label_pairs(two).negatives.size() == 1);
  const std::vector<int> same{3, 3, 3};
  CHECK_THROWS_AS(label_pairs(same), SelectionError);
  CHECK(make_triplets(s).size() == 8);
}

TEST_CASE("loss values") {
  LossConfig cfg;
  cfg.reduction = Reduction::sum;
  const Mat d = symmetric({{0, 1, 0.4}, {0, 2, 0.3}, {1, 2, 0.9}}, 3);

  SUBCASE("contrastive") {
    CHECK(loss_value(d, {{{0, 1}}, {}}, cfg) == doctest::Approx(0.08).epsilon(1e-12));
    CHECK(loss_value(d, {{}, {{0, 2}}}, cfg) == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(loss_value(d, {{}, {{1, 2}}}, cfg) == 0.0);
    CHECK(loss_value(Mat::Zero(3, 3), {{{0, 1}}, {}}, cfg) == 0.0);
    cfg.reduction = Reduction::mean;
    CHECK(loss_value(d, {{{0, 1}}, {{0, 2}, {1, 2}}}, cfg) == doctest::Approx(0.1 / 3).epsilon(1e-12));
  }
  SUBCASE("margin") {
    cfg.loss = LossKind::margin;
    cfg.margin_b = 0.4;
    cfg.margin_m = 0.25;
    CHECK(loss_value(d, {{{0, 1}}, {}}, cfg) == doctest::Approx(0.25).epsilon(1e-12));
    cfg.margin_b = 0.7;
    CHECK(loss_value(d, {{{0, 1}}, {}}, cfg) == 0.0);
    cfg.margin_b = 0.6;
    CHECK(loss_value(d, {{}, {{1, 2}}}, cfg) == 0.0);
    CHECK(loss_value(d, {{}, {{0, 2}}}, cfg) == doctest::Approx(0.55).epsilon(1e-12));
  }
  SUBCASE("triplet") {
    cfg.loss = LossKind::triplet;
    const Mat t = symmetric({{0, 1, 0.2}, {0, 2, 1.0}, {0, 3, 0.5}, {1, 2, 1.5}, {1, 3, 1.5}}, 4);
    CHECK(loss_value(t, {{{0, 1}}, {{0, 2}}}, cfg) == doctest::Approx(0.0));
    const std::vector<Triplet> tied{{0, 3, 3}};
    Graph<double> g;
    const Mat eq = symmetric({{0, 3, 0.6}}, 4);
    CHECK(triplet_loss(g.constant(eq), std::span<const Triplet>(tied), 0.3, Reduction::sum).value()(0, 0) ==
          doctest::Approx(0.3));
    // anchor 0: 0.2 - 0.5 + 0.3 = 0; anchor 1 has no negatives touching it
    CHECK(loss_value(t, {{{0, 1}}, {{0, 3}}}, cfg) == doctest::Approx(0.0));
    CHECK(make_triplets({{{0, 1}}, {{0, 3}}}) == std::vector<Triplet>{{0, 1, 3}});
  }
  SUBCASE("solved configurations cost nothing") {
    const Mat solved = symmetric({{0, 2, 1.5}, {0, 3, 1.5}, {1, 2, 1.5}, {1, 3, 1.5}}, 4);
    const PairSelection all = label_pairs(std::vector<int>{0, 0, 1, 1});
    for (auto kind : {LossKind::contrastive, LossKind::margin, LossKind::triplet}) {
      LossConfig c;
      c.loss = kind;
      CHECK(loss_value(solved, all, c) == 0.0);
    }
  }
  SUBCASE("errors") {
    Graph<double> g;
    const PairSelection empty;
    CHECK_THROWS_AS(contrastive_loss(g.constant(d), empty, 0.5, Reduction::mean), LossError);
    CHECK_THROWS_AS(margin_loss(g.constant(d), empty, 1.0, 0.25, Reduction::mean), LossError);
    CHECK_THROWS_AS(triplet_loss(g.constant(d), std::span<const Triplet>(), 0.3, Reduction::mean), LossError);
    LossConfig bad;
    bad.contrastive_margin = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(parse_loss_kind("hinge"), ConfigError);
  }
}

TEST_CASE("loss gradients") {
  SUBCASE("positive pairs are pulled together") {
    Graph<double> g;
    Var<double> d = g.leaf(symmetric({{0, 1, 0.4}, {0, 2, 0.3}}, 3));
    g.backward(contrastive_loss(d, {{{0, 1}}, {{0, 2}}}, 0.5, Reduction::sum));
    CHECK(g.grad(d.id())(0, 1) > 0);
    CHECK(g.grad(d.id())(0, 2) < 0);
  }
  SUBCASE("finite differences through the normalized embeddings") {
    const std::vector<int> labels{0, 0, 1, 1, 2, 2};
    const PairSelection all = label_pairs(labels);
    double worst = 0;
    for (auto kind : {LossKind::contrastive, LossKind::margin, LossKind::triplet}) {
      LossConfig cfg;
      cfg.loss = kind;
      cfg.contrastive_margin = 1.2;
      for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
        const Mat x = random_matrix(6, 5, rng);
        worst = std::max(worst, support::gradient_error({x}, [&](Graph<double>&, const std::vector<Var<double>>& v) {
          return metric_loss(distance_matrix(l2_normalize(v[0])), all, cfg);
        }));
      }
    }
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("hard mining") {
  const std::vector<int> labels{0, 0, 1, 1};
  const Mat d = symmetric({{0, 1, 0.1}, {0, 2, 0.9}, {0, 3, 0.4}, {1, 2, 0.5}, {1, 3, 0.8}, {2, 3, 0.1}}, 4);
  Rng rng(0);
  NegSamplingConfig cfg{NegativeStrategy::hard, 1};
  const PairSelection out = select_negatives(d, label_pairs(labels), cfg, rng);
  CHECK(as_set(out.negatives) == PairSet{{0, 3}, {1, 2}});
  CHECK(out.positives == label_pairs(labels).positives);

  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 gen(static_cast<std::uint64_t>(trial));
    const Index n = std::uniform_int_distribution<Index>(4, 32)(gen);
    std::vector<int> lab(static_cast<std::size_t>(n));
    for (auto& l : lab) l = std::uniform_int_distribution<int>(0, 4)(gen);
    lab[0] = 0;
    lab[1] = 1;
    const Mat dist = direct_distances(unit_rows(n, 4, gen));
    const int count = std::uniform_int_distribution<int>(1, 6)(gen);

    PairSet expected;
    for (Index a = 0; a < n; ++a) {
      std::vector<std::pair<double, Index>> cands;
      for (Index j = 0; j < n; ++j) {
        if (lab[static_cast<std::size_t>(j)] != lab[static_cast<std::size_t>(a)]) cands.emplace_back(dist(a, j), j);
      }
      std::sort(cands.begin(), cands.end());
      for (std::size_t i = 0; i < std::min<std::size_t>(count, cands.size()); ++i) {
        expected.insert({std::min(a, cands[i].second), std::max(a, cands[i].second)});
      }
    }
    PairSelection shuffled = label_pairs(lab);
    std::shuffle(shuffled.negatives.begin(), shuffled.negatives.end(), gen);
    const auto got = select_negatives(dist, shuffled, NegSamplingConfig{NegativeStrategy::hard, count}, rng);
    CHECK(as_set(got.negatives) == expected);
  }
}

TEST_CASE("semi-hard mining") {
  Rng rng(0);
  const NegSamplingConfig cfg{NegativeStrategy::semi_hard, 1};
  const Mat d = symmetric({{0, 1, 0.5}, {0, 2, 0.3}, {0, 3, 0.7}, {0, 4, 1.1}}, 5);
  const PairSelection sel{{{0, 1}}, {{0, 2}, {0, 3}, {0, 4}}};
  CHECK(as_set(select_negatives(d, sel, cfg, rng).negatives) == PairSet{{0, 3}});

  const Mat far = symmetric({{0, 1, 1.2}, {0, 2, 0.3}, {0, 4, 1.1}}, 5);
  const PairSelection sel2{{{0, 1}}, {{0, 2}, {0, 4}}};
  CHECK(as_set(select_negatives(far, sel2, cfg, rng).negatives) == PairSet{{0, 4}});

  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 gen(static_cast<std::uint64_t>(1000 + trial));
    const std::vector<int> lab{0, 0, 0, 1, 1, 2, 2, 2};
    const Mat dist = direct_distances(unit_rows(8, 3, gen));
    PairSet expected;
    const PairSelection all = label_pairs(lab);
    for (const auto& [i, j] : all.positives) {
      for (const auto& [a, p] : {IndexPair{i, j}, IndexPair{j, i}}) {
        Index best = -1, farthest = -1;
        for (Index x = 0; x < 8; ++x) {
          if (lab[static_cast<std::size_t>(x)] == lab[static_cast<std::size_t>(a)]) continue;
          if (dist(a, x) > dist(a, p) && (best < 0 || dist(a, x) < dist(a, best))) best = x;
          if (farthest < 0 || dist(a, x) > dist(a, farthest)) farthest = x;
        }
        const Index pick = best >= 0 ? best : farthest;
        expected.insert({std::min(a, pick), std::max(a, pick)});
      }
    }
    CHECK(as_set(select_negatives(dist, all, cfg, rng).negatives) == expected);
  }
}

TEST_CASE("random and distance-weighted sampling frequencies") {
  // Anchor 0 against three candidates at distinct distances.
  const Mat d = symmetric({{0, 1, 0.6}, {0, 2, 1.2}, {0, 3, 1.6}}, 4);
  const PairSelection sel{{}, {{0, 1}, {0, 2}, {0, 3}}};
  const int trials = 20000;
  const double dim = 8;
  auto density = [&](double x) { return std::pow(x, dim - 2) * std::pow(1 - x * x / 4, (dim - 3) / 2); };
  const std::vector<double> w{1 / density(0.6), 1 / density(1.2), 1 / density(1.6)};
  const double total = w[0] + w[1] + w[2];

  for (auto strategy : {NegativeStrategy::random, NegativeStrategy::distance_weighted}) {
    Rng rng(17);
    std::map<Index, int> hits;
    for (int t = 0; t < trials; ++t) {
      // Anchor 0 is visited first, so its pick leads the first-seen ordering.
      const auto out = select_negatives(d, sel, NegSamplingConfig{strategy, 1}, rng, 8);
      ++hits[out.negatives.front().second];
    }
    for (Index j = 1; j <= 3; ++j) {
      const double freq = hits[j] / static_cast<double>(trials);
      const double want = strategy == NegativeStrategy::random ? 1.0 / 3 : w[static_cast<std::size_t>(j - 1)] / total;
      CHECK(std::abs(freq - want) < 0.02);
    }
  }

  Rng rng(1);
  const auto keep_all = select_negatives(d, sel, NegSamplingConfig{NegativeStrategy::distance_weighted, 5}, rng, 8);
  CHECK(keep_all.negatives.size() == 3);
  CHECK_THROWS_AS(select_negatives(d, sel, NegSamplingConfig{NegativeStrategy::distance_weighted, 1}, rng, 0),
                  SelectionError);
  CHECK_THROWS_AS(select_negatives(d, PairSelection{}, NegSamplingConfig{}, rng), SelectionError);
  CHECK_THROWS_AS(select_negatives(d, PairSelection{{}, {{0, 9}}}, NegSamplingConfig{}, rng), BoundsError);
  CHECK_THROWS_AS(NegSamplingConfig({NegativeStrategy::hard, 0}).validate(), ConfigError);
}
