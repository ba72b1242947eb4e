#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lifestream/encoder.hpp"
#include "lifestream/errors.hpp"
#include "support.hpp"

using namespace lifestream;
using namespace lifestream::nd;
using support::Mat;
using support::random_matrix;

namespace {

struct Fixture {
  Vocabulary vocab;
  std::vector<EventSequence> data;
};

Fixture synthetic_fixture(std::int64_t persons = 6, std::int64_t min_events = 8, std::int64_t max_events = 30) {
  SynthConfig cfg;
  cfg.n_persons = persons;
  cfg.min_events = min_events;
  cfg.max_events = max_events;
  cfg.n_categories = 6;
  cfg.seed = 11;
  const auto raw = generate_synthetic(cfg);
  Fixture f;
  f.vocab = build_vocabulary(raw, synthetic_schema());
  f.data = f.vocab.apply(raw);
  return f;
}

EncoderConfig small_config(int d) {
  EncoderConfig c;
  c.hidden_size = d;
  c.embedding_widths = {{"mcc", 3}, {kWeekdayField, 2}};
  return c;
}

// Independent scalar GRU step over plain vectors.
std::vector<double> scalar_gru(const std::vector<double>& h, const std::vector<double>& z, const EncoderParams<double>& p) {
  const std::size_t d = h.size(), in = z.size();
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  std::vector<double> u(d), r(d), out(d);
  for (std::size_t j = 0; j < d; ++j) {
    double au = p.b_z(0, j), ar = p.b_r(0, j);
    for (std::size_t i = 0; i < in; ++i) {
      au += z[i] * p.W_z(i, j);
      ar += z[i] * p.W_r(i, j);
    }
    for (std::size_t i = 0; i < d; ++i) {
      au += h[i] * p.U_z(i, j);
      ar += h[i] * p.U_r(i, j);
    }
    u[j] = sig(au);
    r[j] = sig(ar);
  }
  for (std::size_t j = 0; j < d; ++j) {
    double ah = p.b_h(0, j);
    for (std::size_t i = 0; i < in; ++i) ah += z[i] * p.W_h(i, j);
    for (std::size_t i = 0; i < d; ++i) ah += r[i] * h[i] * p.U_h(i, j);
    out[j] = (1 - u[j]) * h[j] + u[j] * std::tanh(ah);
  }
  return out;
}

template <typename S>
Array<S> encode_rows(const EncoderParams<S>& p, const std::vector<const EventSequence*>& seqs, int max_len = 0) {
  Graph<S> g;
  auto norms = p.norms;
  const EncoderVars<S> v = bind(g, p, false);
  return encode_batch(g, v, std::span<BatchNormState<S>>(norms), p.config, std::span<const EventSequence* const>(seqs),
                      Mode::infer, max_len)
      .value();
}

}  // namespace

TEST_CASE("config and widths") {
  CHECK(default_embedding_width(1) == 1);
  CHECK(default_embedding_width(5) == 3);
  CHECK(default_embedding_width(8) == 4);
  CHECK(default_embedding_width(1000) == 16);
  EncoderConfig c = small_config(7);
  CHECK(EncoderConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_AS(EncoderConfig::from_json(nlohmann::json::parse(R"({"hidden":3})")), ConfigError);
  CHECK_THROWS_AS(EncoderConfig::from_json(nlohmann::json::parse(R"({"hidden_size":0})")), ConfigError);
}

TEST_CASE("encode_events width arithmetic and gather semantics") {
  EncoderParams<double> p;
  p.config.hidden_size = 2;
  p.categorical_names = {"c"};
  p.numerical_names = {"x"};
  std::mt19937_64 rng(3);
  p.embeddings = {random_matrix(5, 4, rng)};
  p.norms = {{0.0, 1.0}};
  Event a{0, {2}, {0.5}}, b{0, {2}, {0.5}}, c{0, {3}, {-1.0}};
  const std::vector<const Event*> rows{&a, &b, &c};
  Graph<double> g;
  const EncoderVars<double> v = bind(g, p, true);
  Var<double> z = encode_events(g, v, std::span<BatchNormState<double>>(p.norms), p.config,
                                std::span<const Event* const>(rows), Mode::infer);
  REQUIRE(z.cols() == 5);
  CHECK((z.value().row(0) - z.value().row(1)).norm() == 0.0);
  CHECK(z.value()(0, 4) == doctest::Approx(0.5 / std::sqrt(1.0 + 1e-5)));

  Mat w = Mat::Zero(3, 5);
  w(2, 0) = 1.0;  // only the third event (category 3) feeds the loss
  g.backward(support::weighted_sum(z, w));
  const Mat& gt = g.grad(v.embeddings[0].id());
  CHECK(gt(3, 0) == 1.0);
  CHECK(gt.row(2).norm() == 0.0);
  CHECK(gt.sum() == 1.0);

  Event bad{0, {5}, {0.0}};
  const std::vector<const Event*> oob{&bad};
  CHECK_THROWS_AS(encode_events(g, v, std::span<BatchNormState<double>>(p.norms), p.config,
                                std::span<const Event* const>(oob), Mode::infer),
                  BoundsError);
}

TEST_CASE("gru_cell limits and scalar oracle") {
  const Fixture f = synthetic_fixture();
  SUBCASE("all-zero parameters keep a zero state") {
    EncoderParams<double> p = init_encoder<double>(f.vocab, small_config(4), 1);
    for (auto& [name, t] : p.trainable()) t->setZero();
    Graph<double> g;
    const EncoderVars<double> v = bind(g, p, false);
    Var<double> h = gru_cell(g.constant(Mat::Zero(1, 4)), g.constant(Mat::Ones(1, p.input_width())), v);
    CHECK(h.value().norm() == 0.0);
  }
  SUBCASE("closed update gate carries the state") {
    EncoderParams<double> p = init_encoder<double>(f.vocab, small_config(4), 2);
    p.b_z.setConstant(-60.0);
    Graph<double> g;
    const EncoderVars<double> v = bind(g, p, false);
    std::mt19937_64 rng(2);
    const Mat h0 = random_matrix(1, 4, rng);
    Var<double> h = gru_cell(g.constant(h0), g.constant(random_matrix(1, p.input_width(), rng)), v);
    CHECK((h.value() - h0).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("random parameters match the scalar reimplementation") {
    double worst = 0;
    for (int seed = 0; seed < 20; ++seed) {
      EncoderParams<double> p = init_encoder<double>(f.vocab, small_config(6), static_cast<std::uint64_t>(seed));
      std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
      p.b_z = random_matrix(1, 6, rng);
      p.b_r = random_matrix(1, 6, rng);
      p.b_h = random_matrix(1, 6, rng);
      const Mat h0 = random_matrix(1, 6, rng, -1, 1), z = random_matrix(1, p.input_width(), rng, -2, 2);
      Graph<double> g;
      const EncoderVars<double> v = bind(g, p, false);
      const Mat h = gru_cell(g.constant(h0), g.constant(z), v).value();
      const auto ref = scalar_gru(std::vector<double>(h0.data(), h0.data() + 6),
                                  std::vector<double>(z.data(), z.data() + z.size()), p);
      for (int j = 0; j < 6; ++j) worst = std::max(worst, std::abs(h(0, j) - ref[static_cast<std::size_t>(j)]));
    }
    CHECK(worst < 1e-6);
  }
  SUBCASE("shape errors") {
    EncoderParams<double> p = init_encoder<double>(f.vocab, small_config(4), 1);
    Graph<double> g;
    const EncoderVars<double> v = bind(g, p, false);
    CHECK_THROWS_AS(gru_cell(g.constant(Mat::Zero(1, 3)), g.constant(Mat::Zero(1, p.input_width())), v), ShapeError);
    CHECK_THROWS_AS(gru_cell(g.constant(Mat::Zero(1, 4)), g.constant(Mat::Zero(1, 2)), v), ShapeError);
  }
}

TEST_CASE("sequence encoding") {
  const Fixture f = synthetic_fixture();
  const EncoderParams<double> p = init_encoder<double>(f.vocab, small_config(5), 9);

  SUBCASE("single event is one normalized step") {
    EventSequence one{"x", {f.data[0].events[0]}, std::nullopt};
    const auto emb = encode_sequence(one, p);
    Graph<double> g;
    auto norms = p.norms;
    const EncoderVars<double> v = bind(g, p, false);
    const std::vector<const Event*> rows{&one.events[0]};
    Var<double> z = encode_events(g, v, std::span<BatchNormState<double>>(norms), p.config,
                                  std::span<const Event* const>(rows), Mode::infer);
    const Mat h = gru_cell(g.constant(Mat::Zero(1, 5)), z, v).value();
    CHECK((emb.state - h).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((emb.embedding - h / h.norm()).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("full encode equals the step-by-step fold and has unit norm") {
    for (const auto& seq : f.data) {
      const auto emb = encode_sequence(seq, p);
      CHECK(std::abs(emb.embedding.norm() - 1.0) < 1e-5);
      Graph<double> g;
      auto norms = p.norms;
      const EncoderVars<double> v = bind(g, p, false);
      Var<double> h = g.constant(Mat::Zero(1, 5));
      for (const auto& ev : seq.events) {
        const std::vector<const Event*> rows{&ev};
        h = gru_cell(h, encode_events(g, v, std::span<BatchNormState<double>>(norms), p.config,
                                      std::span<const Event* const>(rows), Mode::infer), v);
      }
      CHECK((emb.state - h.value()).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  SUBCASE("padded batch equals one-by-one encoding") {
    std::vector<const EventSequence*> all;
    for (const auto& s : f.data) all.push_back(&s);
    const Mat batch = encode_rows(p, all);
    for (std::size_t i = 0; i < f.data.size(); ++i) {
      CHECK((batch.row(static_cast<Index>(i)) - encode_sequence(f.data[i], p).state).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("truncation keeps the most recent events") {
    const EventSequence& s = f.data[0];
    EventSequence tail{s.person_id, std::vector<Event>(s.events.end() - 4, s.events.end()), s.label};
    const Mat cut = encode_rows(p, {&s}, 4);
    CHECK((cut - encode_sequence(tail, p).state).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("empty sequence is rejected") {
    EventSequence empty{"e", {}, std::nullopt};
    CHECK_THROWS_AS(encode_sequence(empty, p), InputError);
  }
  SUBCASE("infer mode is deterministic and leaves params untouched") {
    const auto a = encode_sequence(f.data[1], p);
    const auto b = encode_sequence(f.data[1], p);
    CHECK((a.state - b.state).norm() == 0.0);
  }
}

TEST_CASE("incremental update") {
  const Fixture f = synthetic_fixture(20, 10, 60);
  const EncoderParams<float> p = init_encoder<float>(f.vocab, small_config(16), 4);
  std::mt19937_64 rng(99);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const EventSequence& s = f.data[static_cast<std::size_t>(trial) % f.data.size()];
    std::uniform_int_distribution<std::size_t> cut(1, s.events.size() - 1);
    const std::size_t k = cut(rng);
    EventSequence head{s.person_id, std::vector<Event>(s.events.begin(), s.events.begin() + static_cast<long>(k)), s.label};
    const auto a = encode_sequence(head, p);
    const auto inc = incremental_update(a.state, std::span<const Event>(s.events.data() + k, s.events.size() - k), p);
    const auto full = encode_sequence(s, p);
    worst = std::max(worst, static_cast<double>((inc.state - full.state).cwiseAbs().maxCoeff()));
    worst = std::max(worst, static_cast<double>((inc.embedding - full.embedding).cwiseAbs().maxCoeff()));
  }
  CHECK(worst < 1e-5);

  const EventSequence& s = f.data[0];
  const auto base = encode_sequence(s, p);
  const auto same = incremental_update(base.state, std::span<const Event>(), p);
  CHECK((same.state - base.state).norm() == 0.0f);
  CHECK((same.embedding - base.embedding).norm() == 0.0f);

  const std::span<const Event> ev(s.events);
  const auto first = encode_sequence(EventSequence{"", {ev[0], ev[1]}, std::nullopt}, p);
  const auto two_steps = incremental_update(incremental_update(first.state, ev.subspan(2, 3), p).state, ev.subspan(5, 4), p);
  const auto one_step = incremental_update(first.state, ev.subspan(2, 7), p);
  CHECK((two_steps.state - one_step.state).cwiseAbs().maxCoeff() < 1e-6f);

  CHECK_THROWS_AS(incremental_update(Array<float>(Array<float>::Zero(1, 3)), ev, p), ShapeError);
}

TEST_CASE("encoder gradients match finite differences") {
  const Fixture f = synthetic_fixture(3, 20, 20);
  REQUIRE(f.data[0].events.size() == 20);
  double worst = 0;
  for (int seed = 0; seed < 20; ++seed) {
    const EncoderParams<double> p = init_encoder<double>(f.vocab, small_config(4), static_cast<std::uint64_t>(seed));
    EncoderParams<double> probe = p;
    auto named = probe.trainable();
    std::vector<Mat> inputs;
    for (auto& [name, t] : named) inputs.push_back(*t);
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    const Mat w = random_matrix(3, 4, rng);
    std::vector<const EventSequence*> seqs;
    for (const auto& s : f.data) seqs.push_back(&s);
    worst = std::max(worst, support::gradient_error(inputs, [&](Graph<double>& g, const std::vector<Var<double>>& leaves) {
      EncoderVars<double> v;
      const std::size_t n_emb = p.embeddings.size();
      for (std::size_t i = 0; i < n_emb; ++i) v.embeddings.push_back(leaves[i]);
      v.W_z = leaves[n_emb + 0];
      v.W_r = leaves[n_emb + 1];
      v.W_h = leaves[n_emb + 2];
      v.U_z = leaves[n_emb + 3];
      v.U_r = leaves[n_emb + 4];
      v.U_h = leaves[n_emb + 5];
      v.b_z = leaves[n_emb + 6];
      v.b_r = leaves[n_emb + 7];
      v.b_h = leaves[n_emb + 8];
      auto norms = p.norms;
      Var<double> h = encode_batch(g, v, std::span<BatchNormState<double>>(norms), p.config,
                                   std::span<const EventSequence* const>(seqs), Mode::train, 0);
      return support::weighted_sum(l2_normalize(h), w);
    }));
  }
  CHECK(worst < 1e-3);
}
