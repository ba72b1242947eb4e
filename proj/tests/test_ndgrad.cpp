#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lifestream/errors.hpp"
#include "lifestream/ndgrad.hpp"
#include "support.hpp"

using namespace lifestream;
using namespace lifestream::nd;
using support::gradient_error;
using support::Mat;
using support::random_matrix;
using support::weighted_sum;

namespace {

constexpr int kSeeds = 20;
constexpr double kOpTol = 1e-4;
constexpr double kBatchNormTol = 1e-3;

// Runs `check(rng)` for kSeeds seeds and returns the worst error.
template <class F>
double worst_over_seeds(F check) {
  double worst = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    worst = std::max(worst, check(rng));
  }
  return worst;
}

// Elementwise op check: loss = sum(op(x) * w).
template <class Op>
double unary_check(Op op, double lo = -2, double hi = 2) {
  return worst_over_seeds([&](std::mt19937_64& rng) {
    const Mat x = random_matrix(4, 3, rng, lo, hi);
    const Mat w = random_matrix(4, 3, rng);
    return gradient_error({x}, [&](Graph<double>&, const std::vector<Var<double>>& v) { return weighted_sum(op(v[0]), w); });
  });
}

template <class Op>
double binary_check(Op op) {
  return worst_over_seeds([&](std::mt19937_64& rng) {
    const Mat a = random_matrix(3, 4, rng), b = random_matrix(3, 4, rng), w = random_matrix(3, 4, rng);
    return gradient_error({a, b},
                          [&](Graph<double>&, const std::vector<Var<double>>& v) { return weighted_sum(op(v[0], v[1]), w); });
  });
}

}  // namespace

TEST_CASE("matmul values and gradients") {
  Graph<double> g;
  Mat a(1, 2), b(2, 1);
  a << 1, 2;
  b << 3, 4;
  CHECK(matmul(g.leaf(a), g.leaf(b)).value()(0, 0) == doctest::Approx(11.0));
  Mat x = Mat::Random(2, 3);
  CHECK((matmul(g.leaf(Mat(Mat::Identity(2, 2))), g.leaf(x)).value() - x).norm() == 0.0);
  CHECK_THROWS_AS(matmul(g.leaf(Mat::Zero(2, 3)), g.leaf(Mat::Zero(2, 3))), ShapeError);

  const double err = worst_over_seeds([](std::mt19937_64& rng) {
    const Mat p = random_matrix(5, 4, rng), q = random_matrix(4, 3, rng), w = random_matrix(5, 3, rng);
    return gradient_error({p, q},
                          [&](Graph<double>&, const std::vector<Var<double>>& v) { return weighted_sum(matmul(v[0], v[1]), w); });
  });
  CHECK(err < kOpTol);
}

TEST_CASE("elementwise ops match finite differences") {
  CHECK(binary_check([](auto a, auto b) { return add(a, b); }) < kOpTol);
  CHECK(binary_check([](auto a, auto b) { return sub(a, b); }) < kOpTol);
  CHECK(binary_check([](auto a, auto b) { return mul_elem(a, b); }) < kOpTol);
  CHECK(unary_check([](auto a) { return sigmoid(a); }, -6, 6) < kOpTol);
  CHECK(unary_check([](auto a) { return nd::tanh(a); }) < kOpTol);
  CHECK(unary_check([](auto a) { return one_minus(a); }) < kOpTol);
  CHECK(unary_check([](auto a) { return relu(a); }) < kOpTol);
  CHECK(unary_check([](auto a) { return square(a); }) < kOpTol);
  CHECK(unary_check([](auto a) { return scale(a, 0.37); }) < kOpTol);
  CHECK(unary_check([](auto a) { return add_scalar(a, -1.5); }) < kOpTol);
  const double transpose_err = worst_over_seeds([](std::mt19937_64& rng) {
    const Mat x = random_matrix(4, 3, rng), w = random_matrix(3, 4, rng);
    return gradient_error({x}, [&](Graph<double>&, const std::vector<Var<double>>& v) { return weighted_sum(transpose(v[0]), w); });
  });
  CHECK(transpose_err < kOpTol);
}

TEST_CASE("reductions, bias rows and shape errors") {
  const double sum_err = worst_over_seeds([](std::mt19937_64& rng) {
    const Mat x = random_matrix(3, 5, rng);
    return gradient_error({x}, [](Graph<double>&, const std::vector<Var<double>>& v) { return scale(sum(square(v[0])), 0.5); });
  });
  const double mean_err = worst_over_seeds([](std::mt19937_64& rng) {
    const Mat x = random_matrix(3, 5, rng);
    return gradient_error({x}, [](Graph<double>&, const std::vector<Var<double>>& v) { return mean(square(v[0])); });
  });
  const double bias_err = worst_over_seeds([](std::mt19937_64& rng) {
    const Mat x = random_matrix(4, 3, rng), b = random_matrix(1, 3, rng), w = random_matrix(4, 3, rng);
    return gradient_error({x, b},
                          [&](Graph<double>&, const std::vector<Var<double>>& v) { return weighted_sum(add_row(v[0], v[1]), w); });
  });
  CHECK(sum_err < kOpTol);
  CHECK(mean_err < kOpTol);
  CHECK(bias_err < kOpTol);

  Graph<double> g;
  CHECK_THROWS_AS(add(g.leaf(Mat::Zero(2, 2)), g.leaf(Mat::Zero(2, 3))), ShapeError);
  CHECK_THROWS_AS(mul_elem(g.leaf(Mat::Zero(2, 2)), g.leaf(Mat::Zero(3, 2))), ShapeError);
  CHECK_THROWS_AS(add_row(g.leaf(Mat::Zero(2, 2)), g.leaf(Mat::Zero(1, 3))), ShapeError);
}

TEST_CASE("sigmoid and tanh at zero") {
  Graph<double> g;
  Var<double> x = g.leaf(Mat::Zero(1, 1));
  CHECK(sigmoid(x).value()(0, 0) == 0.5);
  Var<double> t = nd::tanh(x);
  CHECK(t.value()(0, 0) == 0.0);
  g.backward(sum(t));
  CHECK(g.grad(x.id())(0, 0) == doctest::Approx(1.0));
  Mat big(1, 2);
  big << 800, -800;
  Var<double> s = sigmoid(g.leaf(big));
  CHECK(s.value().allFinite());
  CHECK(s.value()(0, 0) == 1.0);
  CHECK(s.value()(0, 1) == 0.0);
}

TEST_CASE("concat_cols") {
  Graph<double> g;
  Mat a = Mat::Random(3, 2), b = Mat::Random(3, 3);
  Var<double> va = g.leaf(a), vb = g.leaf(b);
  CHECK((concat_cols({va}).value() - a).norm() == 0.0);
  Var<double> c = concat_cols({va, vb});
  REQUIRE(c.cols() == 5);
  CHECK((c.value().leftCols(2) - a).norm() == 0.0);
  CHECK((c.value().rightCols(3) - b).norm() == 0.0);
  Mat w = Mat::Random(3, 5);
  g.backward(weighted_sum(c, w));
  CHECK((g.grad(va.id()) - w.leftCols(2)).norm() == 0.0);
  CHECK((g.grad(vb.id()) - w.rightCols(3)).norm() == 0.0);
  CHECK_THROWS_AS(concat_cols({va, g.leaf(Mat::Zero(2, 1))}), ShapeError);

  const double err = worst_over_seeds([](std::mt19937_64& rng) {
    const Mat p = random_matrix(4, 2, rng), q = random_matrix(4, 1, rng), r = random_matrix(4, 3, rng);
    const Mat w = random_matrix(4, 6, rng);
    return gradient_error({p, q, r}, [&](Graph<double>&, const std::vector<Var<double>>& v) {
      return weighted_sum(concat_cols({v[0], v[1], v[2]}), w);
    });
  });
  CHECK(err < kOpTol);
}

TEST_CASE("gather_rows scatter-adds and checks bounds") {
  Graph<double> g;
  Mat table = Mat::Random(4, 3);
  Var<double> t = g.leaf(table);
  const std::vector<Index> twice{0, 0};
  Mat w = Mat::Random(2, 3);
  g.backward(weighted_sum(gather_rows(t, std::span<const Index>(twice)), w));
  CHECK((g.grad(t.id()).row(0) - (w.row(0) + w.row(1))).norm() < 1e-15);
  CHECK(g.grad(t.id()).bottomRows(3).norm() == 0.0);

  const std::vector<Index> all{0, 1, 2, 3};
  CHECK((gather_rows(t, std::span<const Index>(all)).value() - table).norm() == 0.0);
  const std::vector<Index> bad{4};
  CHECK_THROWS_AS(gather_rows(t, std::span<const Index>(bad)), BoundsError);

  const double err = worst_over_seeds([](std::mt19937_64& rng) {
    const Mat tab = random_matrix(5, 3, rng);
    std::uniform_int_distribution<Index> pick(0, 4);
    std::vector<Index> idx(7);
    for (auto& i : idx) i = pick(rng);
    const Mat w = random_matrix(7, 3, rng);
    return gradient_error({tab}, [&](Graph<double>&, const std::vector<Var<double>>& v) {
      return weighted_sum(gather_rows(v[0], std::span<const Index>(idx)), w);
    });
  });
  CHECK(err < kOpTol);
}

TEST_CASE("blend_rows and pick") {
  const double blend_err = worst_over_seeds([](std::mt19937_64& rng) {
    const Mat a = random_matrix(4, 3, rng), b = random_matrix(4, 3, rng), w = random_matrix(4, 3, rng);
    const std::vector<char> mask{1, 0, 0, 1};
    return gradient_error({a, b}, [&](Graph<double>&, const std::vector<Var<double>>& v) {
      return weighted_sum(blend_rows(v[0], v[1], std::span<const char>(mask)), w);
    });
  });
  const double pick_err = worst_over_seeds([](std::mt19937_64& rng) {
    const Mat a = random_matrix(4, 4, rng), w = random_matrix(5, 1, rng);
    const std::vector<std::pair<Index, Index>> at{{0, 1}, {2, 3}, {0, 1}, {3, 0}, {1, 1}};
    return gradient_error({a}, [&](Graph<double>&, const std::vector<Var<double>>& v) {
      return weighted_sum(pick(v[0], std::span<const std::pair<Index, Index>>(at)), w);
    });
  });
  CHECK(blend_err < kOpTol);
  CHECK(pick_err < kOpTol);
}

TEST_CASE("batch_norm") {
  SUBCASE("constant column normalizes to zero in train mode") {
    Graph<double> g;
    BatchNormState<double> st;
    Var<double> y = batch_norm(g.leaf(Mat::Constant(5, 1, 3.0)), st, Mode::train);
    CHECK(y.value().norm() == 0.0);
  }
  SUBCASE("infer mode uses running statistics") {
    Graph<double> g;
    BatchNormState<double> st{5.0, 4.0};
    Var<double> y = batch_norm(g.leaf(Mat::Constant(1, 1, 7.0)), st, Mode::infer, 0.0);
    CHECK(y.value()(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("running statistics update with momentum") {
    Graph<double> g;
    BatchNormState<double> st{0.0, 1.0};
    Mat x(4, 1);
    x << 1, 2, 3, 4;
    batch_norm(g.leaf(x), st, Mode::train, 1e-5, 0.1);
    CHECK(st.running_mean == doctest::Approx(0.25));
    // unbiased batch variance of 1..4 is 5/3
    CHECK(st.running_var == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
  }
  SUBCASE("train mode needs two rows") {
    Graph<double> g;
    BatchNormState<double> st;
    CHECK_THROWS_AS(batch_norm(g.leaf(Mat::Zero(1, 1)), st, Mode::train), BatchError);
  }
  SUBCASE("gradients") {
    const double train_err = worst_over_seeds([](std::mt19937_64& rng) {
      const Mat x = random_matrix(6, 1, rng, -3, 3), w = random_matrix(6, 1, rng);
      return gradient_error({x}, [&](Graph<double>&, const std::vector<Var<double>>& v) {
        BatchNormState<double> st;
        return weighted_sum(batch_norm(v[0], st, Mode::train), w);
      });
    });
    const double infer_err = worst_over_seeds([](std::mt19937_64& rng) {
      const Mat x = random_matrix(6, 1, rng, -3, 3), w = random_matrix(6, 1, rng);
      return gradient_error({x}, [&](Graph<double>&, const std::vector<Var<double>>& v) {
        BatchNormState<double> st{0.3, 2.0};
        return weighted_sum(batch_norm(v[0], st, Mode::infer), w);
      });
    });
    CHECK(train_err < kBatchNormTol);
    CHECK(infer_err < kOpTol);
  }
}

TEST_CASE("l2_normalize") {
  Graph<double> g;
  Mat x(2, 2);
  x << 3, 4, 0.6, 0.8;
  Var<double> y = l2_normalize(g.leaf(x));
  CHECK(y.value()(0, 0) == doctest::Approx(0.6));
  CHECK(y.value()(0, 1) == doctest::Approx(0.8));
  CHECK(std::abs(y.value()(1, 0) - 0.6) < 1e-15);
  CHECK(l2_normalize(g.leaf(Mat::Zero(1, 3))).value().allFinite());

  const double err = worst_over_seeds([](std::mt19937_64& rng) {
    const Mat a = random_matrix(4, 5, rng), w = random_matrix(4, 5, rng);
    return gradient_error({a}, [&](Graph<double>&, const std::vector<Var<double>>& v) {
      return weighted_sum(l2_normalize(v[0]), w);
    });
  });
  CHECK(err < kOpTol);
}

TEST_CASE("sphere_distance") {
  Graph<double> g;
  Mat e(3, 2);
  e << 1, 0, 0, 1, -1, 0;
  Var<double> ve = g.leaf(e);
  Var<double> d = sphere_distance(matmul(ve, transpose(ve)));
  CHECK(std::abs(d.value()(0, 1) - std::sqrt(2.0)) < 1e-12);
  CHECK(std::abs(d.value()(0, 2) - 2.0) < 1e-12);
  CHECK(d.value().diagonal().norm() == 0.0);

  const double err = worst_over_seeds([](std::mt19937_64& rng) {
    const Mat gram = random_matrix(4, 4, rng, -0.9, 0.9), w = random_matrix(4, 4, rng);
    return gradient_error({gram}, [&](Graph<double>&, const std::vector<Var<double>>& v) {
      return weighted_sum(sphere_distance(v[0]), w);
    });
  });
  CHECK(err < kOpTol);
}

TEST_CASE("softmax_cross_entropy") {
  Graph<double> g;
  const std::vector<int> y{0, 1};
  Var<double> l = softmax_cross_entropy(g.leaf(Mat::Zero(2, 4)), std::span<const int>(y));
  CHECK(l.value()(0, 0) == doctest::Approx(std::log(4.0)));
  const std::vector<int> bad{0, 4};
  CHECK_THROWS_AS(softmax_cross_entropy(g.leaf(Mat::Zero(2, 4)), std::span<const int>(bad)), BoundsError);

  const double err = worst_over_seeds([](std::mt19937_64& rng) {
    const Mat z = random_matrix(5, 3, rng, -3, 3);
    const std::vector<int> labels{0, 2, 1, 1, 0};
    return gradient_error({z}, [&](Graph<double>&, const std::vector<Var<double>>& v) {
      return softmax_cross_entropy(v[0], std::span<const int>(labels));
    });
  });
  CHECK(err < kOpTol);
}

TEST_CASE("backward contract") {
  Graph<double> g;
  Var<double> x = g.leaf(Mat::Random(2, 3));
  g.backward(sum(x));
  CHECK((g.grad(x.id()) - Mat::Ones(2, 3)).norm() == 0.0);

  SUBCASE("diamond sums both paths") {
    Graph<double> h;
    Var<double> a = h.leaf(Mat::Constant(1, 1, 0.7));
    Var<double> y = add(square(a), nd::tanh(a));
    h.backward(y);
    const double t = std::tanh(0.7);
    CHECK(h.grad(a.id())(0, 0) == doctest::Approx(2 * 0.7 + (1 - t * t)));
  }
  SUBCASE("leaf gradients accumulate across calls until zero_grad") {
    Graph<double> h;
    Var<double> a = h.leaf(Mat::Constant(1, 1, 2.0));
    Var<double> y = square(a);
    h.backward(y);
    h.backward(y);
    CHECK(h.grad(a.id())(0, 0) == doctest::Approx(8.0));
    h.zero_grad();
    h.backward(y);
    CHECK(h.grad(a.id())(0, 0) == doctest::Approx(4.0));
  }
  SUBCASE("non-scalar loss is rejected") {
    CHECK_THROWS_AS(g.backward(x), ContractError);
  }
  SUBCASE("accumulation order does not matter") {
    std::mt19937_64 rng(5);
    const Mat v = random_matrix(3, 3, rng);
    Graph<double> h1, h2;
    Var<double> a1 = h1.leaf(v), a2 = h2.leaf(v);
    Var<double> l1 = add(add(sum(square(a1)), sum(nd::tanh(a1))), sum(sigmoid(a1)));
    Var<double> l2 = add(sum(sigmoid(a2)), add(sum(nd::tanh(a2)), sum(square(a2))));
    h1.backward(l1);
    h2.backward(l2);
    CHECK((h1.grad(a1.id()) - h2.grad(a2.id())).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("operands from different graphs are rejected") {
    Graph<double> other;
    CHECK_THROWS_AS(add(x, other.leaf(Mat::Zero(2, 3))), ContractError);
  }
}
