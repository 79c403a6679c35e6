#include "handmask/autodiff.hpp"
#include "handmask/optim.hpp"
#include "handmask/parameters.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace handmask;
using handmask::testing::elementwise_gradient_error;
using handmask::testing::random_matrix;

namespace {

// Scalar readout sum(out .* R) so every output element gets its own weight.
Var<double> readout(Graph<double>& g, Var<double> out, Rng& rng) {
  return sum(hadamard(out, g.constant(random_matrix(out.rows(), out.cols(), rng))));
}

void check_op(const char* name, int instances, const std::function<std::vector<Eigen::MatrixXd>(Rng&)>& inputs,
              const std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>& op) {
  Rng rng(std::hash<std::string>{}(name));
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const std::uint64_t readout_seed = rng();
    worst = std::max(worst, elementwise_gradient_error(inputs(rng), [&](Graph<double>& g, const std::vector<Var<double>>& v) {
      Rng r(readout_seed);
      return readout(g, op(g, v), r);
    }));
  }
  INFO(std::string(name));
  CHECK_MESSAGE(worst < 1e-5, std::string(name));
}

}  // namespace

TEST_CASE("x squared at 3") {
  Graph<double> g;
  Var<double> x = g.variable(Eigen::MatrixXd::Constant(1, 1, 3.0));
  Var<double> y = square(x);
  g.backward(y);
  CHECK(y.value()(0, 0) == 9.0);
  CHECK(g.grad(x)(0, 0) == 6.0);
}

TEST_CASE("sin derivative at zero") {
  Graph<double> g;
  Var<double> x = g.variable(Eigen::MatrixXd::Zero(1, 1));
  g.backward(sin(x));
  CHECK(g.grad(x)(0, 0) == 1.0);
}

TEST_CASE("non-scalar loss is rejected") {
  Graph<double> g;
  Var<double> x = g.variable(Eigen::MatrixXd::Ones(2, 2));
  CHECK_THROWS_AS(g.backward(x), NumericError);
}

TEST_CASE("non-finite forward value names the operation") {
  Graph<double> g;
  Var<double> x = g.variable(Eigen::MatrixXd::Constant(1, 1, 1e200));
  try {
    typename Graph<double>::Scope scope(g, "block");
    square(x);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string what = e.what();
    CHECK(what.find("square") != std::string::npos);
    CHECK(what.find("block") != std::string::npos);
  }
}

TEST_CASE("random three-layer composite matches central differences") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    ParameterStore<double> store;
    store.add("w1", random_matrix(4, 6, rng, 0.5));
    store.add("b1", random_matrix(1, 6, rng, 0.1));
    store.add("w2", random_matrix(6, 5, rng, 0.5));
    store.add("g", random_matrix(1, 5, rng));
    store.add("b", random_matrix(1, 5, rng));
    store.add("w3", random_matrix(5, 3, rng, 0.5));
    const Eigen::MatrixXd x = random_matrix(7, 4, rng);
    auto loss = [&](ParameterBinding<double>& p) {
      Graph<double>& g = p.graph();
      Var<double> h = softplus(add_row(matmul(g.constant(x), p[0]), p[1]));
      h = layer_norm_rows(matmul(h, p[2]), p[3], p[4]);
      h = softmax_rows(matmul(h, p[5]));
      return sum(square(sub(h, g.constant(Eigen::MatrixXd::Constant(7, 3, 0.3)))));
    };
    CHECK(handmask::testing::directional_gradient_error(store, loss, 10, rng) < 1e-5);
  }
}

TEST_CASE("every operation matches central differences") {
  constexpr int n = 50;
  auto one = [](Eigen::Index r, Eigen::Index c) {
    return [r, c](Rng& rng) { return std::vector<Eigen::MatrixXd>{random_matrix(r, c, rng)}; };
  };
  auto two = [](Eigen::Index r1, Eigen::Index c1, Eigen::Index r2, Eigen::Index c2) {
    return [=](Rng& rng) { return std::vector<Eigen::MatrixXd>{random_matrix(r1, c1, rng), random_matrix(r2, c2, rng)}; };
  };
  using V = std::vector<Var<double>>;
  check_op("matmul", n, two(3, 4, 4, 2), [](Graph<double>&, const V& v) { return matmul(v[0], v[1]); });
  check_op("add", n, two(3, 4, 3, 4), [](Graph<double>&, const V& v) { return add(v[0], v[1]); });
  check_op("sub", n, two(3, 4, 3, 4), [](Graph<double>&, const V& v) { return sub(v[0], v[1]); });
  check_op("add_row", n, two(3, 4, 1, 4), [](Graph<double>&, const V& v) { return add_row(v[0], v[1]); });
  check_op("scale", n, one(3, 4), [](Graph<double>&, const V& v) { return scale(v[0], 2.5); });
  check_op("hadamard", n, two(3, 4, 3, 4), [](Graph<double>&, const V& v) { return hadamard(v[0], v[1]); });
  check_op("relu", n, one(3, 4), [](Graph<double>&, const V& v) { return relu(v[0]); });
  check_op("softplus", n, one(3, 4), [](Graph<double>&, const V& v) { return softplus(v[0]); });
  check_op("sin", n, one(3, 4), [](Graph<double>&, const V& v) { return sin(v[0]); });
  check_op("cos", n, one(3, 4), [](Graph<double>&, const V& v) { return cos(v[0]); });
  check_op("square", n, one(3, 4), [](Graph<double>&, const V& v) { return square(v[0]); });
  check_op("abs", n, one(3, 4), [](Graph<double>&, const V& v) { return abs(v[0]); });
  check_op("sum", n, one(3, 4), [](Graph<double>&, const V& v) { return sum(v[0]); });
  check_op("transpose", n, one(3, 4), [](Graph<double>&, const V& v) { return transpose(v[0]); });
  check_op("softmax_rows", n, one(3, 5), [](Graph<double>&, const V& v) { return softmax_rows(v[0]); });
  check_op("layer_norm_rows", n,
           [](Rng& rng) {
             return std::vector<Eigen::MatrixXd>{random_matrix(3, 6, rng), random_matrix(1, 6, rng), random_matrix(1, 6, rng)};
           },
           [](Graph<double>&, const V& v) { return layer_norm_rows(v[0], v[1], v[2]); });
  check_op("slice_cols", n, one(3, 6), [](Graph<double>&, const V& v) { return slice_cols(v[0], 1, 3); });
  check_op("slice_rows", n, one(5, 3), [](Graph<double>&, const V& v) { return slice_rows(v[0], 2, 2); });
  check_op("concat_cols", n, two(3, 2, 3, 4), [](Graph<double>&, const V& v) { return concat_cols<double>({v[0], v[1]}); });
  check_op("concat_rows", n, two(2, 3, 4, 3), [](Graph<double>&, const V& v) { return concat_rows<double>({v[0], v[1]}); });
  check_op("gather_rows", n, one(3, 4), [](Graph<double>&, const V& v) { return gather_rows(v[0], {2, 0, 2, 1}); });
  check_op("block_left_multiply", n, one(6, 2), [](Graph<double>&, const V& v) {
    Eigen::MatrixXd a(3, 3);
    a << 1, 2, 0, -1, 0.5, 3, 0, 1, 1;
    return block_left_multiply(a, v[0]);
  });
  check_op("reshape", n, one(4, 6), [](Graph<double>&, const V& v) { return reshape(v[0], 2, 12); });
  check_op("mask_multiply", n, one(3, 4), [](Graph<double>&, const V& v) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Ones(3, 4);
    m(1, 2) = 0.0;
    m(0, 0) = 2.0;
    return mask_multiply(v[0], m);
  });
  check_op("weighted_l1", n, one(3, 4), [](Graph<double>&, const V& v) {
    return weighted_l1(v[0], Matrix<double>(Eigen::MatrixXd::Constant(3, 4, 0.1)), Matrix<double>(Eigen::MatrixXd::Constant(3, 4, 0.7)));
  });
  check_op("cross_entropy", n, one(1, 5), [](Graph<double>&, const V& v) { return cross_entropy(v[0], 3); });
}

TEST_CASE("adam with zero gradient and zero decay is the identity") {
  Rng rng(3);
  std::vector<Matrix<double>> params{random_matrix(3, 2, rng), random_matrix(1, 4, rng)};
  const auto before = params;
  OptimizerConfig c;
  c.weight_decay = 0.0;
  AdamState<double> state(c, std::span<const Matrix<double>>(params));
  std::vector<Matrix<double>> grads{Matrix<double>::Zero(3, 2), Matrix<double>::Zero(1, 4)};
  for (int i = 0; i < 5; ++i)
    adam_step(state, std::span<Matrix<double>>(params), std::span<const Matrix<double>>(grads), 1e-3);
  CHECK(params[0] == before[0]);
  CHECK(params[1] == before[1]);
  CHECK(state.step == 5);
}

TEST_CASE("adam first step on a scalar") {
  OptimizerConfig c;
  c.weight_decay = 0.0;
  std::vector<Matrix<double>> x{Matrix<double>::Ones(1, 1)};
  AdamState<double> state(c, std::span<const Matrix<double>>(x));
  std::vector<Matrix<double>> g{Matrix<double>::Ones(1, 1)};
  adam_step(state, std::span<Matrix<double>>(x), std::span<const Matrix<double>>(g), 0.001);
  // m_hat = 1, v_hat = 1.
  CHECK(x[0](0, 0) == doctest::Approx(1.0 - 0.001 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(x[0](0, 0) == doctest::Approx(0.999).epsilon(1e-9));
}

TEST_CASE("adam folds weight decay into the gradient") {
  OptimizerConfig c;
  c.weight_decay = 0.5;
  std::vector<Matrix<double>> x{Matrix<double>::Constant(1, 1, 2.0)};
  AdamState<double> state(c, std::span<const Matrix<double>>(x));
  std::vector<Matrix<double>> g{Matrix<double>::Zero(1, 1)};
  adam_step(state, std::span<Matrix<double>>(x), std::span<const Matrix<double>>(g), 0.01);
  // effective gradient 1.0 -> normalised step of lr
  CHECK(x[0](0, 0) == doctest::Approx(2.0 - 0.01 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(state.first_moment[0](0, 0) == doctest::Approx(0.1));
}

TEST_CASE("adam rejects shape mismatch") {
  OptimizerConfig c;
  std::vector<Matrix<double>> x{Matrix<double>::Ones(2, 2)};
  AdamState<double> state(c, std::span<const Matrix<double>>(x));
  std::vector<Matrix<double>> g{Matrix<double>::Ones(2, 3)};
  CHECK_THROWS_AS(adam_step(state, std::span<Matrix<double>>(x), std::span<const Matrix<double>>(g), 1e-3),
                  std::invalid_argument);
  std::vector<Matrix<double>> none;
  CHECK_THROWS_AS(adam_step(state, std::span<Matrix<double>>(x), std::span<const Matrix<double>>(none), 1e-3),
                  std::invalid_argument);
}

TEST_CASE("learning-rate schedule") {
  OptimizerConfig c;
  CHECK(learning_rate_at(c, 0) == 0.001);
  CHECK(learning_rate_at(c, 19) == 0.001);
  CHECK(learning_rate_at(c, 20) == doctest::Approx(0.0001).epsilon(1e-15));
  CHECK(learning_rate_at(c, 40) == doctest::Approx(0.00001).epsilon(1e-15));
  for (int e = 0; e < 100; ++e) CHECK(learning_rate_at(c, e) == 0.001 * std::pow(0.1, e / 20));
  CHECK_THROWS(learning_rate_at(c, -1));
}

TEST_CASE("uniform initialisation bound") {
  Rng rng(5);
  ParameterStore<float> store;
  const int id = store.add_weight("w", 30, 10, rng);
  const double bound = std::sqrt(6.0 / 40.0);
  CHECK(store.value(id).cwiseAbs().maxCoeff() <= bound);
  CHECK(store.value(id).cwiseAbs().maxCoeff() > 0.8 * bound);
  CHECK_THROWS(store.add_zeros("w", 1, 1));
}
