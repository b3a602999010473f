#include <doctest.h>

#include <cmath>

#include "fwl/gradcheck.hpp"
#include "fwl/rng.hpp"
#include "fwl/tensor.hpp"

using namespace fwl;

namespace {

Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

}  // namespace

TEST_CASE("matmul forward values") {
  Tape tape;
  Tensor I = Tensor::constant(Matrix::Identity(2, 2));
  Tensor A = Tensor::constant(mat2(1, 2, 3, 4));
  CHECK(matmul(tape, I, A).value() == mat2(1, 2, 3, 4));

  Tensor s1 = Tensor::constant(Matrix::Constant(1, 1, 2.0));
  Tensor s2 = Tensor::constant(Matrix::Constant(1, 1, 3.0));
  CHECK(matmul(tape, s1, s2).value()(0, 0) == 6.0);

  Tensor B = Tensor::constant(mat2(5, 6, 7, 8));
  CHECK(matmul(tape, A, B).value() == mat2(19, 22, 43, 50));
}

TEST_CASE("matmul rejects mismatched inner extents") {
  Tape tape;
  Tensor a = Tensor::constant(Matrix::Zero(2, 3));
  Tensor b = Tensor::constant(Matrix::Zero(2, 2));
  CHECK_THROWS_AS(matmul(tape, a, b), ShapeError);
}

TEST_CASE("outer forward values") {
  Tape tape;
  Tensor e1 = Tensor::constant(vec({1, 0, 0}));
  Tensor e2 = Tensor::constant(vec({0, 1, 0}));
  Matrix basis = outer(tape, e1, e2).value();
  CHECK(basis.sum() == 1.0);
  CHECK(basis(0, 1) == 1.0);

  Tensor u = Tensor::constant(vec({1, 2}));
  Tensor zero = Tensor::constant(vec({0, 0}));
  CHECK(outer(tape, u, zero).value() == Matrix::Zero(2, 2));

  Tensor v = Tensor::constant(vec({3, 4}));
  CHECK(outer(tape, u, v).value() == mat2(3, 4, 6, 8));
}

TEST_CASE("outer rejects non-vector operands") {
  Tape tape;
  Tensor m = Tensor::constant(Matrix::Zero(2, 2));
  Tensor v = Tensor::constant(vec({1, 2}));
  CHECK_THROWS_AS(outer(tape, m, v), ShapeError);
}

TEST_CASE("backward of sum gives all-ones gradient") {
  Tape tape;
  Tensor x = Tensor::param(vec({5, -2, 9}));
  Tensor loss = sum(tape, x);
  tape.backward(loss);
  CHECK(x.grad() == Matrix::Ones(3, 1));
}

TEST_CASE("backward of x.x gives 2x") {
  Tape tape;
  Tensor x = Tensor::param(vec({1, 2}));
  Tensor loss = dot(tape, x, x);
  tape.backward(loss);
  CHECK(x.grad() == Matrix(vec({2, 4})));
}

TEST_CASE("backward requires a scalar loss from the tape") {
  {
    Tape tape;
    Tensor x = Tensor::param(vec({1, 2}));
    Tensor y = scale(tape, x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  }
  {
    Tape tape;
    Tensor detached = Tensor::constant(Matrix::Constant(1, 1, 3.0));
    CHECK_THROWS_AS(tape.backward(detached), std::invalid_argument);
  }
}

TEST_CASE("tape is single use") {
  Tape tape;
  Tensor x = Tensor::param(vec({1}));
  Tensor loss = sum(tape, x);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
}

TEST_CASE("non-finite forward values raise NumericError") {
  Tape tape;
  Tensor x = Tensor::param(Matrix::Constant(1, 1, 1e300));
  CHECK_THROWS_AS(hadamard(tape, x, x), NumericError);  // 1e600 overflows
  CHECK_THROWS_AS(exp(tape, Tensor::param(Matrix::Constant(1, 1, 1e4))),
                  NumericError);
}

TEST_CASE("gradient shapes match value shapes") {
  Rng rng(3);
  RngStream rs = rng.stream("shapes");
  Tape tape;
  Tensor a = Tensor::param(rs.normal_matrix(3, 4));
  Tensor b = Tensor::param(rs.normal_matrix(4, 2));
  Tensor u = Tensor::param(rs.normal_matrix(3, 1));
  Tensor c = matmul(tape, a, b);                      // 3x2
  Tensor d = matmul_tn(tape, a, outer(tape, u, u));   // 4x3
  Tensor loss = add(tape, sum(tape, c), sum(tape, relu(tape, d)));
  tape.backward(loss);
  CHECK(a.grad().rows() == a.rows());
  CHECK(a.grad().cols() == a.cols());
  CHECK(b.grad().rows() == b.rows());
  CHECK(b.grad().cols() == b.cols());
  CHECK(u.grad().rows() == u.rows());
  CHECK(u.grad().cols() == u.cols());
}

TEST_CASE("finite_diff_check on f(x) = x^2 at x = 3") {
  std::vector<Tensor> params{Tensor::param(Matrix::Constant(1, 1, 3.0))};
  ScalarFn f = [](Tape& tape, const std::vector<Tensor>& p) {
    return hadamard(tape, p[0], p[0]);
  };
  CHECK(finite_diff_check(f, params, 1e-5) < 1e-8);
}

TEST_CASE("finite_diff_check enforces the step-size window") {
  std::vector<Tensor> params{Tensor::param(Matrix::Constant(1, 1, 1.0))};
  ScalarFn f = [](Tape& tape, const std::vector<Tensor>& p) {
    return sum(tape, p[0]);
  };
  CHECK_THROWS_AS(finite_diff_check(f, params, 1e-8), std::invalid_argument);
  CHECK_THROWS_AS(finite_diff_check(f, params, 1e-2), std::invalid_argument);
}

TEST_CASE("finite_diff_check detects a non-deterministic function") {
  std::vector<Tensor> params{Tensor::param(Matrix::Constant(1, 1, 1.0))};
  int calls = 0;
  ScalarFn f = [&calls](Tape& tape, const std::vector<Tensor>& p) {
    return scale(tape, sum(tape, p[0]), 1.0 + 0.1 * calls++);
  };
  CHECK_THROWS_AS(finite_diff_check(f, params), std::runtime_error);
}

TEST_CASE("composite graphs match finite differences") {
  Rng rng(17);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngStream rs = rng.stream("composite", seed);
    std::vector<Tensor> params{Tensor::param(rs.normal_matrix(3, 3)),
                               Tensor::param(rs.normal_matrix(3, 1)),
                               Tensor::param(rs.normal_matrix(3, 1))};
    const Matrix target = rs.normal_matrix(3, 1);
    ScalarFn f = [&target](Tape& tape, const std::vector<Tensor>& p) {
      Tensor h = sigmoid(tape, matmul(tape, p[0], p[1]));
      Tensor g = elu1(tape, sub(tape, h, p[2]));
      Tensor mixed = hadamard(tape, g, softmax_cols(tape, p[2]));
      return add(tape, half_squared_error(tape, mixed, target),
                 dot(tape, p[1], p[2]));
    };
    CHECK(finite_diff_check(f, params) < 1e-4);
  }
}

TEST_CASE("relu subgradient at zero is zero") {
  Tape tape;
  Tensor x = Tensor::param(vec({0, -1, 2}));
  Tensor loss = sum(tape, relu(tape, x));
  tape.backward(loss);
  CHECK(x.grad() == Matrix(vec({0, 0, 1})));
}

TEST_CASE("gather_cols scatters gradients back") {
  Tape tape;
  Tensor a = Tensor::param(mat2(1, 2, 3, 4));
  Tensor g = gather_cols(tape, a, {1, 1, 0});
  CHECK(g.value().col(0) == a.value().col(1));
  Tensor loss = sum(tape, g);
  tape.backward(loss);
  CHECK(a.grad() == mat2(1, 2, 1, 2));
}

TEST_CASE("disabled tape records nothing") {
  Tape tape(false);
  Tensor x = Tensor::param(vec({1, 2}));
  Tensor y = dot(tape, x, x);
  CHECK(y.value()(0, 0) == 5.0);
  CHECK(tape.size() == 0);
  CHECK_FALSE(y.requires_grad());
}
