#include <doctest.h>

#include <cmath>

#include "fwl/feature_maps.hpp"
#include "fwl/gradcheck.hpp"
#include "fwl/rng.hpp"

using namespace fwl;

namespace {

Matrix col(std::initializer_list<double> xs) {
  Matrix v(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) v(i++, 0) = x;
  return v;
}

}  // namespace

TEST_CASE("elu1 values") {
  Matrix y = phi_elu1<double>(col({0, 2, -1}));
  CHECK(y(0, 0) == 1.0);
  CHECK(y(1, 0) == 3.0);
  CHECK(y(2, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("identity map passes input through") {
  Matrix x = col({1, -2});
  CHECK(phi_identity<double>(x) == x);
}

TEST_CASE("favor at x = 0 with one feature") {
  Matrix r(1, 2);
  r << 0.3, -0.7;  // arbitrary; exp(Rx) = 1 at x = 0
  Matrix y = phi_favor<double>(Matrix(col({0, 0})), r);
  CHECK(y.rows() == 2);
  CHECK(y(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));
  CHECK(y(1, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("favor rejects empty feature matrices and bad shapes") {
  Matrix x = col({1, 2});
  CHECK_THROWS_AS(phi_favor<double>(x, Matrix(0, 2)), std::invalid_argument);
  CHECK_THROWS_AS(phi_favor<double>(x, Matrix::Zero(3, 5)), ShapeError);
  Rng rng(1);
  CHECK_THROWS_AS(make_feature_map(PhiKind::Favor, 2, 1, 0, false, rng),
                  std::invalid_argument);
}

TEST_CASE("dimension law across a configuration grid") {
  Rng rng(2);
  for (int d_key : {2, 4, 16, 64}) {
    CHECK(make_feature_map(PhiKind::Identity, d_key, 1, 0, false, rng).d_dot() ==
          d_key);
    CHECK(make_feature_map(PhiKind::Elu1, d_key, 1, 0, false, rng).d_dot() ==
          d_key);
    for (int m : {1, 8, 128})
      CHECK(make_feature_map(PhiKind::Favor, d_key, 1, m, false, rng).d_dot() ==
            2 * m);
    for (int nu : {1, 2, 3})
      CHECK(make_feature_map(PhiKind::Dpfp, d_key, nu, 0, false, rng).d_dot() ==
            2 * d_key * nu);
  }
  // reference sizes: d_key=64 gives 256 favor features at m=128 and
  // 128/256/384 dpfp features at nu=1/2/3
  RngStream rs = rng.stream("dims");
  Matrix x64 = rs.normal_matrix(64, 3);
  CHECK(phi_favor<double>(x64, rs.normal_matrix(128, 64)).rows() == 256);
  CHECK(phi_dpfp<double>(x64, 1).rows() == 128);
  CHECK(phi_dpfp<double>(x64, 2).rows() == 256);
  CHECK(phi_dpfp<double>(x64, 3).rows() == 384);
}

TEST_CASE("dpfp nu out of range is rejected") {
  Matrix x = col({1, 2});
  CHECK_THROWS_AS(phi_dpfp<double>(x, 0), std::invalid_argument);
  CHECK_THROWS_AS(phi_dpfp<double>(x, 4), std::invalid_argument);
  Rng rng(3);
  CHECK_THROWS_AS(make_feature_map(PhiKind::Dpfp, 2, 4, 0, false, rng),
                  std::invalid_argument);
}

TEST_CASE("dpfp hand trace: x = (1,1), nu = 1") {
  Matrix y = phi_dpfp<double>(Matrix(col({1, 1})), 1);
  CHECK(y.rows() == 4);
  int nonzero = 0;
  for (Eigen::Index i = 0; i < 4; ++i)
    if (y(i, 0) != 0.0) {
      ++nonzero;
      CHECK(y(i, 0) == 1.0);
    }
  CHECK(nonzero == 1);
}

TEST_CASE("dpfp quadrant orthogonality at d_key = 2, nu = 1") {
  Rng rng(4);
  RngStream rs = rng.stream("quadrants");
  const double sx[4] = {1, 1, -1, -1};
  const double sy[4] = {1, -1, 1, -1};
  for (int trial = 0; trial < 50; ++trial) {
    for (int qa = 0; qa < 4; ++qa) {
      for (int qb = 0; qb < 4; ++qb) {
        if (qa == qb) continue;
        Matrix a = col({sx[qa] * (0.1 + rs.next_double()),
                        sy[qa] * (0.1 + rs.next_double())});
        Matrix b = col({sx[qb] * (0.1 + rs.next_double()),
                        sy[qb] * (0.1 + rs.next_double())});
        Matrix fa = phi_dpfp<double>(a, 1);
        Matrix fb = phi_dpfp<double>(b, 1);
        CHECK(fa.col(0).dot(fb.col(0)) == 0.0);
      }
    }
  }
}

TEST_CASE("positivity of elu1, favor and dpfp outputs") {
  Rng rng(5);
  RngStream rs = rng.stream("positivity");
  Matrix r = rs.normal_matrix(4, 6);
  for (int i = 0; i < 1000; ++i) {
    Matrix x = 3.0 * rs.normal_matrix(6, 1);
    CHECK(phi_elu1<double>(x).minCoeff() > 0.0);
    CHECK(phi_favor<double>(x, r).minCoeff() > 0.0);
    CHECK(phi_dpfp<double>(x, 2).minCoeff() >= 0.0);
  }
}

TEST_CASE("sum_normalize values") {
  Matrix onehot = sum_normalize<double>(col({0, 1, 0}));
  CHECK((onehot - col({0, 1, 0})).lpNorm<Eigen::Infinity>() < 2e-6);

  Matrix uniform = sum_normalize<double>(col({2, 2, 2, 2}));
  for (Eigen::Index i = 0; i < 4; ++i)
    CHECK(uniform(i, 0) == doctest::Approx(0.25).epsilon(1e-5));

  Matrix pair = sum_normalize<double>(col({1, 3}));
  CHECK(pair(0, 0) == doctest::Approx(0.25).epsilon(1e-5));
  CHECK(pair(1, 0) == doctest::Approx(0.75).epsilon(1e-5));

  // zero vector is guarded, not a division by zero
  CHECK(sum_normalize<double>(Matrix(col({0, 0}))).allFinite());
}

TEST_CASE("sum-normalized columns sum to one") {
  Rng rng(6);
  RngStream rs = rng.stream("sumnorm");
  for (int i = 0; i < 100; ++i) {
    Matrix y = phi_elu1<double>(rs.normal_matrix(8, 1));
    // guard bias is eps / sum(y); tight tolerance needs a large sum
    CHECK(std::abs(sum_normalize<double>(y).sum() - 1.0) < 1e-5);
    Matrix big = 1e5 * y;
    CHECK(std::abs(sum_normalize<double>(big).sum() - 1.0) < 1e-10);
  }
}

TEST_CASE("favor redraw determinism") {
  Rng rng(7);
  FeatureMap fm = make_feature_map(PhiKind::Favor, 4, 1, 8, false, rng);
  fm.redraw_policy = RedrawPolicy::PerMinibatch;
  FeatureMap a = redraw_features(fm, rng, 3);
  FeatureMap b = redraw_features(fm, rng, 3);
  CHECK(a.random_features == b.random_features);
  FeatureMap c = redraw_features(fm, rng, 4);
  CHECK(a.random_features != c.random_features);
  CHECK(a.random_features != fm.random_features);

  FeatureMap fixed = fm;
  fixed.redraw_policy = RedrawPolicy::Fixed;
  CHECK(redraw_features(fixed, rng, 9).random_features == fm.random_features);

  FeatureMap dp = make_feature_map(PhiKind::Dpfp, 4, 1, 0, false, rng);
  CHECK_THROWS_AS(redraw_features(dp, rng, 0), std::invalid_argument);
}

TEST_CASE("favor Monte-Carlo estimate tracks exp(q.k)") {
  Rng rng(8);
  RngStream rs = rng.stream("favor-mc");
  const int d = 4;
  Eigen::VectorXd q = rs.normal_matrix(d, 1);
  Eigen::VectorXd k = rs.normal_matrix(d, 1);
  q /= std::max(1.0, q.norm());
  k /= std::max(1.0, k.norm());
  const int n_draws = 20000;
  double acc = 0.0;
  Matrix qm = q, km = k;
  for (int i = 0; i < n_draws; ++i) {
    Matrix r = rs.normal_matrix(1, d);
    acc += phi_favor<double>(qm, r).col(0).dot(phi_favor<double>(km, r).col(0));
  }
  const double est = acc / n_draws;
  const double exact = std::exp(q.dot(k));
  CHECK(std::abs(est - exact) / exact < 0.05);
}

TEST_CASE("differentiable feature maps match finite differences") {
  Rng rng(9);
  for (PhiKind kind :
       {PhiKind::Identity, PhiKind::Elu1, PhiKind::Favor, PhiKind::Dpfp}) {
    for (bool normalized : {false, true}) {
      FeatureMap fm = make_feature_map(kind, 4, 2, 6, normalized, rng);
      RngStream rs = rng.stream("phi-gradcheck",
                                static_cast<std::uint64_t>(kind) * 2 +
                                    (normalized ? 1 : 0));
      std::vector<Tensor> params{Tensor::param(0.5 * rs.normal_matrix(4, 3))};
      const Matrix weights = rs.normal_matrix(fm.d_dot(), 3);
      ScalarFn f = [&fm, &weights](Tape& tape, const std::vector<Tensor>& p) {
        Tensor y = apply_phi(tape, fm, p[0]);
        return sum(tape, hadamard(tape, y, Tensor::constant(weights)));
      };
      CHECK(finite_diff_check(f, params) < 1e-4);
    }
  }
}

TEST_CASE("apply_phi matches the raw kernels and checks input dims") {
  Rng rng(10);
  RngStream rs = rng.stream("apply");
  Matrix x = rs.normal_matrix(4, 5);
  for (PhiKind kind :
       {PhiKind::Identity, PhiKind::Elu1, PhiKind::Favor, PhiKind::Dpfp}) {
    FeatureMap fm = make_feature_map(kind, 4, 2, 6, true, rng);
    Tape tape;
    Tensor y = apply_phi(tape, fm, Tensor::constant(x));
    CHECK((y.value() - fm.apply(x)).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK_THROWS_AS(apply_phi(tape, fm, Tensor::constant(Matrix::Zero(3, 1))),
                    ShapeError);
  }
}
