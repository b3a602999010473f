#include <doctest.h>

#include <cmath>
#include <set>

#include "fwl/rng.hpp"

using namespace fwl;

TEST_CASE("identical (seed, purpose, index) triples reproduce draws") {
  Rng a(42), b(42);
  RngStream s1 = a.stream("widget", 7);
  RngStream s2 = b.stream("widget", 7);
  for (int i = 0; i < 100; ++i) CHECK(s1.next_u64() == s2.next_u64());

  RngStream n1 = a.stream("widget", 7);
  RngStream n2 = b.stream("widget", 7);
  for (int i = 0; i < 100; ++i) CHECK(n1.next_normal() == n2.next_normal());
}

TEST_CASE("distinct purposes and indices give distinct streams") {
  Rng rng(42);
  RngStream a = rng.stream("alpha");
  RngStream b = rng.stream("beta");
  RngStream c = rng.stream("alpha", 1);
  const std::uint64_t ua = a.next_u64(), ub = b.next_u64(), uc = c.next_u64();
  CHECK(ua != ub);
  CHECK(ua != uc);
  CHECK(ub != uc);
}

TEST_CASE("distinct master seeds give distinct streams") {
  RngStream a = Rng(1).stream("x");
  RngStream b = Rng(2).stream("x");
  CHECK(a.next_u64() != b.next_u64());
}

TEST_CASE("next_double lies in [0, 1)") {
  RngStream s = Rng(7).stream("unit");
  for (int i = 0; i < 10000; ++i) {
    const double u = s.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("next_below stays in range and hits every residue") {
  RngStream s = Rng(9).stream("below");
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t x = s.next_below(7);
    CHECK(x < 7);
    seen.insert(x);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("next_normal has roughly standard moments") {
  RngStream s = Rng(11).stream("moments");
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = s.next_normal();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("normal_matrix shape and determinism") {
  Rng rng(13);
  RngStream a = rng.stream("mat");
  RngStream b = rng.stream("mat");
  Eigen::MatrixXd m1 = a.normal_matrix(3, 5);
  Eigen::MatrixXd m2 = b.normal_matrix(3, 5);
  CHECK(m1.rows() == 3);
  CHECK(m1.cols() == 5);
  CHECK(m1 == m2);
}
