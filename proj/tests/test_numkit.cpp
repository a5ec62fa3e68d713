#include <doctest.h>

#include <cmath>
#include <random>

#include "compfscil/error.hpp"
#include "compfscil/numkit.hpp"
#include "oracles.hpp"

using namespace compfscil;

TEST_CASE("stable_softmax examples") {
  Vector v(3);
  v << 0, 0, 0;
  const Vector p = stable_softmax(v, 1.0);
  for (int i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Vector big(2);
  big << 1000, 0;
  const Vector q = stable_softmax(big, 1.0);
  CHECK(q.allFinite());
  CHECK(q[0] == doctest::Approx(1.0));
  CHECK(q[1] < 1e-300);

  Vector ln2(2);
  ln2 << std::log(2.0), 0.0;
  const Vector r = stable_softmax(ln2, 1.0);
  CHECK(std::abs(r[0] - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(r[1] - 1.0 / 3.0) < 1e-15);
}

TEST_CASE("stable_softmax rejects bad input") {
  CHECK_THROWS_AS(stable_softmax(Vector(0), 1.0), Error);
  Vector v(1);
  v << 1.0;
  CHECK_THROWS_AS(stable_softmax(v, 0.0), Error);
}

TEST_CASE("softmax properties on random logits") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 50.0);
  std::uniform_int_distribution<int> len(1, 40);
  for (int trial = 0; trial < 200; ++trial) {
    Vector v(len(rng));
    for (auto& x : v) x = normal(rng);
    const double tau = 1.0 / 64.0 + trial % 5;
    const Vector p = stable_softmax(v, tau);
    CHECK((p.array() >= 0.0).all());
    CHECK((p.array() <= 1.0).all());
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    Eigen::Index a = 0, b = 0;
    v.maxCoeff(&a);
    p.maxCoeff(&b);
    CHECK(a == b);
    const Vector shifted = stable_softmax((v.array() + 123.25).matrix(), tau);
    CHECK((shifted - p).lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("frobenius_norm examples and scaling") {
  Matrix a(1, 2);
  a << 3, 4;
  CHECK(frobenius_norm(a) == 5.0);
  CHECK(frobenius_norm(Matrix::Zero(3, 4)) == 0.0);
  CHECK(frobenius_norm(Matrix::Ones(2, 2)) == 2.0);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix m = oracle::random_matrix(rng, 1 + trial % 7, 2 + trial % 5);
    const double c = -3.5 + 0.25 * trial;
    const double lhs = frobenius_norm(c * m);
    const double rhs = std::abs(c) * frobenius_norm(m);
    CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(rhs, 1e-300));
  }
}

TEST_CASE("central_diff_grad examples") {
  auto square = [](const Vector& t) { return t[0] * t[0]; };
  Vector theta(1);
  theta << 3.0;
  CHECK(std::abs(central_diff_grad(square, theta, 1e-5)[0] - 6.0) < 1e-8);

  auto constant = [](const Vector&) { return 4.0; };
  Vector t3 = Vector::Ones(3);
  CHECK(central_diff_grad(constant, t3, 1e-5).isZero(0.0));

  auto bad = [](const Vector& t) { return t[0] > 0 ? std::nan("") : 0.0; };
  CHECK_THROWS_AS(central_diff_grad(bad, Vector::Zero(1), 1e-3), Error);
  try {
    central_diff_grad(bad, Vector::Zero(1), 1e-3);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NumericalFailure);
  }
}

TEST_CASE("central_diff_grad is exact on quadratics") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = oracle::random_matrix(rng, 4, 4);
    const Matrix q = a * a.transpose();
    const Vector b = oracle::random_matrix(rng, 4, 1);
    const Vector theta = oracle::random_matrix(rng, 4, 1);
    auto f = [&](const Vector& t) { return 0.5 * t.dot(q * t) + b.dot(t) + 2.0; };
    const Vector exact = q * theta + b;
    for (double eps : {1e-6, 1e-5, 1e-4}) {
      const Vector fd = central_diff_grad(f, theta, eps);
      CHECK(max_relative_error(exact, fd) < 1e-8);
    }
  }
}
