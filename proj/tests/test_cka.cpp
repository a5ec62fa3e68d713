#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "compfscil/cka.hpp"
#include "compfscil/error.hpp"
#include "oracles.hpp"

using namespace compfscil;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::Io;
}

}  // namespace

TEST_CASE("center_rows examples") {
  CHECK(center_rows(mat({{1, 0}, {0, 1}})).isApprox(mat({{0.5, -0.5}, {-0.5, 0.5}})));
  CHECK(center_rows(mat({{2, 2, 2}})).isZero(0.0));
  const Matrix c = center_rows(mat({{1, 0, 0}}));
  CHECK(std::abs(c(0, 0) - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(c(0, 1) + 1.0 / 3.0) < 1e-15);
  CHECK(kind_of([] { center_rows(mat({{1}, {2}})); }) == ErrorKind::DegenerateInput);

  std::mt19937_64 rng(2);
  const Matrix x = oracle::random_matrix(rng, 7, 9);
  const Matrix centered = center_rows(x);
  CHECK(centered.rowwise().mean().cwiseAbs().maxCoeff() < 1e-14);
  CHECK((centered - x * oracle::centering(9)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("linear_cka hand-evaluated values") {
  CHECK(std::abs(linear_cka(mat({{1, 0}, {0, 1}}), mat({{2, 0}})) - 1.0) < 1e-12);
  CHECK(std::abs(linear_cka(mat({{1, 0, 0}}), mat({{0, 1, 0}})) - 0.25) < 1e-12);
  std::mt19937_64 rng(8);
  const Matrix x = oracle::random_matrix(rng, 5, 6);
  CHECK(std::abs(linear_cka(x, x) - 1.0) < 1e-12);
}

TEST_CASE("linear_cka agrees with the explicit-centering oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix x = oracle::random_matrix(rng, 1 + trial % 9, 2 + trial % 13);
    const Matrix z = oracle::random_matrix(rng, 1 + trial % 5, x.cols());
    CHECK(std::abs(linear_cka(x, z) - oracle::linear_cka(x, z)) < 1e-12);
  }
}

TEST_CASE("linear_cka degenerate operands") {
  CHECK(kind_of([] { linear_cka(mat({{3, 3, 3}}), mat({{1, 2, 3}})); }) == ErrorKind::DegenerateSet);
  CHECK(kind_of([] { linear_cka(mat({{1, 2, 3}}), mat({{0, 0, 0}})); }) == ErrorKind::DegenerateSet);
  CHECK(kind_of([] { linear_cka(mat({{1, 2, 3}}), mat({{1, 2}})); }) == ErrorKind::InvalidInput);
}

TEST_CASE("power_transform examples") {
  const Matrix x = mat({{4, 0.25}, {-1, 3}});
  CHECK(power_transform(x, 1.0) == x);
  CHECK(power_transform(mat({{4, 0.25}}), 0.5).isApprox(mat({{2, 0.5}})));
  CHECK(power_transform(mat({{-4}}), 0.5)(0, 0) == doctest::Approx(-2.0));
  CHECK(kind_of([] { power_transform(mat({{1}}), 0.0); }) == ErrorKind::InvalidInput);
  CHECK(kind_of([] { power_transform(mat({{1}}), 1.5); }) == ErrorKind::InvalidInput);
  // Monotone on nonnegative entries.
  const Matrix ramp = mat({{0, 0.1, 0.5, 1, 2, 10}});
  const Matrix t = power_transform(ramp, 0.3);
  for (int j = 1; j < 6; ++j) CHECK(t(0, j) > t(0, j - 1));
}

TEST_CASE("composition_score examples") {
  FeatureMap m;
  m.x = mat({{4, 0}, {0, 4}});
  CHECK(std::abs(composition_score(m, mat({{2, 0}}), 0.5).value - 1.0) < 1e-12);

  std::mt19937_64 rng(4);
  m.x = oracle::random_matrix(rng, 6, 8).cwiseAbs();
  const Matrix z = oracle::random_matrix(rng, 3, 8);
  CHECK(composition_score(m, z, 1.0).value == linear_cka(m.x, z));

  m.x = mat({{1, 0, 1, 0}, {0, 0, 1, 1}, {1, 1, 0, 0}});
  const Matrix z4 = z.leftCols(4);
  CHECK(composition_score(m, z4, 0.5).value == linear_cka(m.x, z4));
}

TEST_CASE("match_weights examples and reconstruction") {
  const MatchWeights w = match_weights(mat({{1, 0, 0}}), mat({{0, 1, 0}}));
  CHECK(std::abs(w.w(0, 0) + 0.75) < 1e-12);
  CHECK(std::abs(w.w(0, 0) * (-1.0 / 3.0) - 0.25) < 1e-12);

  // Z orthogonal to X after centering.
  const MatchWeights zero = match_weights(mat({{1, -1, 0, 0}}), mat({{0, 0, 1, -1}}));
  CHECK(zero.w.isZero(0.0));

  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = oracle::random_matrix(rng, 1 + trial % 8, 3 + trial % 6);
    const Matrix z = trial % 5 == 0 ? x : oracle::random_matrix(rng, 1 + trial % 4, x.cols());
    const Matrix dots = center_rows(x) * center_rows(z).transpose();
    const double recon = match_weights(x, z).w.cwiseProduct(dots).sum();
    CHECK(std::abs(recon - linear_cka(x, z)) < 1e-9);
  }
}

TEST_CASE("patch_importance examples") {
  const Vector single = patch_importance(mat({{1, 0, 0}}), mat({{0, 1, 0}}));
  REQUIRE(single.size() == 1);
  CHECK(std::abs(single[0] - 0.25) < 1e-12);

  // Second row is orthogonal to Z after centering.
  const Vector two = patch_importance(mat({{1, 2, 0, 0}, {0, 0, 1, -1}}), mat({{1, 2, 0, 0}}));
  CHECK(two[1] == 0.0);
  CHECK(two[0] > 0.0);

  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = oracle::random_matrix(rng, 1 + trial % 11, 2 + trial % 7);
    const Matrix z = oracle::random_matrix(rng, 1 + trial % 3, x.cols());
    const Vector imp = patch_importance(x, z);
    CHECK((imp.array() >= 0.0).all());
    CHECK(std::abs(imp.sum() - linear_cka(x, z)) < 1e-9);
  }
}

TEST_CASE("allmatch_similarity examples") {
  const Matrix x = mat({{1, 0}, {0, 1}});
  const Matrix z = mat({{1, 0}});
  CHECK(std::abs(allmatch_similarity(x, z, MatchMode::Mean) - 0.5) < 1e-15);
  CHECK(std::abs(allmatch_similarity(x, z, MatchMode::Max) - 0.5) < 1e-15);
  const Matrix same = mat({{0.3, -2, 5}});
  CHECK(std::abs(allmatch_similarity(same, same, MatchMode::Mean) - 1.0) < 1e-15);
  CHECK(std::abs(allmatch_similarity(same, same, MatchMode::Max) - 1.0) < 1e-15);
  CHECK(kind_of([] { allmatch_similarity(mat({{0, 0}}), mat({{1, 0}}), MatchMode::Mean); }) ==
        ErrorKind::DegenerateInput);

  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = oracle::random_matrix(rng, 1 + trial % 9, 2 + trial % 5);
    const Matrix b = oracle::random_matrix(rng, 1 + trial % 4, a.cols());
    CHECK(std::abs(allmatch_similarity(a, b, MatchMode::Mean) -
                   oracle::averaged_normalized_dot(a, b)) < 1e-9);
    CHECK(allmatch_similarity(a, b, MatchMode::Max) >= allmatch_similarity(a, b, MatchMode::Mean) - 1e-12);
  }
}

TEST_CASE("cka_rc examples") {
  const Matrix a = mat({{1, 0}, {0, 1}, {1, 1}});
  const Matrix b = a.col(0);
  // Hand evaluation with H_3: 5 / sqrt(40).
  const double expected = 5.0 / std::sqrt(40.0);
  CHECK(std::abs(oracle::cka_rc(a, b) - expected) < 1e-12);
  CHECK(std::abs(cka_rc(a, b) - expected) < 1e-12);
  CHECK(std::abs(cka_rc(a, -b) - expected) < 1e-12);
  CHECK(std::abs(cka_rc(a, a) - 1.0) < 1e-12);
  CHECK(std::abs(cka_rc(a, 3.5 * a) - 1.0) < 1e-12);
  CHECK(kind_of([] { cka_rc(mat({{1, 2}, {1, 2}}), mat({{1}, {2}})); }) == ErrorKind::DegenerateSet);
  CHECK(kind_of([] { cka_rc(mat({{1, 2}}), mat({{1}})); }) == ErrorKind::InvalidInput);

  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix p = oracle::random_matrix(rng, 4 + trial % 6, 2 + trial % 4);
    const Matrix q = oracle::random_matrix(rng, p.rows(), 1 + trial % 5);
    const double v = cka_rc(p, q);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-12);
    CHECK(std::abs(v - oracle::cka_rc(p, q)) < 1e-10);
    const Matrix rot = oracle::random_orthogonal(rng, p.cols());
    CHECK(std::abs(cka_rc(p * rot, q) - v) < 1e-10);
  }
}

TEST_CASE("linear_cka invariants on random sets") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index d = 2 + trial % 17;
    const Matrix x = oracle::random_matrix(rng, 1 + trial % 12, d);
    const Matrix z = oracle::random_matrix(rng, 1 + trial % 6, d);
    const double s = linear_cka(x, z);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0 + 1e-12);
    CHECK(std::abs(s - linear_cka(z, x)) < 1e-12);
    CHECK(std::abs(linear_cka(-2.5 * x, z) - s) <= 1e-12 * std::max(s, 1.0));
    const Matrix q = oracle::random_orthogonal(rng, x.rows());
    CHECK(std::abs(linear_cka(q * x, z) - s) < 1e-9);
    std::vector<int> perm(static_cast<std::size_t>(d));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix xp(x.rows(), d), zp(z.rows(), d);
    for (Eigen::Index j = 0; j < d; ++j) {
      xp.col(j) = x.col(perm[static_cast<std::size_t>(j)]);
      zp.col(j) = z.col(perm[static_cast<std::size_t>(j)]);
    }
    CHECK(std::abs(linear_cka(xp, zp) - s) < 1e-12);
  }
}
