#pragma once

// Test-only reference computations. Each one evaluates its formula directly (explicit centering
// matrices, explicit Gram matrices, explicit sums) and shares no code path with the library
// beyond the Matrix type.

#include <cmath>
#include <cstdint>
#include <random>

#include "compfscil/numkit.hpp"

namespace oracle {

using compfscil::Matrix;
using compfscil::Vector;

inline Matrix centering(Eigen::Index n) {
  return Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
}

/// Linear CKA between row sets: X~ = X H_d, Gram-based form with explicit loops.
inline double linear_cka(const Matrix& x, const Matrix& z) {
  const Matrix h = centering(x.cols());
  const Matrix xc = x * h;
  const Matrix zc = z * h;
  double cross = 0.0;
  for (Eigen::Index i = 0; i < xc.rows(); ++i) {
    for (Eigen::Index k = 0; k < zc.rows(); ++k) {
      double dot = 0.0;
      for (Eigen::Index j = 0; j < xc.cols(); ++j) dot += xc(i, j) * zc(k, j);
      cross += dot * dot;
    }
  }
  const Matrix gx = xc * xc.transpose();
  const Matrix gz = zc * zc.transpose();
  return cross / (std::sqrt(gx.cwiseProduct(gx).sum()) * std::sqrt(gz.cwiseProduct(gz).sum()));
}

/// HSIC(K, L) = tr(K H L H) / (b-1)^2 with explicit H.
inline double hsic(const Matrix& k, const Matrix& l) {
  const Eigen::Index b = k.rows();
  const Matrix h = centering(b);
  return (k * h * l * h).trace() / static_cast<double>((b - 1) * (b - 1));
}

inline double cka_rc(const Matrix& a, const Matrix& b) {
  const Matrix k = a * a.transpose();
  const Matrix l = b * b.transpose();
  return hsic(k, l) / std::sqrt(hsic(k, k) * hsic(l, l));
}

/// Dot product of the averaged row-normalized vectors of X and Z.
inline double averaged_normalized_dot(const Matrix& x, const Matrix& z) {
  Vector mx = Vector::Zero(x.cols());
  Vector mz = Vector::Zero(z.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) mx += x.row(i).transpose() / x.row(i).norm();
  for (Eigen::Index k = 0; k < z.rows(); ++k) mz += z.row(k).transpose() / z.row(k).norm();
  return (mx / static_cast<double>(x.rows())).dot(mz / static_cast<double>(z.rows()));
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

inline Matrix random_orthogonal(std::mt19937_64& rng, Eigen::Index n) {
  const Matrix a = random_matrix(rng, n, n);
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ() * Matrix::Identity(n, n);
}

}  // namespace oracle
