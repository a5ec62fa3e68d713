#include "compfscil/cka.hpp"

#include <cmath>

#include "compfscil/error.hpp"

namespace compfscil {
namespace {

// Relative threshold below which a centered set counts as identically zero.
constexpr double kDegenerateRel = 1e-12;

double gram_norm(const Matrix& centered) {
  // ||S S^T||_F == ||S^T S||_F; use the smaller Gram.
  if (centered.rows() <= centered.cols()) return (centered * centered.transpose()).norm();
  return (centered.transpose() * centered).norm();
}

void check_same_width(const Matrix& x, const Matrix& z) {
  if (x.cols() != z.cols()) {
    fail(ErrorKind::InvalidInput, "channel mismatch: " + std::to_string(x.cols()) + " vs " +
                                      std::to_string(z.cols()));
  }
}

}  // namespace

Matrix center_rows(const Matrix& x) {
  if (x.cols() < 2) fail(ErrorKind::DegenerateInput, "row centering needs at least 2 channels");
  Matrix out = x;
  out.colwise() -= x.rowwise().mean();
  return out;
}

CenteredSet prepare_set(const Matrix& x) {
  if (x.rows() < 1) fail(ErrorKind::InvalidInput, "empty set");
  CenteredSet out;
  out.centered = center_rows(x);
  const double raw = x.norm();
  const double centered = out.centered.norm();
  if (!(centered > kDegenerateRel * raw) || centered == 0.0) {
    fail(ErrorKind::DegenerateSet, "set is constant along channels after centering");
  }
  out.gram_norm = gram_norm(out.centered);
  return out;
}

double linear_cka(const CenteredSet& x, const CenteredSet& z) {
  check_same_width(x.centered, z.centered);
  const double cross = (x.centered * z.centered.transpose()).squaredNorm();
  return cross / (x.gram_norm * z.gram_norm);
}

double linear_cka(const Matrix& x, const Matrix& z) {
  check_same_width(x, z);
  return linear_cka(prepare_set(x), prepare_set(z));
}

Matrix power_transform(const Matrix& x, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) fail(ErrorKind::InvalidInput, "alpha must lie in (0, 1]");
  if (alpha == 1.0) return x;
  return x.unaryExpr([alpha](double v) {
    return v < 0.0 ? -std::pow(-v, alpha) : std::pow(v, alpha);
  });
}

CompositionScore composition_score(const FeatureMap& sample, const Matrix& z, double alpha) {
  return {linear_cka(power_transform(sample.x, alpha), z)};
}

MatchWeights match_weights(const Matrix& x, const Matrix& z) {
  check_same_width(x, z);
  const CenteredSet xs = prepare_set(x);
  const CenteredSet zs = prepare_set(z);
  return {(xs.centered * zs.centered.transpose()) / (xs.gram_norm * zs.gram_norm)};
}

Vector patch_importance(const CenteredSet& x, const CenteredSet& z) {
  check_same_width(x.centered, z.centered);
  const Matrix dots = x.centered * z.centered.transpose();
  return dots.rowwise().squaredNorm() / (x.gram_norm * z.gram_norm);
}

Vector patch_importance(const Matrix& x, const Matrix& z) {
  check_same_width(x, z);
  return patch_importance(prepare_set(x), prepare_set(z));
}

double allmatch_similarity(const Matrix& x, const Matrix& z, MatchMode mode) {
  check_same_width(x, z);
  const Vector xn = x.rowwise().norm();
  const Vector zn = z.rowwise().norm();
  if ((xn.array() == 0.0).any() || (zn.array() == 0.0).any()) {
    fail(ErrorKind::DegenerateInput, "zero-norm row in cosine matching");
  }
  const Matrix xu = xn.cwiseInverse().asDiagonal() * x;
  const Matrix zu = zn.cwiseInverse().asDiagonal() * z;
  const Matrix cosines = xu * zu.transpose();
  if (mode == MatchMode::Mean) return cosines.mean();
  return cosines.rowwise().maxCoeff().mean();
}

double cka_rc(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) fail(ErrorKind::InvalidInput, "representations need the same batch");
  if (a.rows() < 2) fail(ErrorKind::InvalidInput, "batch size must be at least 2");
  // tr(K H L H) with K = A A^T equals ||(HA)^T (HB)||_F^2.
  Matrix ac = a;
  ac.rowwise() -= a.colwise().mean();
  Matrix bc = b;
  bc.rowwise() -= b.colwise().mean();
  const double hsic_ab = (ac.transpose() * bc).squaredNorm();
  const double hsic_aa = (ac.transpose() * ac).squaredNorm();
  const double hsic_bb = (bc.transpose() * bc).squaredNorm();
  const double scale_a = a.squaredNorm();
  const double scale_b = b.squaredNorm();
  if (!(hsic_aa > 1e-24 * scale_a * scale_a) || !(hsic_bb > 1e-24 * scale_b * scale_b) ||
      hsic_aa == 0.0 || hsic_bb == 0.0) {
    fail(ErrorKind::DegenerateSet, "constant representation has zero HSIC");
  }
  // The (b-1)^-2 normalization cancels in the ratio.
  return hsic_ab / std::sqrt(hsic_aa * hsic_bb);
}

}  // namespace compfscil
