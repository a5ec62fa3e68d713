#include "compfscil/numkit.hpp"

#include <cmath>
#include <string>

#include "compfscil/error.hpp"

namespace compfscil {

Vector stable_softmax(const Vector& logits, double temperature) {
  if (logits.size() == 0) fail(ErrorKind::InvalidInput, "softmax of empty vector");
  if (!(temperature > 0.0)) fail(ErrorKind::InvalidInput, "softmax temperature must be positive");
  const Vector scaled = logits / temperature;
  const double shift = scaled.maxCoeff();
  Vector out = (scaled.array() - shift).exp().matrix();
  out /= out.sum();
  return out;
}

double log_sum_exp(const Vector& v) {
  if (v.size() == 0) fail(ErrorKind::InvalidInput, "log_sum_exp of empty vector");
  const double shift = v.maxCoeff();
  return shift + std::log((v.array() - shift).exp().sum());
}

double frobenius_norm(const Matrix& m) { return m.norm(); }

bool all_finite(const Matrix& m) { return m.allFinite(); }

Vector central_diff_grad(const std::function<double(const Vector&)>& f, const Vector& theta,
                         double eps) {
  if (!(eps > 0.0)) fail(ErrorKind::InvalidInput, "finite-difference step must be positive");
  Vector grad(theta.size());
  Vector probe = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + eps;
    const double up = f(probe);
    probe[i] = theta[i] - eps;
    const double down = f(probe);
    probe[i] = theta[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      fail(ErrorKind::NumericalFailure,
           "non-finite function value at component " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double max_relative_error(const Vector& analytic, const Vector& numeric, double floor) {
  if (analytic.size() != numeric.size()) fail(ErrorKind::InvalidInput, "gradient size mismatch");
  if (analytic.size() == 0) return 0.0;
  const double scale = std::max(analytic.lpNorm<Eigen::Infinity>(), floor);
  return (analytic - numeric).lpNorm<Eigen::Infinity>() / scale;
}

}  // namespace compfscil
