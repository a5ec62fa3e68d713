#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include <Eigen/Dense>

namespace compfscil {

/// Dense row-major matrix of doubles. Rows are patches / primitives, columns are channels.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// softmax(logits / temperature) computed with max-subtraction.
Vector stable_softmax(const Vector& logits, double temperature = 1.0);

/// log(sum(exp(v))) with max-subtraction.
double log_sum_exp(const Vector& v);

double frobenius_norm(const Matrix& m);

bool all_finite(const Matrix& m);

/// Central finite-difference gradient: (f(θ+εe_i) − f(θ−εe_i)) / 2ε per component.
/// Throws NumericalFailure if f returns a non-finite value.
Vector central_diff_grad(const std::function<double(const Vector&)>& f, const Vector& theta,
                         double eps);

/// Normwise relative error ||a − b||_inf / max(||a||_inf, floor).
double max_relative_error(const Vector& analytic, const Vector& numeric, double floor = 1e-8);

}  // namespace compfscil
