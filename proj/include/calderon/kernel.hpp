#pragma once

// Dense kernels on a finite measure space. Every kernel K acts on functions
// through the weighted sum (K f)(x) = sum_y K(x, y) f(y) w_y, so the identity
// operator has kernel diag(1 / w) and the global mean has kernel 1 / mu(X).

#include <Eigen/Dense>

#include <string>

namespace calderon {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Mode { Homogeneous, Inhomogeneous };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& text);

/// Kernel of the composition A∘B. Each output entry accumulates over the
/// middle index in ascending order regardless of the thread count.
Matrix compose(const Matrix& a, const Matrix& b, const Vector& w);

Vector apply(const Matrix& k, const Vector& f, const Vector& w);

/// Kernel of the adjoint in L^2(mu): K*(x, y) = K(y, x).
inline Matrix adjoint(const Matrix& k) { return k.transpose(); }

Matrix identity_kernel(const Vector& w);
Matrix mean_kernel(const Vector& w);

/// I on the inhomogeneous side, I - (global mean) on the homogeneous side.
Matrix mode_identity(Mode mode, const Vector& w);

/// x -> sum_y K(x, y) w_y
Vector row_integrals(const Matrix& k, const Vector& w);
/// y -> sum_x w_x K(x, y)
Vector column_integrals(const Matrix& k, const Vector& w);

double max_abs(const Matrix& k);

/// Weighted mean of f.
double mean(const Vector& f, const Vector& w);

}  // namespace calderon
