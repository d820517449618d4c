#include "calderon/kernel.hpp"

#include <stdexcept>

#include "calderon/parallel.hpp"

namespace calderon {

std::string to_string(Mode mode) {
  return mode == Mode::Homogeneous ? "homogeneous" : "inhomogeneous";
}

Mode mode_from_string(const std::string& text) {
  if (text == "homogeneous") return Mode::Homogeneous;
  if (text == "inhomogeneous") return Mode::Inhomogeneous;
  throw std::invalid_argument("unknown mode '" + text + "'");
}

Matrix compose(const Matrix& a, const Matrix& b, const Vector& w) {
  if (a.cols() != b.rows() || a.cols() != w.size()) {
    throw std::invalid_argument("compose: dimension mismatch");
  }
  Matrix out = Matrix::Zero(a.rows(), b.cols());
  parallel_for(0, static_cast<std::size_t>(b.cols()), [&](std::size_t j) {
    auto col = out.col(static_cast<Eigen::Index>(j));
    for (Eigen::Index z = 0; z < a.cols(); ++z) {
      const double coeff = b(z, static_cast<Eigen::Index>(j)) * w(z);
      if (coeff != 0.0) col.noalias() += coeff * a.col(z);
    }
  });
  return out;
}

Vector apply(const Matrix& k, const Vector& f, const Vector& w) {
  if (k.cols() != f.size() || f.size() != w.size()) {
    throw std::invalid_argument("apply: dimension mismatch");
  }
  Vector out = Vector::Zero(k.rows());
  for (Eigen::Index z = 0; z < k.cols(); ++z) out.noalias() += (f(z) * w(z)) * k.col(z);
  return out;
}

Matrix identity_kernel(const Vector& w) {
  Matrix id = Matrix::Zero(w.size(), w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) id(i, i) = 1.0 / w(i);
  return id;
}

Matrix mean_kernel(const Vector& w) {
  return Matrix::Constant(w.size(), w.size(), 1.0 / w.sum());
}

Matrix mode_identity(Mode mode, const Vector& w) {
  Matrix id = identity_kernel(w);
  if (mode == Mode::Homogeneous) id -= mean_kernel(w);
  return id;
}

Vector row_integrals(const Matrix& k, const Vector& w) { return k * w; }

Vector column_integrals(const Matrix& k, const Vector& w) { return k.transpose() * w; }

double max_abs(const Matrix& k) { return k.size() == 0 ? 0.0 : k.cwiseAbs().maxCoeff(); }

double mean(const Vector& f, const Vector& w) { return f.dot(w) / w.sum(); }

}  // namespace calderon
