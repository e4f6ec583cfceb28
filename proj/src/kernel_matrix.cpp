#include "ntkreg/kernel_matrix.hpp"

#include <cmath>
#include <string>

#include "ntkreg/errors.hpp"

namespace ntkreg {

KernelMatrix::KernelMatrix(Eigen::MatrixXd values) : values_(std::move(values)) {
  if (values_.rows() != values_.cols()) throw DimensionError("KernelMatrix", values_.rows(), values_.cols());
  trace_ = values_.trace();
  op_norm_ = values_.size() == 0 ? 0.0 : power_iteration_norm(values_);
}

double KernelMatrix::min_eigenvalue() const {
  if (values_.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(values_, Eigen::EigenvaluesOnly);
  return solver.eigenvalues()(0);
}

void KernelMatrix::check() const {
  const Eigen::Index n = size();
  if (n == 0) throw ValidationError("kernel matrix is empty");
  if (!values_.allFinite()) throw ValidationError("kernel matrix has non-finite entries");
  const double scale = values_.cwiseAbs().maxCoeff();
  const double asym = (values_ - values_.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * scale) {
    throw ValidationError("kernel matrix is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  }
  const double lmin = min_eigenvalue();
  if (lmin < -1e-8 * trace_ / static_cast<double>(n)) {
    throw ValidationError("kernel matrix is not PSD (lambda_min = " + std::to_string(lmin) + ")");
  }
}

double power_iteration_norm(const Eigen::MatrixXd& m, int max_iters, double rel_tol) {
  const Eigen::Index n = m.rows();
  Eigen::VectorXd v(n);
  // Fixed, non-symmetric start so it is not orthogonal to the top eigenvector by accident.
  for (Eigen::Index i = 0; i < n; ++i) v(i) = 1.0 + 0.5 * std::sin(static_cast<double>(i) + 1.0);
  v.normalize();
  double estimate = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd w = m * v;
    const double next = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (it > 0 && std::abs(next - estimate) <= rel_tol * std::abs(next)) {
      estimate = next;
      break;
    }
    estimate = next;
  }
  // Rayleigh quotient at the final iterate.
  return std::abs(v.dot(m * v));
}

}  // namespace ntkreg
