#pragma once

#include <Eigen/Dense>

namespace ntkreg {

/// Symmetric PSD Gram matrix k(X, X) with its trace and spectral norm cached.
///
/// Construction does not validate; call check() (every kernel-producing
/// operation in this library does) to enforce the symmetry and PSD tolerances:
///   max|K_ij - K_ji| <= 1e-10 * max|K|,   lambda_min(K) >= -1e-8 * tr(K) / n.
class KernelMatrix {
 public:
  KernelMatrix() = default;
  explicit KernelMatrix(Eigen::MatrixXd values);

  const Eigen::MatrixXd& values() const { return values_; }
  Eigen::Index size() const { return values_.rows(); }
  double trace() const { return trace_; }
  // Spectral norm by power iteration.
  double op_norm() const { return op_norm_; }

  double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

  double min_eigenvalue() const;
  void check() const;

 private:
  Eigen::MatrixXd values_;
  double trace_ = 0.0;
  double op_norm_ = 0.0;
};

// Largest eigenvalue of a symmetric PSD matrix by power iteration from a fixed start.
double power_iteration_norm(const Eigen::MatrixXd& m, int max_iters = 2000, double rel_tol = 1e-14);

}  // namespace ntkreg
