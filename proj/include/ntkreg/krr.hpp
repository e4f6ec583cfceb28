#pragma once

#include <optional>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "ntkreg/kernel.hpp"
#include "ntkreg/kernel_matrix.hpp"

namespace ntkreg {

/// Cholesky factorization of K + lambda^2 I with jitter escalation.
///
/// Tries jitter 0, then 1e-10, 1e-9, 1e-8 times tr(K)/n. A level is accepted
/// only if every right-hand side solved through it leaves a relative residual
/// ||(K + lambda^2 I) a - y|| / ||y|| <= 1e-8 against the un-jittered system;
/// otherwise the next level is tried and, past the last, SingularityError.
class RidgeSolver {
 public:
  RidgeSolver(const KernelMatrix& kernel, double lambda);

  // Solves one right-hand side per column, column by column.
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
  // v^T (K + lambda^2 I)^{-1} v through solve().
  double quad_form(const Eigen::VectorXd& v) const;

  double jitter() const { return jitter_; }
  double ridge() const { return ridge_; }

  static constexpr double kResidualTolerance = 1e-8;

 private:
  const KernelMatrix* kernel_;
  double ridge_;
  double jitter_ = 0.0;
  int level_ = 0;
  Eigen::LLT<Eigen::MatrixXd> llt_;

  bool factor(int level);
  bool residual_ok(const Eigen::MatrixXd& rhs, const Eigen::MatrixXd& sol) const;
  Eigen::MatrixXd solve_factored(const Eigen::MatrixXd& rhs) const;
};

/// f*(x) = k(x, X)^T alpha with alpha = (K + lambda^2 I)^{-1} y, one column of
/// alpha per output.
struct KrrPredictor {
  Eigen::MatrixXd alpha;  // n x outputs
  double lambda = 0.0;
  double jitter = 0.0;
  std::optional<KernelSource> source;
  Eigen::MatrixXd train_inputs;

  Eigen::Index outputs() const { return alpha.cols(); }
};

KrrPredictor krr_fit(const KernelMatrix& kernel, const Eigen::VectorXd& targets, double lambda);
/// `targets` is K x n (one row per output); a single factorization serves all rows.
KrrPredictor krr_fit_multi(const KernelMatrix& kernel, const Eigen::MatrixXd& targets, double lambda);

// Attaches the kernel source and training inputs needed by krr_predict.
KrrPredictor& bind(KrrPredictor& predictor, KernelSource source, Eigen::MatrixXd train_inputs);

/// Outputs at x (length = number of outputs).
Eigen::VectorXd krr_predict(const KrrPredictor& predictor, const Eigen::VectorXd& x);
/// One row of outputs per query row.
Eigen::MatrixXd krr_predict_batch(const KrrPredictor& predictor, const Eigen::MatrixXd& queries);
/// Outputs from precomputed k(Q, X) rows.
Eigen::MatrixXd krr_predict_from_cross(const KrrPredictor& predictor, const Eigen::MatrixXd& cross);

/// 1-based argmax; ties go to the lowest class index.
int predicted_class(const Eigen::Ref<const Eigen::RowVectorXd>& outputs);

/// sqrt(alpha_h^T K alpha_h), clamped at zero.
double rkhs_norm(const KrrPredictor& predictor, const KernelMatrix& kernel, Eigen::Index output = 0);

}  // namespace ntkreg
