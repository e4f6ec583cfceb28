#include "ntkreg/krr.hpp"

#include <cmath>

#include "ntkreg/errors.hpp"

namespace ntkreg {

namespace {

constexpr int kJitterLevels = 4;  // 0, 1e-10, 1e-9, 1e-8 (times tr(K)/n)

}  // namespace

RidgeSolver::RidgeSolver(const KernelMatrix& kernel, double lambda) : kernel_(&kernel), ridge_(lambda * lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw UsageError("ridge solve: lambda must be >= 0");
  if (kernel.size() == 0) throw UsageError("ridge solve: empty kernel");
  level_ = -1;
  for (int level = 0; level < kJitterLevels; ++level) {
    if (factor(level)) return;
  }
  throw SingularityError("Cholesky factorization of K + lambda^2 I failed after jitter escalation");
}

bool RidgeSolver::factor(int level) {
  const double scale = kernel_->trace() / static_cast<double>(kernel_->size());
  jitter_ = level == 0 ? 0.0 : 1e-10 * std::pow(10.0, level - 1) * scale;
  Eigen::MatrixXd a = kernel_->values();
  a.diagonal().array() += ridge_ + jitter_;
  llt_.compute(a);
  if (llt_.info() != Eigen::Success) return false;
  if (!llt_.matrixLLT().diagonal().allFinite()) return false;
  level_ = level;
  return true;
}

Eigen::MatrixXd RidgeSolver::solve_factored(const Eigen::MatrixXd& rhs) const {
  Eigen::MatrixXd out(rhs.rows(), rhs.cols());
  for (Eigen::Index c = 0; c < rhs.cols(); ++c) {
    Eigen::VectorXd col = rhs.col(c);
    out.col(c) = llt_.solve(col);
  }
  return out;
}

bool RidgeSolver::residual_ok(const Eigen::MatrixXd& rhs, const Eigen::MatrixXd& sol) const {
  if (!sol.allFinite()) return false;
  for (Eigen::Index c = 0; c < rhs.cols(); ++c) {
    const double denom = rhs.col(c).norm();
    if (denom == 0.0) {
      if (sol.col(c).norm() != 0.0) return false;
      continue;
    }
    Eigen::VectorXd r = kernel_->values() * sol.col(c) + ridge_ * sol.col(c) - rhs.col(c);
    if (r.norm() > kResidualTolerance * denom) return false;
  }
  return true;
}

Eigen::MatrixXd RidgeSolver::solve(const Eigen::MatrixXd& rhs) const {
  if (rhs.rows() != kernel_->size()) throw DimensionError("ridge solve", kernel_->size(), rhs.rows());
  Eigen::MatrixXd sol = solve_factored(rhs);
  if (residual_ok(rhs, sol)) return sol;
  // Escalate on a private copy so this solver stays immutable.
  RidgeSolver retry = *this;
  for (int level = level_ + 1; level < kJitterLevels; ++level) {
    if (!retry.factor(level)) continue;
    sol = retry.solve_factored(rhs);
    if (retry.residual_ok(rhs, sol)) return sol;
  }
  throw SingularityError("ridge solve: residual check failed after jitter escalation (K + lambda^2 I is singular)");
}

double RidgeSolver::quad_form(const Eigen::VectorXd& v) const {
  if (v.size() != kernel_->size()) throw DimensionError("quad_form", kernel_->size(), v.size());
  return v.dot(solve(v).col(0));
}

KrrPredictor krr_fit_multi(const KernelMatrix& kernel, const Eigen::MatrixXd& targets, double lambda) {
  if (targets.cols() != kernel.size()) throw DimensionError("krr_fit", kernel.size(), targets.cols());
  RidgeSolver solver(kernel, lambda);
  KrrPredictor p;
  p.alpha = solver.solve(targets.transpose());
  p.lambda = lambda;
  p.jitter = solver.jitter();
  return p;
}

KrrPredictor krr_fit(const KernelMatrix& kernel, const Eigen::VectorXd& targets, double lambda) {
  return krr_fit_multi(kernel, targets.transpose(), lambda);
}

KrrPredictor& bind(KrrPredictor& predictor, KernelSource source, Eigen::MatrixXd train_inputs) {
  if (train_inputs.rows() != predictor.alpha.rows()) {
    throw DimensionError("krr bind", predictor.alpha.rows(), train_inputs.rows());
  }
  predictor.source = std::move(source);
  predictor.train_inputs = std::move(train_inputs);
  return predictor;
}

Eigen::MatrixXd krr_predict_from_cross(const KrrPredictor& predictor, const Eigen::MatrixXd& cross) {
  if (cross.cols() != predictor.alpha.rows()) throw DimensionError("krr_predict", predictor.alpha.rows(), cross.cols());
  Eigen::MatrixXd out(cross.rows(), predictor.alpha.cols());
  for (Eigen::Index q = 0; q < cross.rows(); ++q) {
    for (Eigen::Index h = 0; h < predictor.alpha.cols(); ++h) out(q, h) = cross.row(q).dot(predictor.alpha.col(h));
  }
  return out;
}

Eigen::MatrixXd krr_predict_batch(const KrrPredictor& predictor, const Eigen::MatrixXd& queries) {
  if (!predictor.source) throw UsageError("krr_predict: predictor has no kernel source bound");
  return krr_predict_from_cross(predictor, kernel_cross_batch(*predictor.source, queries, predictor.train_inputs));
}

Eigen::VectorXd krr_predict(const KrrPredictor& predictor, const Eigen::VectorXd& x) {
  return krr_predict_batch(predictor, x.transpose()).row(0).transpose();
}

int predicted_class(const Eigen::Ref<const Eigen::RowVectorXd>& outputs) {
  Eigen::Index best = 0;
  for (Eigen::Index h = 1; h < outputs.size(); ++h) {
    if (outputs(h) > outputs(best)) best = h;
  }
  return static_cast<int>(best) + 1;
}

double rkhs_norm(const KrrPredictor& predictor, const KernelMatrix& kernel, Eigen::Index output) {
  if (predictor.alpha.rows() != kernel.size()) throw DimensionError("rkhs_norm", kernel.size(), predictor.alpha.rows());
  const Eigen::VectorXd a = predictor.alpha.col(output);
  const double sq = a.dot(kernel.values() * a);
  return std::sqrt(std::max(0.0, sq));
}

}  // namespace ntkreg
