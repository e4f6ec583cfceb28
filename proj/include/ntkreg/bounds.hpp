#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ntkreg/data.hpp"
#include "ntkreg/kernel_matrix.hpp"
#include "ntkreg/krr.hpp"

namespace ntkreg {

enum class ConstantMode {
  // Constants carried through the proof with epsilon-net radius 1.
  kExplicit,
  // Every hidden constant set to 1.
  kUnit,
};

ConstantMode parse_constant_mode(const std::string& name);  // "explicit" | "unit"
std::string to_string(ConstantMode mode);

/// Itemized bound. `total` is always the sum of `components`; the named
/// fields below are groupings of the same numbers.
struct BoundReport {
  std::string kind;  // additive | binary | multiclass
  ConstantMode mode = ConstantMode::kExplicit;
  Eigen::Index n = 0;
  double lambda = 0.0;
  double delta = 0.0;
  double sigma = 0.0;  // subgaussian parameter actually used
  double p = 0.0;      // binary only
  double y_Kinv_y = 0.0;
  double trace = 0.0;
  double main_term = 0.0;
  double sigma_over_lambda_term = 0.0;
  double delta_term = 0.0;
  double lemma1_value = 0.0;  // at delta / 3 (max over outputs for multiclass)
  double lemma2_value = 0.0;  // B', at delta / 3 (max over outputs for multiclass)
  double rademacher_value = 0.0;  // B' sqrt(tr K) / n
  double gap = 1.0;
  std::vector<double> q_quadratic_forms;  // multiclass only
  std::vector<std::pair<std::string, double>> components;
  double total = 0.0;

  // Every scalar above plus each component, in a fixed order.
  std::vector<std::pair<std::string, double>> key_values() const;
};

/// v^T K^{-1} v by a Cholesky solve (jitter policy of RidgeSolver).
double quad_form_inv(const KernelMatrix& kernel, const Eigen::VectorXd& v);

/// (lambda/2) sqrt(y^T K^{-1} y) + (sigma/(2 lambda)) sqrt(tr K) + sigma sqrt(2 log(1/delta)).
double lemma1_bound(const KernelMatrix& kernel, const Eigen::VectorXd& y, double sigma, double lambda, double delta);

/// sqrt(y^T (K + lambda^2 I)^{-1} y) + (sigma/lambda)(sqrt(n) + sqrt(2 log(1/delta))).
double lemma2_bound(const KernelMatrix& kernel, const Eigen::VectorXd& y, double sigma, double lambda, double delta);

/// Population loss bound for KRR on y + noise (loss 1-Lipschitz, in [0, 1], l(y, y) = 0).
BoundReport bound_additive(const KernelMatrix& kernel, const Eigen::VectorXd& y, double sigma, double lambda,
                           double delta, ConstantMode mode = ConstantMode::kExplicit);

/// Clean zero-one error bound for +-1 labels flipped with probability p.
BoundReport bound_binary(const KernelMatrix& kernel, const Eigen::VectorXd& y, double p, double lambda, double delta,
                         ConstantMode mode = ConstantMode::kExplicit);

/// Clean argmax error bound; `Y` is K x n one-hot clean labels, `P` the transition matrix.
BoundReport bound_multiclass(const KernelMatrix& kernel, const Eigen::MatrixXd& Y, const Eigen::MatrixXd& P,
                             double lambda, double delta, ConstantMode mode = ConstantMode::kExplicit);

/// Ramp loss with ybar = (1 - 2p) y.
double ramp_loss(double u, double y, double p);

enum class LossKind { kZeroOne, kClippedAbsolute, kRamp };

struct Loss {
  LossKind kind = LossKind::kZeroOne;
  double p = 0.0;  // ramp only

  static Loss zero_one() { return {LossKind::kZeroOne, 0.0}; }
  static Loss clipped_absolute() { return {LossKind::kClippedAbsolute, 0.0}; }
  static Loss ramp(double p) { return {LossKind::kRamp, p}; }
};

/// Zero-one error of one prediction row; sgn(0) is always wrong, argmax ties go low.
bool misclassified(const Eigen::Ref<const Eigen::RowVectorXd>& outputs, double clean_label, const Task& task);

/// Mean loss of `predictions` (n x outputs) against the clean labels of `test`.
double clean_risk(const Eigen::MatrixXd& predictions, const DataSet& test, const Loss& loss);
double empirical_clean_risk(const KrrPredictor& predictor, const DataSet& test, const Loss& loss);

}  // namespace ntkreg
