#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntkreg/data.hpp"
#include "ntkreg/kernel_matrix.hpp"
#include "ntkreg/net.hpp"

namespace ntkreg {

/// First-order model f(theta, x) ~ phi(x)^T (theta - theta0) around a network's
/// initialization. Z holds the feature columns phi(x_i); K = Z^T Z.
struct LinearizedModel {
  Eigen::MatrixXd Z;       // N x n
  Eigen::VectorXd theta0;  // N
  KernelMatrix K;
  Eigen::MatrixXd basis;   // N x r, orthonormal basis of span(Z)

  Eigen::Index n() const { return Z.cols(); }
  Eigen::Index params() const { return Z.rows(); }

  // phi(x)^T (theta - theta0) given the features phi(x).
  double predict(const Eigen::VectorXd& theta, const Eigen::VectorXd& features) const;
  // Outputs on the training inputs: Z^T (theta - theta0).
  Eigen::VectorXd predict_train(const Eigen::VectorXd& theta) const;
};

/// Requires the difference trick; any |f(theta0, x_i)| above 1e-8 is a ValidationError.
LinearizedModel linearize(const MLP& mlp, const DataSet& data);
LinearizedModel make_linearized(Eigen::MatrixXd Z, Eigen::VectorXd theta0);

struct LinTrajectory {
  Objective objective = Objective::kRdi;  // kRdi or kAux
  double lambda = 0.0;
  double eta = 0.0;
  std::vector<Eigen::VectorXd> span;    // basis^T (theta(t) - theta0)
  std::vector<Eigen::VectorXd> coords;  // Z^T (theta(t) - theta0)
  std::vector<Eigen::VectorXd> aux;     // b(t), AUX only
  std::vector<double> objective_values;
  std::vector<double> displacement;     // ||theta(t) - theta0||
  std::vector<double> off_span;         // ||(I - P_Z)(theta(t) - theta0)||
  std::vector<double> aux_identity;     // ||theta(t) - theta0 - Z b(t) / lambda||, AUX only
  std::vector<Eigen::VectorXd> full;    // theta(t) - theta0, only with keep_full
  Eigen::VectorXd final_theta;

  std::size_t size() const { return objective_values.size(); }
  int steps() const { return static_cast<int>(size()) - 1; }
};

struct LinRunOptions {
  bool keep_full = false;
  // Initial auxiliary variables for AUX; zero when unset.
  std::optional<Eigen::VectorXd> b0;
};

/// 1 / (||K|| + lambda^2).
double default_eta(const LinearizedModel& lm, double lambda);

LinTrajectory run_gd_rdi(const LinearizedModel& lm, const Eigen::VectorXd& targets, double lambda, double eta,
                         int steps, const LinRunOptions& options = {});
LinTrajectory run_gd_aux(const LinearizedModel& lm, const Eigen::VectorXd& targets, double lambda, double eta,
                         int steps, const LinRunOptions& options = {});

struct EquivalenceReport {
  double max_abs = 0.0;
  double max_rel = 0.0;
  int worst_step = 0;
  double tol = 1e-10;
  bool exact = false;  // computed from full parameter vectors rather than span coordinates
  bool passed = false;
  std::vector<double> gaps;  // ||theta(t) - theta_bar(t)|| per step
};

/// Compares two trajectories step by step. Without full storage the gap is
/// bounded by the span-coordinate difference plus both off-span residuals.
EquivalenceReport check_equivalence(const LinTrajectory& rdi, const LinTrajectory& aux, double tol = 1e-10);

struct LinLimit {
  Eigen::VectorXd theta;  // theta* = theta0 + Z coef
  Eigen::VectorXd coef;   // (K + lambda^2 I)^{-1} y
  // k(x, X)^T coef from a precomputed k(x, X).
  double predict(const Eigen::VectorXd& cross) const { return cross.dot(coef); }
};

/// Solved with LDLT; singular K + lambda^2 I raises SingularityError.
LinLimit closed_form_limit(const LinearizedModel& lm, const Eigen::VectorXd& targets, double lambda);

/// ||theta(t) - theta*|| per step.
std::vector<double> limit_gaps(const LinearizedModel& lm, const LinTrajectory& traj, const LinLimit& limit);

struct TrajectoryRecord {
  const LinTrajectory* trajectory = nullptr;
  const EquivalenceReport* equivalence = nullptr;  // optional
};

/// Columns: lambda, t, objective, theta_distance, equivalence_gap (blank without
/// an equivalence report). One block of rows per record.
void write_trajectory_csv(const std::vector<TrajectoryRecord>& records, const std::string& path);

}  // namespace ntkreg
