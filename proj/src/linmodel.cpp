#include "ntkreg/linmodel.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "ntkreg/csv.hpp"
#include "ntkreg/errors.hpp"
#include "ntkreg/kernel.hpp"

namespace ntkreg {

namespace {

constexpr double kTrickTolerance = 1e-8;

void check_run(const LinearizedModel& lm, const Eigen::VectorXd& targets, double eta, int steps, const char* where) {
  if (targets.size() != lm.n()) throw DimensionError(where, lm.n(), targets.size());
  if (!(eta > 0.0) || !std::isfinite(eta)) throw UsageError(std::string(where) + ": eta must be > 0");
  if (steps < 0) throw UsageError(std::string(where) + ": steps must be >= 0");
}

// Everything recorded per step except b(t) and the AUX identity.
void record(const LinearizedModel& lm, const Eigen::VectorXd& delta, double objective, bool keep_full,
            LinTrajectory& traj) {
  Eigen::VectorXd span = lm.basis.transpose() * delta;
  const double off = (delta - lm.basis * span).norm();
  traj.span.push_back(std::move(span));
  traj.coords.push_back(lm.Z.transpose() * delta);
  traj.objective_values.push_back(objective);
  traj.displacement.push_back(delta.norm());
  traj.off_span.push_back(off);
  if (keep_full) traj.full.push_back(delta);
}

void check_finite(double objective, const Eigen::VectorXd& delta, int step, const char* where) {
  if (!std::isfinite(objective) || !delta.allFinite()) throw DivergenceError(where, step, objective);
}

}  // namespace

double LinearizedModel::predict(const Eigen::VectorXd& theta, const Eigen::VectorXd& features) const {
  if (theta.size() != params()) throw DimensionError("linearized predict", params(), theta.size());
  if (features.size() != params()) throw DimensionError("linearized predict", params(), features.size());
  return features.dot(theta - theta0);
}

Eigen::VectorXd LinearizedModel::predict_train(const Eigen::VectorXd& theta) const {
  if (theta.size() != params()) throw DimensionError("linearized predict", params(), theta.size());
  return Z.transpose() * (theta - theta0);
}

LinearizedModel make_linearized(Eigen::MatrixXd Z, Eigen::VectorXd theta0) {
  if (Z.rows() != theta0.size()) throw DimensionError("make_linearized", Z.rows(), theta0.size());
  if (Z.cols() == 0) throw EmptyDatasetError("make_linearized: no feature columns");
  LinearizedModel lm;
  lm.K = KernelMatrix(gram_upper(Z));
  lm.K.check();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
  const Eigen::Index rank = qr.rank();
  lm.basis = qr.householderQ() * Eigen::MatrixXd::Identity(Z.rows(), rank);
  lm.Z = std::move(Z);
  lm.theta0 = std::move(theta0);
  return lm;
}

LinearizedModel linearize(const MLP& mlp, const DataSet& data) {
  if (!mlp.config().difference_trick) {
    throw UsageError("linearize: the difference trick must be on so that f(theta0, .) vanishes");
  }
  if (data.d() != mlp.config().input_dim) throw DimensionError("linearize", mlp.config().input_dim, data.d());
  const MLP at_init = mlp.initial();
  const double initial = at_init.forward_batch(data.inputs).cwiseAbs().maxCoeff();
  if (initial > kTrickTolerance) {
    throw ValidationError("linearize: initial output " + format_double(initial) + " exceeds 1e-8");
  }
  return make_linearized(feature_matrix(at_init, data.inputs), at_init.trainable_params0());
}

double default_eta(const LinearizedModel& lm, double lambda) { return 1.0 / (lm.K.op_norm() + lambda * lambda); }

LinTrajectory run_gd_rdi(const LinearizedModel& lm, const Eigen::VectorXd& targets, double lambda, double eta,
                         int steps, const LinRunOptions& options) {
  check_run(lm, targets, eta, steps, "run_gd_rdi");
  if (!(lambda >= 0.0)) throw UsageError("run_gd_rdi: lambda must be >= 0");
  const double ridge = lambda * lambda;
  LinTrajectory traj;
  traj.objective = Objective::kRdi;
  traj.lambda = lambda;
  traj.eta = eta;

  Eigen::VectorXd delta = Eigen::VectorXd::Zero(lm.params());
  for (int t = 0;; ++t) {
    const Eigen::VectorXd residual = lm.Z.transpose() * delta - targets;
    const double objective = 0.5 * residual.squaredNorm() + 0.5 * ridge * delta.squaredNorm();
    check_finite(objective, delta, t, "run_gd_rdi");
    record(lm, delta, objective, options.keep_full, traj);
    if (t == steps) break;
    delta -= eta * (lm.Z * residual + ridge * delta);
  }
  traj.final_theta = lm.theta0 + delta;
  return traj;
}

LinTrajectory run_gd_aux(const LinearizedModel& lm, const Eigen::VectorXd& targets, double lambda, double eta,
                         int steps, const LinRunOptions& options) {
  check_run(lm, targets, eta, steps, "run_gd_aux");
  if (!(lambda > 0.0)) throw UsageError("run_gd_aux: lambda must be > 0");
  LinTrajectory traj;
  traj.objective = Objective::kAux;
  traj.lambda = lambda;
  traj.eta = eta;

  Eigen::VectorXd delta = Eigen::VectorXd::Zero(lm.params());
  Eigen::VectorXd b = Eigen::VectorXd::Zero(lm.n());
  if (options.b0) {
    if (options.b0->size() != lm.n()) throw DimensionError("run_gd_aux b0", lm.n(), options.b0->size());
    b = *options.b0;
  }
  for (int t = 0;; ++t) {
    const Eigen::VectorXd residual = lm.Z.transpose() * delta + lambda * b - targets;
    const double objective = 0.5 * residual.squaredNorm();
    check_finite(objective, delta, t, "run_gd_aux");
    record(lm, delta, objective, options.keep_full, traj);
    traj.aux.push_back(b);
    traj.aux_identity.push_back((delta - lm.Z * (b / lambda)).norm());
    if (t == steps) break;
    delta -= eta * (lm.Z * residual);
    b -= (eta * lambda) * residual;
  }
  traj.final_theta = lm.theta0 + delta;
  return traj;
}

EquivalenceReport check_equivalence(const LinTrajectory& rdi, const LinTrajectory& aux, double tol) {
  if (rdi.size() != aux.size()) throw DimensionError("check_equivalence", rdi.size(), aux.size());
  if (rdi.size() == 0) throw UsageError("check_equivalence: empty trajectories");
  EquivalenceReport report;
  report.tol = tol;
  report.exact = rdi.full.size() == rdi.size() && aux.full.size() == aux.size();
  for (std::size_t t = 0; t < rdi.size(); ++t) {
    double gap = 0.0;
    if (report.exact) {
      gap = (rdi.full[t] - aux.full[t]).norm();
    } else {
      gap = (rdi.span[t] - aux.span[t]).norm() + rdi.off_span[t] + aux.off_span[t];
    }
    report.gaps.push_back(gap);
    double rel = 0.0;
    if (gap > 0.0) {
      rel = rdi.displacement[t] > 0.0 ? gap / rdi.displacement[t] : std::numeric_limits<double>::infinity();
    }
    if (gap > report.max_abs) report.max_abs = gap;
    if (rel > report.max_rel) {
      report.max_rel = rel;
      report.worst_step = static_cast<int>(t);
    }
  }
  report.passed = report.max_rel <= tol;
  return report;
}

LinLimit closed_form_limit(const LinearizedModel& lm, const Eigen::VectorXd& targets, double lambda) {
  if (targets.size() != lm.n()) throw DimensionError("closed_form_limit", lm.n(), targets.size());
  if (!(lambda >= 0.0)) throw UsageError("closed_form_limit: lambda must be >= 0");
  Eigen::MatrixXd a = lm.K.values();
  a.diagonal().array() += lambda * lambda;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success) throw SingularityError("closed_form_limit: LDLT failed");
  LinLimit limit;
  limit.coef = ldlt.solve(targets);
  const double denom = std::max(targets.norm(), std::numeric_limits<double>::min());
  if (!limit.coef.allFinite() || (a * limit.coef - targets).norm() > 1e-8 * denom) {
    throw SingularityError("closed_form_limit: K + lambda^2 I is singular");
  }
  limit.theta = lm.theta0 + lm.Z * limit.coef;
  return limit;
}

std::vector<double> limit_gaps(const LinearizedModel& lm, const LinTrajectory& traj, const LinLimit& limit) {
  std::vector<double> gaps;
  gaps.reserve(traj.size());
  const Eigen::VectorXd target_delta = limit.theta - lm.theta0;
  if (traj.full.size() == traj.size()) {
    for (const auto& delta : traj.full) gaps.push_back((delta - target_delta).norm());
    return gaps;
  }
  // theta* - theta0 lies in span(Z), so the gap splits into span and off-span parts.
  const Eigen::VectorXd target_span = lm.basis.transpose() * target_delta;
  for (std::size_t t = 0; t < traj.size(); ++t) {
    gaps.push_back(std::hypot((traj.span[t] - target_span).norm(), traj.off_span[t]));
  }
  return gaps;
}

void write_trajectory_csv(const std::vector<TrajectoryRecord>& records, const std::string& path) {
  for (const auto& r : records) {
    if (!r.trajectory) throw UsageError("write_trajectory_csv: missing trajectory");
    if (r.equivalence && r.equivalence->gaps.size() != r.trajectory->size()) {
      throw DimensionError("write_trajectory_csv", r.trajectory->size(), r.equivalence->gaps.size());
    }
  }
  CsvWriter csv(path);
  csv.header({"lambda", "t", "objective", "theta_distance", "equivalence_gap"});
  for (const auto& r : records) {
    const LinTrajectory& traj = *r.trajectory;
    for (std::size_t t = 0; t < traj.size(); ++t) {
      csv.row({format_double(traj.lambda), std::to_string(t), format_double(traj.objective_values[t]),
               format_double(traj.displacement[t]),
               r.equivalence ? format_double(r.equivalence->gaps[t]) : std::string()});
    }
  }
}

}  // namespace ntkreg
