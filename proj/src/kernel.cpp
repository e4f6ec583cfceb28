#include "ntkreg/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ntkreg/errors.hpp"

namespace ntkreg {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kCosineTolerance = 1e-12;
constexpr double kUnitNormTolerance = 1e-10;

void require_unit_rows(const Eigen::MatrixXd& inputs, const char* where) {
  if (max_row_norm_deviation(inputs) > kUnitNormTolerance) {
    throw UsageError(std::string(where) + ": analytic NTK requires unit-norm inputs");
  }
}

// Recursion driven by the layer-0 angle.
double ntk_from_angle(int depth, double angle) {
  double sigma = std::cos(angle);
  double theta = sigma;
  for (int h = 1; h < depth; ++h) {
    const double k0 = (kPi - angle) / kPi;
    const double k1 = (std::sin(angle) + (kPi - angle) * sigma) / kPi;
    theta = theta * k0 + k1;
    sigma = k1;
    angle = std::acos(std::clamp(sigma, -1.0, 1.0));
  }
  return theta;
}

}  // namespace

Eigen::MatrixXd feature_matrix(const MLP& mlp, const Eigen::MatrixXd& inputs) {
  const MLP at_init = mlp.initial();
  Eigen::MatrixXd features(at_init.num_trainable(), inputs.rows());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    features.col(i) = at_init.gradient(inputs.row(i).transpose(), 0);
  }
  return features;
}

Eigen::MatrixXd gram_upper(const Eigen::MatrixXd& features) {
  const Eigen::Index n = features.cols();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) {
      k(i, j) = features.col(i).dot(features.col(j));
      k(j, i) = k(i, j);
    }
  }
  return k;
}

KernelMatrix empirical_ntk(const MLP& mlp, const DataSet& data) {
  if (data.d() != mlp.config().input_dim) throw DimensionError("empirical_ntk", mlp.config().input_dim, data.d());
  KernelMatrix k(gram_upper(feature_matrix(mlp, data.inputs)));
  k.check();
  return k;
}

double relu_kappa0(double u) {
  u = std::clamp(u, -1.0, 1.0);
  return (kPi - std::acos(u)) / kPi;
}

double relu_kappa1(double u) {
  u = std::clamp(u, -1.0, 1.0);
  return (u * (kPi - std::acos(u)) + std::sqrt(1.0 - u * u)) / kPi;
}

double analytic_ntk_entry(int depth, double u) {
  if (depth < 2) throw UsageError("analytic_ntk: depth must be >= 2");
  if (!(std::abs(u) <= 1.0 + kCosineTolerance)) throw UsageError("analytic_ntk: |cosine| exceeds 1");
  u = std::clamp(u, -1.0, 1.0);
  double sigma = u;
  double theta = u;
  for (int h = 1; h < depth; ++h) {
    const double next = relu_kappa1(sigma);
    theta = theta * relu_kappa0(sigma) + next;
    sigma = next;
  }
  return theta;
}

double analytic_ntk_pair(int depth, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                         const Eigen::Ref<const Eigen::RowVectorXd>& y) {
  if (depth < 2) throw UsageError("analytic_ntk: depth must be >= 2");
  if (x.size() != y.size()) throw DimensionError("analytic_ntk_pair", x.size(), y.size());
  const double angle = 2.0 * std::atan2((x - y).norm(), (x + y).norm());
  return ntk_from_angle(depth, angle);
}

KernelMatrix analytic_ntk(int depth, const DataSet& data) {
  require_unit_rows(data.inputs, "analytic_ntk");
  const Eigen::Index n = data.n();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) {
      k(i, j) = analytic_ntk_pair(depth, data.inputs.row(i), data.inputs.row(j));
      k(j, i) = k(i, j);
    }
  }
  KernelMatrix out(std::move(k));
  out.check();
  return out;
}

KernelMatrix kernel_matrix(const KernelSource& source, const DataSet& data) {
  if (const auto* a = std::get_if<AnalyticSource>(&source)) return analytic_ntk(a->depth, data);
  const auto& e = std::get<EmpiricalSource>(source);
  if (!e.mlp) throw UsageError("kernel_matrix: empirical source without a network");
  return empirical_ntk(*e.mlp, data);
}

Eigen::MatrixXd kernel_cross_batch(const KernelSource& source, const Eigen::MatrixXd& queries,
                                   const Eigen::MatrixXd& train_inputs) {
  if (queries.cols() != train_inputs.cols()) throw DimensionError("kernel_cross", train_inputs.cols(), queries.cols());
  Eigen::MatrixXd out(queries.rows(), train_inputs.rows());
  if (const auto* a = std::get_if<AnalyticSource>(&source)) {
    require_unit_rows(queries, "kernel_cross");
    require_unit_rows(train_inputs, "kernel_cross");
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
      for (Eigen::Index i = 0; i < train_inputs.rows(); ++i) {
        out(q, i) = analytic_ntk_pair(a->depth, queries.row(q), train_inputs.row(i));
      }
    }
    return out;
  }
  const auto& e = std::get<EmpiricalSource>(source);
  if (!e.mlp) throw UsageError("kernel_cross: empirical source without a network");
  if (queries.cols() != e.mlp->config().input_dim) {
    throw DimensionError("kernel_cross", e.mlp->config().input_dim, queries.cols());
  }
  const Eigen::MatrixXd train_features = feature_matrix(*e.mlp, train_inputs);
  const Eigen::MatrixXd query_features = feature_matrix(*e.mlp, queries);
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    for (Eigen::Index i = 0; i < train_inputs.rows(); ++i) {
      out(q, i) = train_features.col(i).dot(query_features.col(q));
    }
  }
  return out;
}

Eigen::VectorXd kernel_cross(const KernelSource& source, const Eigen::VectorXd& x, const Eigen::MatrixXd& train_inputs) {
  return kernel_cross_batch(source, x.transpose(), train_inputs).row(0).transpose();
}

}  // namespace ntkreg
