#pragma once

#include <memory>
#include <variant>

#include <Eigen/Dense>

#include "ntkreg/data.hpp"
#include "ntkreg/kernel_matrix.hpp"
#include "ntkreg/net.hpp"

namespace ntkreg {

/// Feature columns phi(x_i) = d f_0(theta(0), x_i) / d theta, one column per row of `inputs`.
/// Always taken at the network's initialization, whatever its current weights.
Eigen::MatrixXd feature_matrix(const MLP& mlp, const Eigen::MatrixXd& inputs);

/// Z^T Z, each entry an independent column dot product over the upper triangle, mirrored.
Eigen::MatrixXd gram_upper(const Eigen::MatrixXd& features);

/// Empirical NTK k(x_i, x_j) = <phi(x_i), phi(x_j)> at theta(0). Multi-output
/// networks use output 0; all outputs share the same kernel.
KernelMatrix empirical_ntk(const MLP& mlp, const DataSet& data);

// Arc-cosine functions of the ReLU recursion.
double relu_kappa0(double u);  // (pi - arccos u) / pi
double relu_kappa1(double u);  // (u (pi - arccos u) + sqrt(1 - u^2)) / pi

/// Infinite-width NTK of a depth-L ReLU net (as built by init_mlp with all
/// layers trainable) at cosine u:
///   Sigma^0 = u, Theta^0 = u,
///   Sigma^h = kappa1(Sigma^{h-1}), Theta^h = Theta^{h-1} kappa0(Sigma^{h-1}) + Sigma^h,  h = 1..L-1.
/// |u| up to 1 + 1e-12 is clamped; beyond that a UsageError.
double analytic_ntk_entry(int depth, double u);

/// Same recursion for a pair of unit vectors, with the angle taken as
/// 2 atan2(|x - y|, |x + y|) so that identical inputs give exactly u = 1.
double analytic_ntk_pair(int depth, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                         const Eigen::Ref<const Eigen::RowVectorXd>& y);

/// Requires unit-norm rows (tolerance 1e-10); diag(K) = depth exactly.
KernelMatrix analytic_ntk(int depth, const DataSet& data);

struct AnalyticSource {
  int depth = 2;
};

struct EmpiricalSource {
  std::shared_ptr<const MLP> mlp;
};

using KernelSource = std::variant<AnalyticSource, EmpiricalSource>;

KernelMatrix kernel_matrix(const KernelSource& source, const DataSet& data);

/// k(x, X) for one query.
Eigen::VectorXd kernel_cross(const KernelSource& source, const Eigen::VectorXd& x, const Eigen::MatrixXd& train_inputs);

/// k(Q, X): one row per query.
Eigen::MatrixXd kernel_cross_batch(const KernelSource& source, const Eigen::MatrixXd& queries,
                                   const Eigen::MatrixXd& train_inputs);

}  // namespace ntkreg
