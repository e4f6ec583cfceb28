#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>

#include <Eigen/Dense>

#include "ntkreg/data.hpp"

namespace ntkreg {

enum class NoiseShape {
  kGaussian,  // N(0, sigma^2)
  kUniform,   // uniform on [-sqrt(3) sigma, sqrt(3) sigma], same variance
};

// y~ = y + e for regression targets.
struct AdditiveNoise {
  double sigma = 0.0;
  NoiseShape shape = NoiseShape::kGaussian;
};

// Sign flip with probability p, 0 <= p < 1/2.
struct BinaryFlip {
  double p = 0.0;
};

// p_{c', c} = P(c~ = c' | c): column-stochastic, strictly diagonal-dominant per column.
struct ClassTransition {
  Eigen::MatrixXd P;
};

using NoiseModel = std::variant<AdditiveNoise, BinaryFlip, ClassTransition>;

std::string describe(const NoiseModel& model);

/// Throws ValidationError unless the model's parameters are admissible.
void validate(const NoiseModel& model);

/// Checks column sums (1 +- 1e-12), entry range and strict dominance
/// p_{c,c} > p_{c',c}; returns gap = min_{c != c'} (p_{c,c} - p_{c',c}).
double validate_transition(const Eigen::MatrixXd& P);

/// New data set with fresh noisy labels drawn from the clean ones; clean labels
/// and inputs are copied unchanged. Deterministic in `seed`.
DataSet corrupt(const DataSet& data, const NoiseModel& model, std::uint64_t seed);

Eigen::VectorXd onehot(int c, int num_classes);
/// K x n, column i = onehot(labels_i).
Eigen::MatrixXd onehot_matrix(const Eigen::VectorXd& labels, int num_classes);

/// (1 - 2p) y.
Eigen::VectorXd rescale_binary(const Eigen::VectorXd& labels, double p);
/// Subgaussian parameter used for the centred flip noise: min(1, 2 sqrt(p)).
double flip_sigma_eff(double p);

/// K rows of K comma-separated numbers.
Eigen::MatrixXd read_transition_csv(const std::filesystem::path& path);

}  // namespace ntkreg
