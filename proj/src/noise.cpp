#include "ntkreg/noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "ntkreg/csv.hpp"
#include "ntkreg/errors.hpp"
#include "ntkreg/rng.hpp"

namespace ntkreg {

namespace {

constexpr double kColumnSumTolerance = 1e-12;

int class_id(double label, int num_classes) {
  const double r = std::round(label);
  if (r != label || r < 1 || r > num_classes) {
    throw ValidationError("class label " + format_double(label) + " outside 1.." + std::to_string(num_classes));
  }
  return static_cast<int>(r);
}

}  // namespace

std::string describe(const NoiseModel& model) {
  if (const auto* a = std::get_if<AdditiveNoise>(&model)) {
    return std::string(a->shape == NoiseShape::kGaussian ? "gaussian" : "uniform") +
           "(sigma=" + format_double(a->sigma) + ")";
  }
  if (const auto* f = std::get_if<BinaryFlip>(&model)) return "flip(p=" + format_double(f->p) + ")";
  return "transition(K=" + std::to_string(std::get<ClassTransition>(model).P.rows()) + ")";
}

double validate_transition(const Eigen::MatrixXd& P) {
  const Eigen::Index k = P.rows();
  if (k < 2 || P.cols() != k) throw ValidationError("transition matrix must be square with K >= 2");
  if (!P.allFinite() || (P.array() < 0.0).any() || (P.array() > 1.0).any()) {
    throw ValidationError("transition matrix entries must lie in [0, 1]");
  }
  double gap = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < k; ++c) {
    const double sum = P.col(c).sum();
    if (std::abs(sum - 1.0) > kColumnSumTolerance) {
      throw ValidationError("transition matrix column " + std::to_string(c + 1) + " sums to " + format_double(sum));
    }
    for (Eigen::Index r = 0; r < k; ++r) {
      if (r != c) gap = std::min(gap, P(c, c) - P(r, c));
    }
  }
  if (!(gap > 0.0)) {
    throw ValidationError("transition matrix is not strictly diagonal-dominant (gap " + format_double(gap) + ")");
  }
  return gap;
}

void validate(const NoiseModel& model) {
  if (const auto* a = std::get_if<AdditiveNoise>(&model)) {
    if (!(a->sigma > 0.0) || !std::isfinite(a->sigma)) throw ValidationError("additive noise needs sigma > 0");
  } else if (const auto* f = std::get_if<BinaryFlip>(&model)) {
    if (!(f->p >= 0.0 && f->p < 0.5)) throw ValidationError("flip probability must satisfy 0 <= p < 1/2");
  } else {
    validate_transition(std::get<ClassTransition>(model).P);
  }
}

DataSet corrupt(const DataSet& data, const NoiseModel& model, std::uint64_t seed) {
  validate(model);
  DataSet out = data;
  out.noisy_labels.resize(data.n());
  Rng rng(seed, 0x6e6f697365);  // "noise"
  if (const auto* a = std::get_if<AdditiveNoise>(&model)) {
    if (data.task.kind != TaskKind::kRegression) throw UsageError("additive noise applies to regression targets only");
    const double half_width = std::sqrt(3.0) * a->sigma;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      const double e = a->shape == NoiseShape::kGaussian ? a->sigma * rng.normal() : rng.uniform(-half_width, half_width);
      out.noisy_labels(i) = data.clean_labels(i) + e;
    }
  } else if (const auto* f = std::get_if<BinaryFlip>(&model)) {
    if (data.task.kind != TaskKind::kBinary) throw UsageError("flip noise applies to binary tasks only");
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      out.noisy_labels(i) = rng.bernoulli(f->p) ? -data.clean_labels(i) : data.clean_labels(i);
    }
  } else {
    const Eigen::MatrixXd& P = std::get<ClassTransition>(model).P;
    if (data.task.kind != TaskKind::kMulticlass) throw UsageError("transition noise applies to multiclass tasks only");
    if (P.rows() != data.task.num_classes) throw DimensionError("corrupt", data.task.num_classes, P.rows());
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      const int c = class_id(data.clean_labels(i), data.task.num_classes);
      const Eigen::VectorXd column = P.col(c - 1);
      out.noisy_labels(i) = static_cast<double>(rng.categorical(column) + 1);
    }
  }
  return out;
}

Eigen::VectorXd onehot(int c, int num_classes) {
  if (num_classes < 1 || c < 1 || c > num_classes) {
    throw UsageError("onehot: class " + std::to_string(c) + " outside 1.." + std::to_string(num_classes));
  }
  Eigen::VectorXd e = Eigen::VectorXd::Zero(num_classes);
  e(c - 1) = 1.0;
  return e;
}

Eigen::MatrixXd onehot_matrix(const Eigen::VectorXd& labels, int num_classes) {
  Eigen::MatrixXd y(num_classes, labels.size());
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const double r = std::round(labels(i));
    if (r != labels(i)) throw UsageError("onehot: non-integral class label");
    y.col(i) = onehot(static_cast<int>(r), num_classes);
  }
  return y;
}

Eigen::VectorXd rescale_binary(const Eigen::VectorXd& labels, double p) {
  if (!(p >= 0.0 && p < 0.5)) throw UsageError("rescale_binary: need 0 <= p < 1/2");
  return (1.0 - 2.0 * p) * labels;
}

double flip_sigma_eff(double p) {
  if (!(p >= 0.0 && p < 0.5)) throw UsageError("flip_sigma_eff: need 0 <= p < 1/2");
  return std::min(1.0, 2.0 * std::sqrt(p));
}

Eigen::MatrixXd read_transition_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::logic_error&) {
        throw FormatError(path.string() + ": not a number: '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  const std::size_t k = rows.size();
  if (k == 0) throw FormatError(path.string() + ": empty transition matrix");
  Eigen::MatrixXd P(k, k);
  for (std::size_t r = 0; r < k; ++r) {
    if (rows[r].size() != k) throw FormatError(path.string() + ": transition matrix must be K x K");
    for (std::size_t c = 0; c < k; ++c) P(r, c) = rows[r][c];
  }
  return P;
}

}  // namespace ntkreg
