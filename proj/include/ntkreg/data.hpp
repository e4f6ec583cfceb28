#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "ntkreg/kernel_matrix.hpp"

namespace ntkreg {

enum class TaskKind { kRegression, kBinary, kMulticlass };

struct Task {
  TaskKind kind = TaskKind::kRegression;
  int num_classes = 0;  // only meaningful for kMulticlass

  static Task regression() { return {TaskKind::kRegression, 0}; }
  static Task binary() { return {TaskKind::kBinary, 2}; }
  static Task multiclass(int k) { return {TaskKind::kMulticlass, k}; }
};

/// Inputs plus clean and noisy labels.
///
/// Labels are stored as reals for every task: regression targets, +-1 signs,
/// or class ids 1..K held as integral doubles.
struct DataSet {
  Eigen::MatrixXd inputs;  // n x d, one example per row
  Eigen::VectorXd clean_labels;
  Eigen::VectorXd noisy_labels;
  Task task;

  Eigen::Index n() const { return inputs.rows(); }
  Eigen::Index d() const { return inputs.cols(); }

  // Throws ValidationError on any broken invariant. With `unit_rows`, also
  // requires | ||x_i|| - 1 | <= 1e-12 for every row.
  void validate(bool unit_rows = true) const;
};

// Largest | ||x_i||_2 - 1 | over rows.
double max_row_norm_deviation(const Eigen::MatrixXd& inputs);

void normalize_rows(Eigen::MatrixXd& inputs);

/// Reads an IDX image/label pair, keeps digits `class_a` (+1) and `class_b` (-1),
/// scales pixels by 1/255 and l2-normalizes rows. Blank images are skipped.
/// `limit` caps the number of returned examples (0 = no cap), taken in file order.
DataSet load_mnist_binary(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
                          int class_a, int class_b, std::size_t limit);

enum class SynthTarget {
  kLinearSign,  // sgn(w . x)
  kSmoothPoly,  // clamp(((w . x) + (w . x)^2 - 1/d) / 2, -1, 1)
  kArgmax,      // 1 + argmax_h x_h over the first K coordinates (multiclass)
};

SynthTarget parse_synth_target(const std::string& name);
std::string to_string(SynthTarget target);

/// n points uniform on the unit sphere S^{d-1}; w is the fixed unit vector (1, ..., 1)/sqrt(d).
/// `num_classes` is only read for kArgmax and must satisfy 2 <= K <= d.
DataSet synth_sphere(Eigen::Index n, Eigen::Index d, SynthTarget target, std::uint64_t seed, int num_classes = 0);

// Rows [0, first) and [first, n).
std::pair<DataSet, DataSet> split(const DataSet& data, Eigen::Index first);

// ---------------------------------------------------------------------------
// Kernel cache

using Digest = std::array<std::uint8_t, 32>;

// SHA-256 over (u64 n, u64 d, row-major f64 little-endian inputs).
Digest input_digest(const Eigen::MatrixXd& inputs);
std::string to_hex(const Digest& digest);

enum class KernelKind : std::uint8_t { kEmpirical = 1, kAnalytic = 2 };

struct KernelProvenance {
  KernelKind kind = KernelKind::kAnalytic;
  // Recorded in memory only; the file format keeps just `kind`.
  std::uint32_t width = 0;
  std::uint32_t depth = 0;
  std::uint64_t seed = 0;
};

struct KernelCache {
  KernelMatrix matrix;
  KernelProvenance provenance;
  Digest digest{};
};

/// File layout: "NTKK", u16 version = 1, u8 provenance tag, u64 n,
/// 32-byte input digest, n*n f64 row-major. All integers and floats little-endian.
void save_kernel(const KernelCache& cache, const std::filesystem::path& path);

/// Throws FormatError on a bad header or short payload, StaleCacheError when
/// the stored digest does not match `dataset.inputs`.
KernelCache load_kernel(const std::filesystem::path& path, const DataSet& dataset);

}  // namespace ntkreg
