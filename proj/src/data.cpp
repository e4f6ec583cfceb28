#include "ntkreg/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <vector>

#include <openssl/evp.h>

#include "ntkreg/errors.hpp"
#include "ntkreg/rng.hpp"

namespace ntkreg {

namespace {

void append_le(std::vector<unsigned char>& out, std::uint64_t value, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<unsigned char>((value >> (8 * i)) & 0xFF));
}

std::uint64_t read_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset) {
  return (static_cast<std::uint32_t>(buf[offset]) << 24) | (static_cast<std::uint32_t>(buf[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(buf[offset + 2]) << 8) | static_cast<std::uint32_t>(buf[offset + 3]);
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

constexpr char kMagic[4] = {'N', 'T', 'K', 'K'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 2 + 1 + 8 + 32;

}  // namespace

void DataSet::validate(bool unit_rows) const {
  if (n() < 1 || d() < 1) throw ValidationError("dataset must have n >= 1 and d >= 1");
  if (!inputs.allFinite()) throw ValidationError("dataset inputs contain non-finite values");
  if (clean_labels.size() != n() || noisy_labels.size() != n()) {
    throw ValidationError("label vectors must have one entry per example");
  }
  if (unit_rows && max_row_norm_deviation(inputs) > 1e-12) {
    throw ValidationError("dataset rows are not unit-normalized");
  }
  for (const auto* labels : {&clean_labels, &noisy_labels}) {
    for (Eigen::Index i = 0; i < n(); ++i) {
      const double y = (*labels)(i);
      switch (task.kind) {
        case TaskKind::kBinary:
          if (y != 1.0 && y != -1.0) throw ValidationError("binary labels must be +1 or -1");
          break;
        case TaskKind::kMulticlass:
          if (y != std::round(y) || y < 1.0 || y > task.num_classes) {
            throw ValidationError("multiclass labels must be integers in 1..K");
          }
          break;
        case TaskKind::kRegression:
          if (!std::isfinite(y)) throw ValidationError("regression targets must be finite");
          break;
      }
    }
  }
}

double max_row_norm_deviation(const Eigen::MatrixXd& inputs) {
  if (inputs.rows() == 0) return 0.0;
  return (inputs.rowwise().norm().array() - 1.0).abs().maxCoeff();
}

void normalize_rows(Eigen::MatrixXd& inputs) {
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    const double norm = inputs.row(i).norm();
    if (norm == 0.0) throw ValidationError("cannot normalize a zero row");
    inputs.row(i) /= norm;
  }
}

DataSet load_mnist_binary(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
                          int class_a, int class_b, std::size_t limit) {
  if (class_a == class_b) throw UsageError("load_mnist_binary: classes must differ");
  if (class_a < 0 || class_a > 9 || class_b < 0 || class_b > 9) {
    throw UsageError("load_mnist_binary: classes must be digits 0..9");
  }
  const auto images = read_file(image_path);
  const auto labels = read_file(label_path);
  if (images.size() < 16 || read_be32(images, 0) != 0x00000803) {
    throw FormatError(image_path.string() + ": bad IDX image magic");
  }
  if (labels.size() < 8 || read_be32(labels, 0) != 0x00000801) {
    throw FormatError(label_path.string() + ": bad IDX label magic");
  }
  const std::size_t count = read_be32(images, 4);
  const std::size_t rows = read_be32(images, 8);
  const std::size_t cols = read_be32(images, 12);
  const std::size_t pixels = rows * cols;
  if (pixels == 0) throw FormatError(image_path.string() + ": zero-sized images");
  if (images.size() != 16 + count * pixels) throw FormatError(image_path.string() + ": payload size mismatch");
  if (read_be32(labels, 4) != count || labels.size() != 8 + count) {
    throw FormatError(label_path.string() + ": label count does not match images");
  }

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < count && (limit == 0 || keep.size() < limit); ++i) {
    const int digit = labels[8 + i];
    if (digit != class_a && digit != class_b) continue;
    const unsigned char* px = images.data() + 16 + i * pixels;
    bool blank = true;
    for (std::size_t j = 0; j < pixels && blank; ++j) blank = px[j] == 0;
    if (!blank) keep.push_back(i);
  }
  if (keep.size() < 2) throw EmptyDatasetError("load_mnist_binary: fewer than 2 usable examples");

  DataSet data;
  data.task = Task::binary();
  data.inputs.resize(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(pixels));
  data.clean_labels.resize(data.inputs.rows());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const unsigned char* px = images.data() + 16 + keep[r] * pixels;
    for (std::size_t j = 0; j < pixels; ++j) data.inputs(r, j) = px[j] / 255.0;
    data.clean_labels(r) = labels[8 + keep[r]] == class_a ? 1.0 : -1.0;
  }
  normalize_rows(data.inputs);
  data.noisy_labels = data.clean_labels;
  return data;
}

SynthTarget parse_synth_target(const std::string& name) {
  if (name == "linear-sign") return SynthTarget::kLinearSign;
  if (name == "smooth-poly") return SynthTarget::kSmoothPoly;
  if (name == "argmax") return SynthTarget::kArgmax;
  throw UsageError("unknown synthetic target '" + name + "'");
}

std::string to_string(SynthTarget target) {
  switch (target) {
    case SynthTarget::kLinearSign:
      return "linear-sign";
    case SynthTarget::kSmoothPoly:
      return "smooth-poly";
    case SynthTarget::kArgmax:
      return "argmax";
  }
  return "?";
}

DataSet synth_sphere(Eigen::Index n, Eigen::Index d, SynthTarget target, std::uint64_t seed, int num_classes) {
  if (n < 1) throw UsageError("synth_sphere: n must be >= 1");
  if (d < 2) throw UsageError("synth_sphere: d must be >= 2");
  if (target == SynthTarget::kArgmax && (num_classes < 2 || num_classes > d)) {
    throw UsageError("synth_sphere: argmax target needs 2 <= K <= d");
  }
  Rng rng(seed);
  DataSet data;
  data.inputs.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    double norm = 0.0;
    do {
      for (Eigen::Index j = 0; j < d; ++j) data.inputs(i, j) = rng.normal();
      norm = data.inputs.row(i).norm();
    } while (norm == 0.0);
    data.inputs.row(i) /= norm;
  }

  const Eigen::VectorXd w = Eigen::VectorXd::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
  data.clean_labels.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = data.inputs.row(i).dot(w);
    switch (target) {
      case SynthTarget::kLinearSign:
        data.clean_labels(i) = t >= 0.0 ? 1.0 : -1.0;
        break;
      case SynthTarget::kSmoothPoly:
        data.clean_labels(i) = std::clamp(0.5 * (t + t * t - 1.0 / static_cast<double>(d)), -1.0, 1.0);
        break;
      case SynthTarget::kArgmax: {
        Eigen::Index best = 0;
        data.inputs.row(i).head(num_classes).maxCoeff(&best);
        data.clean_labels(i) = static_cast<double>(best + 1);
        break;
      }
    }
  }
  switch (target) {
    case SynthTarget::kLinearSign:
      data.task = Task::binary();
      break;
    case SynthTarget::kSmoothPoly:
      data.task = Task::regression();
      break;
    case SynthTarget::kArgmax:
      data.task = Task::multiclass(num_classes);
      break;
  }
  data.noisy_labels = data.clean_labels;
  return data;
}

std::pair<DataSet, DataSet> split(const DataSet& data, Eigen::Index first) {
  if (first < 0 || first > data.n()) throw UsageError("split: index out of range");
  DataSet a, b;
  a.task = b.task = data.task;
  a.inputs = data.inputs.topRows(first);
  b.inputs = data.inputs.bottomRows(data.n() - first);
  a.clean_labels = data.clean_labels.head(first);
  b.clean_labels = data.clean_labels.tail(data.n() - first);
  a.noisy_labels = data.noisy_labels.head(first);
  b.noisy_labels = data.noisy_labels.tail(data.n() - first);
  return {std::move(a), std::move(b)};
}

Digest input_digest(const Eigen::MatrixXd& inputs) {
  std::vector<unsigned char> bytes;
  bytes.reserve(16 + 8 * static_cast<std::size_t>(inputs.size()));
  append_le(bytes, static_cast<std::uint64_t>(inputs.rows()), 8);
  append_le(bytes, static_cast<std::uint64_t>(inputs.cols()), 8);
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    for (Eigen::Index j = 0; j < inputs.cols(); ++j) append_le(bytes, std::bit_cast<std::uint64_t>(inputs(i, j)), 8);
  }
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size()) {
    throw Error(ErrorKind::kIo, "SHA-256 computation failed");
  }
  return out;
}

std::string to_hex(const Digest& digest) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  for (auto b : digest) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 0xF]);
  }
  return s;
}

void save_kernel(const KernelCache& cache, const std::filesystem::path& path) {
  const auto& m = cache.matrix.values();
  const auto n = static_cast<std::uint64_t>(m.rows());
  std::vector<unsigned char> bytes(kMagic, kMagic + 4);
  append_le(bytes, kVersion, 2);
  bytes.push_back(static_cast<unsigned char>(cache.provenance.kind));
  append_le(bytes, n, 8);
  bytes.insert(bytes.end(), cache.digest.begin(), cache.digest.end());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) append_le(bytes, std::bit_cast<std::uint64_t>(m(i, j)), 8);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

KernelCache load_kernel(const std::filesystem::path& path, const DataSet& dataset) {
  const auto bytes = read_file(path);
  if (bytes.size() < kHeaderBytes) throw FormatError(path.string() + ": truncated kernel cache header");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw FormatError(path.string() + ": bad kernel cache magic");
  if (read_le(bytes.data() + 4, 2) != kVersion) throw FormatError(path.string() + ": unsupported cache version");
  const auto tag = bytes[6];
  if (tag != static_cast<std::uint8_t>(KernelKind::kEmpirical) && tag != static_cast<std::uint8_t>(KernelKind::kAnalytic)) {
    throw FormatError(path.string() + ": unknown provenance tag");
  }
  const std::uint64_t n = read_le(bytes.data() + 7, 8);
  if (n == 0 || n > (bytes.size() - kHeaderBytes) / 8 || bytes.size() - kHeaderBytes != n * n * 8) {
    throw FormatError(path.string() + ": kernel payload size mismatch");
  }
  KernelCache cache;
  cache.provenance.kind = static_cast<KernelKind>(tag);
  std::copy(bytes.begin() + 15, bytes.begin() + 15 + 32, cache.digest.begin());
  if (cache.digest != input_digest(dataset.inputs)) {
    throw StaleCacheError(path.string() + ": input digest does not match the dataset");
  }
  const auto dim = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd m(dim, dim);
  const unsigned char* p = bytes.data() + kHeaderBytes;
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j, p += 8) m(i, j) = std::bit_cast<double>(read_le(p, 8));
  }
  cache.matrix = KernelMatrix(std::move(m));
  return cache;
}

}  // namespace ntkreg
