#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "ntkreg/data.hpp"
#include "ntkreg/errors.hpp"

using namespace ntkreg;

namespace {

// Eight 2x2 images: digits cycle 5, 8, 3 and the fourth image is blank.
struct IdxFixture {
  testing::TempDir dir{"idx"};
  std::vector<std::vector<std::uint8_t>> pixels;
  std::vector<std::uint8_t> digits;

  IdxFixture() {
    const std::uint8_t cycle[] = {5, 8, 3};
    for (int i = 0; i < 8; ++i) {
      digits.push_back(cycle[i % 3]);
      if (i == 3) {
        pixels.push_back({0, 0, 0, 0});
      } else {
        pixels.push_back({static_cast<std::uint8_t>(10 * i + 1), 255, 0, static_cast<std::uint8_t>(7 * i)});
      }
    }
    testing::write_idx(images(), labels(), pixels, digits, 2, 2);
  }
  std::filesystem::path images() const { return dir / "img.idx"; }
  std::filesystem::path labels() const { return dir / "lab.idx"; }
};

DataSet small_dataset() {
  DataSet d;
  d.inputs.resize(2, 3);
  d.inputs << 0.5, -0.25, 1.0, 2.0, 3.5, -1.0;
  d.clean_labels = Eigen::VectorXd::Ones(2);
  d.noisy_labels = d.clean_labels;
  return d;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("idx loader keeps the two digits, maps labels and normalizes rows") {
  IdxFixture fx;
  const DataSet d = load_mnist_binary(fx.images(), fx.labels(), 5, 8, 0);
  CHECK(d.task.kind == TaskKind::kBinary);
  CHECK(d.d() == 4);
  CHECK(max_row_norm_deviation(d.inputs) <= 1e-12);
  d.validate();

  // Independent reread straight from the raw bytes.
  const auto raw_img = testing::read_bytes(fx.images());
  const auto raw_lab = testing::read_bytes(fx.labels());
  std::vector<int> expected;
  for (int i = 0; i < 8; ++i) {
    const int digit = raw_lab[8 + i];
    bool blank = true;
    for (int j = 0; j < 4; ++j) blank = blank && raw_img[16 + 4 * i + j] == 0;
    if ((digit == 5 || digit == 8) && !blank) expected.push_back(i);
  }
  REQUIRE(d.n() == static_cast<Eigen::Index>(expected.size()));
  for (std::size_t r = 0; r < expected.size(); ++r) {
    const int i = expected[r];
    CHECK(d.clean_labels(r) == (raw_lab[8 + i] == 5 ? 1.0 : -1.0));
    Eigen::Vector4d px;
    for (int j = 0; j < 4; ++j) px(j) = raw_img[16 + 4 * i + j] / 255.0;
    px.normalize();
    CHECK((d.inputs.row(r).transpose() - px).cwiseAbs().maxCoeff() <= 1e-15);
  }
  CHECK(d.noisy_labels == d.clean_labels);
}

TEST_CASE("idx loader honours the limit and is deterministic") {
  IdxFixture fx;
  const DataSet a = load_mnist_binary(fx.images(), fx.labels(), 5, 8, 2);
  CHECK(a.n() == 2);
  const DataSet b = load_mnist_binary(fx.images(), fx.labels(), 5, 8, 2);
  CHECK(a.inputs == b.inputs);
  CHECK(a.clean_labels == b.clean_labels);
}

TEST_CASE("idx loader errors") {
  IdxFixture fx;
  CHECK_THROWS_AS(load_mnist_binary(fx.images(), fx.labels(), 5, 5, 0), UsageError);
  CHECK_THROWS_AS(load_mnist_binary(fx.images(), fx.labels(), 5, 12, 0), UsageError);
  // Neither 9 nor 7 occurs in the fixture.
  CHECK_THROWS_AS(load_mnist_binary(fx.images(), fx.labels(), 9, 7, 0), EmptyDatasetError);

  auto img = testing::read_bytes(fx.images());
  img[3] = 0x01;
  testing::write_bytes(fx.dir / "bad_magic.idx", img);
  CHECK_THROWS_AS(load_mnist_binary(fx.dir / "bad_magic.idx", fx.labels(), 5, 8, 0), FormatError);

  img = testing::read_bytes(fx.images());
  img.pop_back();
  testing::write_bytes(fx.dir / "short.idx", img);
  CHECK_THROWS_AS(load_mnist_binary(fx.dir / "short.idx", fx.labels(), 5, 8, 0), FormatError);

  CHECK_THROWS_AS(load_mnist_binary(fx.dir / "missing.idx", fx.labels(), 5, 8, 0), FormatError);
}

TEST_CASE("synth_sphere is deterministic with unit rows") {
  const DataSet a = synth_sphere(4, 3, SynthTarget::kLinearSign, 7);
  const DataSet b = synth_sphere(4, 3, SynthTarget::kLinearSign, 7);
  CHECK(a.n() == 4);
  CHECK(a.inputs == b.inputs);
  CHECK(a.clean_labels == b.clean_labels);
  CHECK(max_row_norm_deviation(a.inputs) <= 1e-12);
  a.validate();
  const DataSet c = synth_sphere(4, 3, SynthTarget::kLinearSign, 8);
  CHECK(c.inputs != a.inputs);
}

TEST_CASE("synth_sphere linear-sign labels are balanced") {
  const DataSet d = synth_sphere(1000, 10, SynthTarget::kLinearSign, 1);
  const double positives = (d.clean_labels.array() > 0.0).count();
  CHECK(positives >= 450);
  CHECK(positives <= 550);
}

TEST_CASE("synth_sphere smooth-poly labels stay in [-1, 1]") {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const DataSet d = synth_sphere(300, 3, SynthTarget::kSmoothPoly, seed);
    CHECK(d.task.kind == TaskKind::kRegression);
    CHECK(d.clean_labels.cwiseAbs().maxCoeff() <= 1.0);
    d.validate();
  }
}

TEST_CASE("synth_sphere argmax labels") {
  const DataSet d = synth_sphere(200, 5, SynthTarget::kArgmax, 3, 3);
  CHECK(d.task.num_classes == 3);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    Eigen::Index best = 0;
    d.inputs.row(i).head(3).maxCoeff(&best);
    CHECK(d.clean_labels(i) == static_cast<double>(best + 1));
  }
  CHECK_THROWS_AS(synth_sphere(10, 5, SynthTarget::kArgmax, 3, 6), UsageError);
}

TEST_CASE("synth_sphere preconditions") {
  CHECK_THROWS_AS(synth_sphere(0, 3, SynthTarget::kLinearSign, 1), UsageError);
  CHECK_THROWS_AS(synth_sphere(5, 1, SynthTarget::kLinearSign, 1), UsageError);
  CHECK_THROWS_AS(parse_synth_target("cubic"), UsageError);
}

TEST_CASE("split keeps row order") {
  const DataSet d = synth_sphere(10, 3, SynthTarget::kLinearSign, 2);
  const auto [a, b] = split(d, 6);
  CHECK(a.n() == 6);
  CHECK(b.n() == 4);
  CHECK(b.inputs.row(0) == d.inputs.row(6));
  CHECK(b.clean_labels(3) == d.clean_labels(9));
  CHECK_THROWS_AS(split(d, 11), UsageError);
}

TEST_CASE("validate rejects broken datasets") {
  DataSet d = synth_sphere(5, 3, SynthTarget::kLinearSign, 2);
  DataSet bad = d;
  bad.inputs(0, 0) *= 1.001;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK_NOTHROW(bad.validate(false));
  bad = d;
  bad.noisy_labels(1) = 0.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = d;
  bad.inputs(2, 1) = std::nan("");
  CHECK_THROWS_AS(bad.validate(false), ValidationError);
}

TEST_CASE("input digest matches a hashlib oracle") {
  // sha256(pack('<QQ', 2, 3) + pack('<6d', 0.5, -0.25, 1.0, 2.0, 3.5, -1.0))
  CHECK(to_hex(input_digest(small_dataset().inputs)) ==
        "1a8b55e3c4ad59d9e139e0096f03969bed5ca0e5bdf8a76cc79a2da14c3b73e2");
}

TEST_CASE("kernel cache round trip is bit exact") {
  testing::TempDir dir("cache");
  const DataSet d = small_dataset();
  Eigen::MatrixXd m(2, 2);
  m << 1.0 / 3.0, 0.1, 0.1, std::nextafter(2.0, 3.0);
  KernelCache cache{KernelMatrix(m), {KernelKind::kEmpirical, 64, 2, 9}, input_digest(d.inputs)};
  save_kernel(cache, dir / "k.ntkk");
  const auto bytes = testing::read_bytes(dir / "k.ntkk");
  CHECK(bytes.size() == 47 + 4 * 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "NTKK");
  const KernelCache back = load_kernel(dir / "k.ntkk", d);
  CHECK(back.matrix.values() == m);
  CHECK(back.provenance.kind == KernelKind::kEmpirical);

  Eigen::MatrixXd m3 = Eigen::MatrixXd::Random(3, 3);
  m3 = (m3 * m3.transpose()).eval();
  DataSet d3 = synth_sphere(3, 4, SynthTarget::kLinearSign, 5);
  save_kernel({KernelMatrix(m3), {}, input_digest(d3.inputs)}, dir / "k3.ntkk");
  const Eigen::MatrixXd back3 = load_kernel(dir / "k3.ntkk", d3).matrix.values();
  for (int i = 0; i < 9; ++i) CHECK(std::bit_cast<std::uint64_t>(back3(i)) == std::bit_cast<std::uint64_t>(m3(i)));
}

TEST_CASE("kernel cache rejects stale and corrupt files") {
  testing::TempDir dir("cache");
  DataSet d = synth_sphere(3, 4, SynthTarget::kLinearSign, 5);
  save_kernel({KernelMatrix(Eigen::MatrixXd::Identity(3, 3)), {}, input_digest(d.inputs)}, dir / "k.ntkk");

  DataSet perturbed = d;
  perturbed.inputs(1, 2) = std::nextafter(perturbed.inputs(1, 2), 1.0);
  CHECK_THROWS_AS(load_kernel(dir / "k.ntkk", perturbed), StaleCacheError);

  auto bytes = testing::read_bytes(dir / "k.ntkk");
  testing::write_bytes(dir / "trunc.ntkk", {bytes.begin(), bytes.begin() + 47});
  CHECK_THROWS_AS(load_kernel(dir / "trunc.ntkk", d), FormatError);
  testing::write_bytes(dir / "hdr.ntkk", {bytes.begin(), bytes.begin() + 20});
  CHECK_THROWS_AS(load_kernel(dir / "hdr.ntkk", d), FormatError);
  bytes[0] = 'X';
  testing::write_bytes(dir / "magic.ntkk", bytes);
  CHECK_THROWS_AS(load_kernel(dir / "magic.ntkk", d), FormatError);
}

}
