#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "doctest.h"
#include "ntkreg/bounds.hpp"
#include "ntkreg/data.hpp"
#include "ntkreg/errors.hpp"
#include "ntkreg/kernel.hpp"
#include "ntkreg/krr.hpp"
#include "ntkreg/noise.hpp"

using namespace ntkreg;

namespace {

const double kInvE = std::exp(-1.0);

struct Binary {
  DataSet data = synth_sphere(60, 5, SynthTarget::kLinearSign, 3);
  KernelMatrix k = analytic_ntk(2, data);
};

double component(const BoundReport& r, const std::string& name) {
  for (const auto& [key, value] : r.components) {
    if (key == name) return value;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

void check_assembly(const BoundReport& r) {
  double sum = 0.0;
  for (const auto& [name, value] : r.components) {
    CHECK(value >= 0.0);
    CHECK(std::isfinite(value));
    sum += value;
  }
  CHECK(r.total == doctest::Approx(sum).epsilon(1e-15));
  CHECK(r.key_values().back().first == "total");
}

}  // namespace

TEST_SUITE("bounds") {

TEST_CASE("inverse quadratic forms") {
  CHECK(quad_form_inv(KernelMatrix(Eigen::Matrix2d::Identity()), Eigen::Vector2d(1, 1)) == 2.0);
  CHECK(quad_form_inv(KernelMatrix(2.0 * Eigen::Matrix2d::Identity()), Eigen::Vector2d(1, 1)) ==
        doctest::Approx(1.0).epsilon(1e-15));
  Eigen::Matrix2d m;
  m << 2, 1, 1, 2;
  CHECK(quad_form_inv(KernelMatrix(m), Eigen::Vector2d(1, 1)) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(quad_form_inv(KernelMatrix(Eigen::Matrix2d::Ones()), Eigen::Vector2d(1, -1)), SingularityError);
}

TEST_CASE("lemma bounds by hand") {
  const Eigen::Index n = 4;
  const KernelMatrix eye(Eigen::MatrixXd::Identity(n, n));
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
  CHECK(lemma1_bound(eye, zero, 1.0, 1.0, kInvE) ==
        doctest::Approx(std::sqrt(4.0) / 2.0 + std::numbers::sqrt2).epsilon(1e-14));
  CHECK(lemma2_bound(eye, zero, 1.0, 2.0, kInvE) ==
        doctest::Approx(0.5 * (2.0 + std::numbers::sqrt2)).epsilon(1e-14));

  Binary b;
  const double q = quad_form_inv(b.k, b.data.clean_labels);
  CHECK(lemma1_bound(b.k, b.data.clean_labels, 0.0, 0.7, 0.1) == doctest::Approx(0.35 * std::sqrt(q)).epsilon(1e-14));
  const double l2 = lemma2_bound(b.k, b.data.clean_labels, 0.0, 0.7, 0.1);
  CHECK(l2 == doctest::Approx(std::sqrt(RidgeSolver(b.k, 0.7).quad_form(b.data.clean_labels))).epsilon(1e-14));
  // Noiseless: the KRR solution's RKHS norm stays below B'.
  CHECK(rkhs_norm(krr_fit(b.k, b.data.clean_labels, 0.7), b.k) <= l2 + 1e-10);
}

TEST_CASE("lemma1_bound grows as delta shrinks") {
  Binary b;
  double previous = 0.0;
  for (double delta : {0.5, 0.2, 0.1, 0.01, 1e-4}) {
    const double v = lemma1_bound(b.k, b.data.clean_labels, 0.3, 1.0, delta);
    CHECK(v > previous);
    previous = v;
  }
  CHECK_THROWS_AS(lemma1_bound(b.k, b.data.clean_labels, 0.3, 1.0, 1.0), UsageError);
  CHECK_THROWS_AS(lemma1_bound(b.k, b.data.clean_labels, 0.3, 0.0, 0.1), UsageError);
}

TEST_CASE("additive reports are itemized sums") {
  const DataSet d = synth_sphere(80, 5, SynthTarget::kSmoothPoly, 2);
  const KernelMatrix k = analytic_ntk(2, d);
  for (ConstantMode mode : {ConstantMode::kExplicit, ConstantMode::kUnit}) {
    const BoundReport r = bound_additive(k, d.clean_labels, 0.1, 1.5, 0.1, mode);
    check_assembly(r);
    CHECK(r.total == doctest::Approx(r.main_term + r.sigma_over_lambda_term + r.delta_term).epsilon(1e-14));
    CHECK(r.rademacher_value == doctest::Approx(r.lemma2_value * std::sqrt(r.trace) / 80).epsilon(1e-15));
  }
  const BoundReport e = bound_additive(k, d.clean_labels, 0.1, 1.5, 0.1);
  const double tr = k.trace();
  CHECK(component(e, "sigma_over_lambda") == doctest::Approx(2.5 * 0.1 / 1.5 * std::sqrt(tr / 80)).epsilon(1e-14));
  CHECK(component(e, "rademacher_epsilon") == doctest::Approx(2 * std::sqrt(tr) / 80).epsilon(1e-14));
  CHECK(component(e, "epsilon_net") ==
        doctest::Approx(3 * std::sqrt(std::log(6.0 * std::ceil(80 / 1.5) / 0.1) / 160)).epsilon(1e-14));
  CHECK(e.lemma1_value == doctest::Approx(lemma1_bound(k, d.clean_labels, 0.1, 1.5, 0.1 / 3)).epsilon(1e-15));
}

TEST_CASE("noiseless additive bound is dominated by the main term for large n") {
  double previous_share = 1.0;
  for (Eigen::Index n : {100, 400, 1600}) {
    const DataSet d = synth_sphere(n, 5, SynthTarget::kSmoothPoly, 4);
    const KernelMatrix k = analytic_ntk(2, d);
    const double lambda = std::pow(static_cast<double>(n), 0.25);
    const BoundReport r = bound_additive(k, d.clean_labels, 0.0, lambda, 0.1, ConstantMode::kUnit);
    CHECK(r.sigma_over_lambda_term == 0.0);
    CHECK(component(r, "sigma_log") == 0.0);
    const double share = (r.total - r.main_term) / r.total;
    CHECK(share < previous_share);
    previous_share = share;
  }
  CHECK(previous_share < 0.5);
}

TEST_CASE("additive bound decreases with n on the smooth target") {
  for (ConstantMode mode : {ConstantMode::kExplicit, ConstantMode::kUnit}) {
    double previous = std::numeric_limits<double>::infinity();
    for (Eigen::Index n : {100, 200, 400}) {
      double mean = 0.0;
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const DataSet d = synth_sphere(n, 5, SynthTarget::kSmoothPoly, 100 + seed);
        const double lambda = std::pow(static_cast<double>(n), 0.25);
        mean += bound_additive(analytic_ntk(2, d), d.clean_labels, 0.1, lambda, 0.1, mode).total / 3.0;
      }
      CHECK(mean < previous);
      previous = mean;
    }
  }
}

TEST_CASE("bounds do not increase with delta") {
  Binary b;
  for (ConstantMode mode : {ConstantMode::kExplicit, ConstantMode::kUnit}) {
    double previous = std::numeric_limits<double>::infinity();
    for (double delta : {0.001, 0.01, 0.05, 0.1, 0.5, 0.9}) {
      const double a = bound_additive(b.k, b.data.clean_labels, 0.2, 1.0, delta, mode).total;
      const double c = bound_binary(b.k, b.data.clean_labels, 0.2, 1.0, delta, mode).total;
      CHECK(a <= previous);
      CHECK(c > 0.0);
      previous = a;
    }
  }
}

TEST_CASE("binary bound increases with p and blows up near one half") {
  Binary b;
  for (ConstantMode mode : {ConstantMode::kExplicit, ConstantMode::kUnit}) {
    double previous = 0.0;
    for (double p : {0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.45, 0.49, 0.4999}) {
      const BoundReport r = bound_binary(b.k, b.data.clean_labels, p, 1.0, 0.1, mode);
      check_assembly(r);
      CHECK(r.total > previous);
      previous = r.total;
    }
    CHECK(previous > 1e3);
  }
  const BoundReport clean = bound_binary(b.k, b.data.clean_labels, 0.0, 1.0, 0.1, ConstantMode::kUnit);
  CHECK(clean.sigma_over_lambda_term == 0.0);
  CHECK(component(clean, "sqrt_p_log") == 0.0);
  CHECK_THROWS_AS(bound_binary(b.k, b.data.clean_labels, 0.5, 1.0, 0.1), UsageError);
  Eigen::VectorXd soft = b.data.clean_labels;
  soft(0) = 0.5;
  CHECK_THROWS_AS(bound_binary(b.k, soft, 0.1, 1.0, 0.1), UsageError);
}

TEST_CASE("multiclass with identity transition") {
  const DataSet d = synth_sphere(60, 5, SynthTarget::kArgmax, 8, 3);
  const KernelMatrix k = analytic_ntk(2, d);
  const Eigen::MatrixXd Y = onehot_matrix(d.clean_labels, 3);
  const BoundReport r = bound_multiclass(k, Y, Eigen::Matrix3d::Identity(), 1.0, 0.1);
  check_assembly(r);
  CHECK(r.gap == 1.0);
  REQUIRE(r.q_quadratic_forms.size() == 3);
  for (int h = 0; h < 3; ++h) {
    CHECK(r.q_quadratic_forms[h] == doctest::Approx(quad_form_inv(k, Y.row(h).transpose())).epsilon(1e-14));
  }
}

TEST_CASE("multiclass quadratic forms use the columns of P") {
  const DataSet d = synth_sphere(40, 4, SynthTarget::kArgmax, 2, 2);
  const KernelMatrix k = analytic_ntk(2, d);
  Eigen::Matrix2d P;
  P << 0.8, 0.3, 0.2, 0.7;
  Eigen::MatrixXd Q(2, d.n());
  for (Eigen::Index j = 0; j < d.n(); ++j) Q.col(j) = P.col(static_cast<int>(d.clean_labels(j)) - 1);
  for (ConstantMode mode : {ConstantMode::kExplicit, ConstantMode::kUnit}) {
    const BoundReport r = bound_multiclass(k, onehot_matrix(d.clean_labels, 2), P, 1.0, 0.1, mode);
    CHECK(r.gap == doctest::Approx(0.4).epsilon(1e-14));
    for (int h = 0; h < 2; ++h) {
      CHECK(r.q_quadratic_forms[h] == doctest::Approx(quad_form_inv(k, Q.row(h).transpose())).epsilon(1e-14));
    }
    check_assembly(r);
  }
  CHECK_THROWS_AS(bound_multiclass(k, onehot_matrix(d.clean_labels, 2), Eigen::Matrix2d::Constant(0.5), 1.0, 0.1),
                  ValidationError);
}

TEST_CASE("ramp loss values") {
  for (double p : {0.0, 0.1, 0.3}) {
    for (double y : {1.0, -1.0}) {
      const double ybar = (1 - 2 * p) * y;
      CHECK(ramp_loss(ybar, y, p) == 0.0);
      CHECK(ramp_loss(0.0, y, p) == doctest::Approx(1 - 2 * p).epsilon(1e-15));
    }
  }
  CHECK_THROWS_AS(ramp_loss(0.0, 1.0, 0.5), UsageError);
}

TEST_CASE("ramp loss dominates the scaled zero-one loss and is 1-Lipschitz") {
  for (double p : {0.0, 0.1, 0.3}) {
    for (double y : {1.0, -1.0}) {
      double prev = ramp_loss(-2.0, y, p);
      for (int i = -2000; i <= 2000; ++i) {
        const double u = i * 1e-3;
        const double v = ramp_loss(u, y, p);
        const bool wrong = !(u * y > 0.0);
        CHECK(v >= (1 - 2 * p) * (wrong ? 1.0 : 0.0));
        if (i > -2000) CHECK(std::abs(v - prev) <= 1e-3 + 1e-12);
        prev = v;
      }
    }
  }
}

TEST_CASE("clipped absolute loss against the ramp loss") {
  // Pointwise: ramp(u, y, 0) <= min(|u - y|, 1) <= ramp(u, y, 0) + |u - clamp(u, -1, 1)|.
  DataSet test;
  test.task = Task::binary();
  test.inputs = Eigen::MatrixXd::Zero(801, 1);
  test.clean_labels.resize(801);
  Eigen::MatrixXd pred(801, 1);
  for (int i = 0; i < 801; ++i) {
    pred(i, 0) = -2.0 + 0.005 * i;
    test.clean_labels(i) = i % 2 == 0 ? 1.0 : -1.0;
  }
  test.noisy_labels = test.clean_labels;
  for (int i = 0; i < 801; ++i) {
    const double u = pred(i, 0);
    const double y = test.clean_labels(i);
    const double clipped = std::min(std::abs(u - y), 1.0);
    CHECK(ramp_loss(u, y, 0.0) <= clipped + 1e-15);
    CHECK(clipped <= ramp_loss(u, y, 0.0) + std::abs(u - std::clamp(u, -1.0, 1.0)) + 1e-15);
  }
  const double ramp_risk = clean_risk(pred, test, Loss::ramp(0.0));
  const double abs_risk = clean_risk(pred, test, Loss::clipped_absolute());
  CHECK(ramp_risk <= abs_risk);
}

TEST_CASE("zero-one conventions") {
  DataSet test = synth_sphere(10, 3, SynthTarget::kLinearSign, 1);
  for (int i = 0; i < 10; ++i) test.clean_labels(i) = i % 2 == 0 ? 1.0 : -1.0;
  CHECK(clean_risk(Eigen::MatrixXd::Zero(10, 1), test, Loss::zero_one()) == 1.0);
  CHECK(misclassified(Eigen::RowVectorXd::Constant(1, 0.0), 1.0, Task::binary()));
  CHECK(misclassified(Eigen::RowVectorXd::Constant(1, 0.0), -1.0, Task::binary()));
  CHECK(misclassified(Eigen::RowVector3d(0.5, 0.5, 0.1), 2.0, Task::multiclass(3)));
  CHECK_FALSE(misclassified(Eigen::RowVector3d(0.5, 0.5, 0.1), 1.0, Task::multiclass(3)));
  CHECK_THROWS_AS(clean_risk(Eigen::MatrixXd::Zero(10, 1), synth_sphere(10, 3, SynthTarget::kSmoothPoly, 1),
                             Loss::zero_one()),
                  UsageError);
}

TEST_CASE("interpolating predictor has zero training error") {
  const DataSet d = synth_sphere(30, 5, SynthTarget::kLinearSign, 5);
  KrrPredictor p = krr_fit(analytic_ntk(2, d), d.clean_labels, 0.0);
  bind(p, AnalyticSource{2}, d.inputs);
  CHECK(empirical_clean_risk(p, d, Loss::zero_one()) == 0.0);
}

TEST_CASE("constant modes") {
  CHECK(parse_constant_mode("unit") == ConstantMode::kUnit);
  CHECK(to_string(ConstantMode::kExplicit) == "explicit");
  CHECK_THROWS_AS(parse_constant_mode("tight"), UsageError);
}

}
