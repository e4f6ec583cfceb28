#include "ntkreg/bounds.hpp"

#include <algorithm>
#include <cmath>

#include "ntkreg/errors.hpp"
#include "ntkreg/noise.hpp"

namespace ntkreg {

namespace {

constexpr double kEpsilon = 1.0;  // epsilon-net radius

void check_common(const KernelMatrix& kernel, Eigen::Index labels, double lambda, double delta, const char* where) {
  if (kernel.size() == 0) throw EmptyDatasetError(std::string(where) + ": empty kernel");
  if (labels != kernel.size()) throw DimensionError(where, kernel.size(), labels);
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw UsageError(std::string(where) + ": lambda must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw UsageError(std::string(where) + ": delta must lie in (0, 1)");
}

void check_sigma(double sigma, const char* where) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw UsageError(std::string(where) + ": sigma must be >= 0");
}

// Quantities shared by every bound.
struct Setting {
  double n = 0.0;
  double lambda = 0.0;
  double delta = 0.0;
  double trace = 0.0;
};

Setting setting(const KernelMatrix& kernel, double lambda, double delta) {
  return {static_cast<double>(kernel.size()), lambda, delta, kernel.trace()};
}

// Terms of the explicit additive chain for labels with quadratic form q and noise sigma.
struct ExplicitTerms {
  double main_lambda = 0.0;        // (lambda/2) sqrt(q/n)
  double main_rademacher = 0.0;    // (2 sqrt(tr)/n) sqrt(q)
  double sigma_over_lambda = 0.0;  // (5 sigma/(2 lambda)) sqrt(tr/n)
  double noise = 0.0;              // sigma sqrt(2 log(3/delta)/n)
  double rademacher_noise = 0.0;   // (2 sqrt(tr)/n)(sigma/lambda) sqrt(2 log(3/delta))
  double rademacher_eps = 0.0;     // (2 sqrt(tr)/n) epsilon
  double net = 0.0;                // 3 sqrt(log(6 |N| / delta) / (2n)), |N| = ceil(n/(epsilon lambda))

  double delta_term() const { return noise + rademacher_noise + rademacher_eps + net; }
};

ExplicitTerms explicit_terms(const Setting& s, double q, double sigma) {
  ExplicitTerms t;
  const double log3 = std::log(3.0 / s.delta);
  const double rad = 2.0 * std::sqrt(s.trace) / s.n;
  const double net_size = std::max(1.0, std::ceil(s.n / (kEpsilon * s.lambda)));
  t.main_lambda = 0.5 * s.lambda * std::sqrt(q / s.n);
  t.main_rademacher = rad * std::sqrt(q);
  t.sigma_over_lambda = 2.5 * sigma / s.lambda * std::sqrt(s.trace / s.n);
  t.noise = sigma * std::sqrt(2.0 * log3 / s.n);
  t.rademacher_noise = rad * (sigma / s.lambda) * std::sqrt(2.0 * log3);
  t.rademacher_eps = rad * kEpsilon;
  t.net = 3.0 * std::sqrt(std::log(6.0 * net_size / s.delta) / (2.0 * s.n));
  return t;
}

double net_log_unit(const Setting& s, double delta) {
  return std::sqrt(std::max(0.0, std::log(s.n / (delta * s.lambda))) / s.n);
}

void finish(BoundReport& r) {
  r.total = 0.0;
  for (const auto& [name, value] : r.components) {
    if (!(value >= 0.0) || !std::isfinite(value)) {
      throw NumericalError("bound component " + name + " is negative or non-finite");
    }
    r.total += value;
  }
}

void fill_header(BoundReport& r, const char* kind, ConstantMode mode, const Setting& s) {
  r.kind = kind;
  r.mode = mode;
  r.n = static_cast<Eigen::Index>(s.n);
  r.lambda = s.lambda;
  r.delta = s.delta;
  r.trace = s.trace;
}

// Lemma values and the Rademacher bound for labels y with noise sigma, at delta / 3.
void fill_lemmas(BoundReport& r, const KernelMatrix& kernel, const Eigen::VectorXd& y, double sigma, const Setting& s) {
  const double l1 = lemma1_bound(kernel, y, sigma, s.lambda, s.delta / 3.0);
  const double l2 = lemma2_bound(kernel, y, sigma, s.lambda, s.delta / 3.0);
  r.lemma1_value = std::max(r.lemma1_value, l1);
  r.lemma2_value = std::max(r.lemma2_value, l2);
  r.rademacher_value = std::max(r.rademacher_value, l2 * std::sqrt(s.trace) / s.n);
}

}  // namespace

ConstantMode parse_constant_mode(const std::string& name) {
  if (name == "explicit") return ConstantMode::kExplicit;
  if (name == "unit") return ConstantMode::kUnit;
  throw UsageError("unknown constant mode '" + name + "' (expected explicit or unit)");
}

std::string to_string(ConstantMode mode) { return mode == ConstantMode::kExplicit ? "explicit" : "unit"; }

std::vector<std::pair<std::string, double>> BoundReport::key_values() const {
  std::vector<std::pair<std::string, double>> kv{
      {"n", static_cast<double>(n)},
      {"lambda", lambda},
      {"delta", delta},
      {"sigma", sigma},
      {"p", p},
      {"y_Kinv_y", y_Kinv_y},
      {"trace", trace},
      {"main_term", main_term},
      {"sigma_over_lambda_term", sigma_over_lambda_term},
      {"delta_term", delta_term},
      {"lemma1_value", lemma1_value},
      {"lemma2_value", lemma2_value},
      {"rademacher_value", rademacher_value},
      {"gap", gap},
  };
  for (std::size_t h = 0; h < q_quadratic_forms.size(); ++h) {
    kv.emplace_back("q_quadratic_form_" + std::to_string(h + 1), q_quadratic_forms[h]);
  }
  for (const auto& [name, value] : components) kv.emplace_back("component." + name, value);
  kv.emplace_back("total", total);
  return kv;
}

double quad_form_inv(const KernelMatrix& kernel, const Eigen::VectorXd& v) {
  if (v.size() != kernel.size()) throw DimensionError("quad_form_inv", kernel.size(), v.size());
  return std::max(0.0, RidgeSolver(kernel, 0.0).quad_form(v));
}

double lemma1_bound(const KernelMatrix& kernel, const Eigen::VectorXd& y, double sigma, double lambda, double delta) {
  check_common(kernel, y.size(), lambda, delta, "lemma1_bound");
  check_sigma(sigma, "lemma1_bound");
  return 0.5 * lambda * std::sqrt(quad_form_inv(kernel, y)) + sigma / (2.0 * lambda) * std::sqrt(kernel.trace()) +
         sigma * std::sqrt(2.0 * std::log(1.0 / delta));
}

double lemma2_bound(const KernelMatrix& kernel, const Eigen::VectorXd& y, double sigma, double lambda, double delta) {
  check_common(kernel, y.size(), lambda, delta, "lemma2_bound");
  check_sigma(sigma, "lemma2_bound");
  const double q = std::max(0.0, RidgeSolver(kernel, lambda).quad_form(y));
  const double n = static_cast<double>(kernel.size());
  return std::sqrt(q) + sigma / lambda * (std::sqrt(n) + std::sqrt(2.0 * std::log(1.0 / delta)));
}

BoundReport bound_additive(const KernelMatrix& kernel, const Eigen::VectorXd& y, double sigma, double lambda,
                           double delta, ConstantMode mode) {
  check_common(kernel, y.size(), lambda, delta, "bound_additive");
  check_sigma(sigma, "bound_additive");
  const Setting s = setting(kernel, lambda, delta);
  BoundReport r;
  fill_header(r, "additive", mode, s);
  r.sigma = sigma;
  r.y_Kinv_y = quad_form_inv(kernel, y);
  fill_lemmas(r, kernel, y, sigma, s);
  if (mode == ConstantMode::kExplicit) {
    const ExplicitTerms t = explicit_terms(s, r.y_Kinv_y, sigma);
    r.main_term = t.main_lambda + t.main_rademacher;
    r.sigma_over_lambda_term = t.sigma_over_lambda;
    r.delta_term = t.delta_term();
    r.components = {{"main_lambda", t.main_lambda},
                    {"main_rademacher", t.main_rademacher},
                    {"sigma_over_lambda", t.sigma_over_lambda},
                    {"noise_concentration", t.noise},
                    {"rademacher_noise", t.rademacher_noise},
                    {"rademacher_epsilon", t.rademacher_eps},
                    {"epsilon_net", t.net}};
  } else {
    const double log1 = std::log(1.0 / delta);
    r.main_term = 0.5 * (lambda + 1.0) * std::sqrt(r.y_Kinv_y / s.n);
    r.sigma_over_lambda_term = sigma / lambda;
    const double sigma_log = sigma * std::sqrt(log1 / s.n);
    const double sigma_lambda_log = sigma / lambda * std::sqrt(log1 / s.n);
    const double net = net_log_unit(s, delta);
    r.delta_term = sigma_log + sigma_lambda_log + net;
    r.components = {{"main", r.main_term},
                    {"sigma_over_lambda", r.sigma_over_lambda_term},
                    {"sigma_log", sigma_log},
                    {"sigma_over_lambda_log", sigma_lambda_log},
                    {"net_log", net}};
  }
  finish(r);
  return r;
}

BoundReport bound_binary(const KernelMatrix& kernel, const Eigen::VectorXd& y, double p, double lambda, double delta,
                         ConstantMode mode) {
  check_common(kernel, y.size(), lambda, delta, "bound_binary");
  if (!(p >= 0.0 && p < 0.5)) throw UsageError("bound_binary: need 0 <= p < 1/2");
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) != 1.0 && y(i) != -1.0) throw UsageError("bound_binary: labels must be +-1");
  }
  const Setting s = setting(kernel, lambda, delta);
  const double scale = 1.0 / (1.0 - 2.0 * p);
  BoundReport r;
  fill_header(r, "binary", mode, s);
  r.p = p;
  r.sigma = flip_sigma_eff(p);
  r.y_Kinv_y = quad_form_inv(kernel, y);
  fill_lemmas(r, kernel, rescale_binary(y, p), r.sigma, s);
  if (mode == ConstantMode::kExplicit) {
    // Applied to labels (1 - 2p) y: the main terms scale by (1 - 2p), which the
    // ramp-to-zero-one step divides back out.
    const ExplicitTerms t = explicit_terms(s, r.y_Kinv_y, r.sigma);
    r.main_term = t.main_lambda + t.main_rademacher;
    r.sigma_over_lambda_term = scale * t.sigma_over_lambda;
    r.delta_term = scale * t.delta_term();
    r.components = {{"main_lambda", t.main_lambda},
                    {"main_rademacher", t.main_rademacher},
                    {"sigma_over_lambda", scale * t.sigma_over_lambda},
                    {"noise_concentration", scale * t.noise},
                    {"rademacher_noise", scale * t.rademacher_noise},
                    {"rademacher_epsilon", scale * t.rademacher_eps},
                    {"epsilon_net", scale * t.net}};
  } else {
    const double log1 = std::log(1.0 / delta);
    r.main_term = 0.5 * (lambda + 1.0) * std::sqrt(r.y_Kinv_y / s.n);
    r.sigma_over_lambda_term = scale * std::sqrt(p) / lambda;
    const double p_log = scale * std::sqrt(p * log1 / s.n);
    const double net = scale * net_log_unit(s, delta);
    r.delta_term = p_log + net;
    r.components = {{"main", r.main_term},
                    {"sqrt_p_over_lambda", r.sigma_over_lambda_term},
                    {"sqrt_p_log", p_log},
                    {"net_log", net}};
  }
  finish(r);
  return r;
}

BoundReport bound_multiclass(const KernelMatrix& kernel, const Eigen::MatrixXd& Y, const Eigen::MatrixXd& P,
                             double lambda, double delta, ConstantMode mode) {
  check_common(kernel, Y.cols(), lambda, delta, "bound_multiclass");
  const double gap = validate_transition(P);
  if (Y.rows() != P.rows()) throw DimensionError("bound_multiclass", P.rows(), Y.rows());
  const Eigen::Index k = P.rows();
  const Setting s = setting(kernel, lambda, delta);
  const double delta_h = delta / static_cast<double>(k);
  const Setting sh{s.n, lambda, delta_h, s.trace};
  const Eigen::MatrixXd Q = P * Y;

  BoundReport r;
  fill_header(r, "multiclass", mode, s);
  r.sigma = 1.0;
  r.gap = gap;
  const double inv_gap = 1.0 / gap;

  ExplicitTerms sum;
  double sqrt_q_sum = 0.0;
  for (Eigen::Index h = 0; h < k; ++h) {
    const Eigen::VectorXd q = Q.row(h).transpose();
    const double form = quad_form_inv(kernel, q);
    r.q_quadratic_forms.push_back(form);
    r.y_Kinv_y += form;
    sqrt_q_sum += std::sqrt(form / s.n);
    fill_lemmas(r, kernel, q, 1.0, sh);
    const ExplicitTerms t = explicit_terms(sh, form, 1.0);
    sum.main_lambda += t.main_lambda;
    sum.main_rademacher += t.main_rademacher;
    sum.sigma_over_lambda += t.sigma_over_lambda;
    sum.noise += t.noise;
    sum.rademacher_noise += t.rademacher_noise;
    sum.rademacher_eps += t.rademacher_eps;
    sum.net += t.net;
  }

  if (mode == ConstantMode::kExplicit) {
    r.main_term = inv_gap * (sum.main_lambda + sum.main_rademacher);
    r.sigma_over_lambda_term = inv_gap * sum.sigma_over_lambda;
    r.delta_term = inv_gap * sum.delta_term();
    r.components = {{"main_lambda", inv_gap * sum.main_lambda},
                    {"main_rademacher", inv_gap * sum.main_rademacher},
                    {"sigma_over_lambda", inv_gap * sum.sigma_over_lambda},
                    {"noise_concentration", inv_gap * sum.noise},
                    {"rademacher_noise", inv_gap * sum.rademacher_noise},
                    {"rademacher_epsilon", inv_gap * sum.rademacher_eps},
                    {"epsilon_net", inv_gap * sum.net}};
  } else {
    const double kd = static_cast<double>(k);
    r.main_term = inv_gap * 0.5 * (lambda + 1.0) * sqrt_q_sum;
    r.sigma_over_lambda_term = inv_gap * kd / lambda;
    const double log_term = inv_gap * kd * std::sqrt(std::log(1.0 / delta_h) / s.n);
    const double net = inv_gap * kd * net_log_unit(s, delta_h);
    r.delta_term = log_term + net;
    r.components = {{"main", r.main_term},
                    {"one_over_lambda", r.sigma_over_lambda_term},
                    {"log", log_term},
                    {"net_log", net}};
  }
  finish(r);
  return r;
}

double ramp_loss(double u, double y, double p) {
  if (!(p >= 0.0 && p < 0.5)) throw UsageError("ramp_loss: need 0 <= p < 1/2");
  const double m = 1.0 - 2.0 * p;
  const double margin = u * m * y;
  if (margin <= 0.0) return m;
  if (margin < m * m) return m - margin / m;
  return 0.0;
}

bool misclassified(const Eigen::Ref<const Eigen::RowVectorXd>& outputs, double clean_label, const Task& task) {
  switch (task.kind) {
    case TaskKind::kBinary:
      if (outputs.size() != 1) throw DimensionError("misclassified", 1, outputs.size());
      return !(outputs(0) * clean_label > 0.0);
    case TaskKind::kMulticlass:
      if (outputs.size() != task.num_classes) throw DimensionError("misclassified", task.num_classes, outputs.size());
      return predicted_class(outputs) != static_cast<int>(clean_label);
    case TaskKind::kRegression:
      break;
  }
  throw UsageError("zero-one loss needs a classification task");
}

double clean_risk(const Eigen::MatrixXd& predictions, const DataSet& test, const Loss& loss) {
  if (predictions.rows() != test.n()) throw DimensionError("clean_risk", test.n(), predictions.rows());
  if (test.n() == 0) throw EmptyDatasetError("clean_risk: empty test set");
  const bool scalar_task = test.task.kind != TaskKind::kMulticlass;
  if (loss.kind != LossKind::kZeroOne) {
    if (!scalar_task) throw UsageError("clipped-absolute and ramp losses need a scalar-output task");
    if (predictions.cols() != 1) throw DimensionError("clean_risk", 1, predictions.cols());
  }
  if (loss.kind == LossKind::kRamp && test.task.kind != TaskKind::kBinary) {
    throw UsageError("ramp loss needs a binary task");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < test.n(); ++i) {
    const double y = test.clean_labels(i);
    switch (loss.kind) {
      case LossKind::kZeroOne:
        total += misclassified(predictions.row(i), y, test.task) ? 1.0 : 0.0;
        break;
      case LossKind::kClippedAbsolute:
        total += std::min(1.0, std::abs(predictions(i, 0) - y));
        break;
      case LossKind::kRamp:
        total += ramp_loss(predictions(i, 0), y, loss.p);
        break;
    }
  }
  return total / static_cast<double>(test.n());
}

double empirical_clean_risk(const KrrPredictor& predictor, const DataSet& test, const Loss& loss) {
  return clean_risk(krr_predict_batch(predictor, test.inputs), test, loss);
}

}  // namespace ntkreg
