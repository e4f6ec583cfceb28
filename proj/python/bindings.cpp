#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <string>

#include "ntkreg/bounds.hpp"
#include "ntkreg/data.hpp"
#include "ntkreg/errors.hpp"
#include "ntkreg/kernel.hpp"
#include "ntkreg/krr.hpp"
#include "ntkreg/linmodel.hpp"
#include "ntkreg/net.hpp"
#include "ntkreg/noise.hpp"

namespace py = pybind11;
using namespace ntkreg;

namespace {

// Wraps bare inputs so the library's DataSet-based entry points can be used.
DataSet inputs_only(const Eigen::MatrixXd& x) {
  DataSet d;
  d.inputs = x;
  d.clean_labels = Eigen::VectorXd::Zero(x.rows());
  d.noisy_labels = d.clean_labels;
  return d;
}

NetConfig net_config(Eigen::Index d, Eigen::Index width, int depth, Eigen::Index outputs, bool freeze,
                     bool trick) {
  NetConfig c;
  c.input_dim = d;
  c.widths.assign(static_cast<std::size_t>(depth - 1), width);
  c.outputs = outputs;
  c.freeze_first_last = freeze;
  c.difference_trick = trick;
  return c;
}

py::dict report_dict(const BoundReport& r) {
  py::dict out;
  for (const auto& [k, v] : r.key_values()) out[py::str(k)] = v;
  py::list comps;
  for (const auto& [k, v] : r.components) comps.append(py::make_tuple(k, v));
  out["kind"] = r.kind;
  out["constant_mode"] = to_string(r.mode);
  out["components"] = comps;
  return out;
}

Task parse_task(const std::string& name, int num_classes) {
  if (name == "regression") return Task::regression();
  if (name == "binary") return Task::binary();
  if (name == "multiclass") return Task::multiclass(num_classes);
  throw UsageError("unknown task '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_ntkreg, m) {
  m.doc() = "NTK regression, kernel ridge regression and label-noise bounds.";

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<UsageError>(m, "UsageError", error.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", error.ptr());
  auto numerical = py::register_exception<NumericalError>(m, "NumericalError", error.ptr());
  py::register_exception<SingularityError>(m, "SingularityError", numerical.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", numerical.ptr());

  m.def(
      "synth_sphere",
      [](Eigen::Index n, Eigen::Index d, const std::string& target, std::uint64_t seed, int num_classes) {
        const DataSet data = synth_sphere(n, d, parse_synth_target(target), seed, num_classes);
        return py::make_tuple(data.inputs, data.clean_labels);
      },
      py::arg("n"), py::arg("d"), py::arg("target") = "linear-sign", py::arg("seed") = 0,
      py::arg("num_classes") = 0, "Unit-sphere inputs and clean labels.");

  m.def(
      "corrupt_labels",
      [](const Eigen::VectorXd& labels, const std::string& task, double level, std::uint64_t seed,
         const std::optional<Eigen::MatrixXd>& transition, int num_classes, const std::string& shape) {
        DataSet d = inputs_only(Eigen::MatrixXd::Zero(labels.size(), 1));
        d.clean_labels = labels;
        d.noisy_labels = labels;
        d.task = parse_task(task, num_classes);
        NoiseModel model;
        if (d.task.kind == TaskKind::kBinary) {
          model = BinaryFlip{level};
        } else if (d.task.kind == TaskKind::kRegression) {
          model = AdditiveNoise{level, shape == "uniform" ? NoiseShape::kUniform : NoiseShape::kGaussian};
        } else {
          if (!transition) throw UsageError("corrupt_labels: multiclass needs a transition matrix");
          model = ClassTransition{*transition};
        }
        return corrupt(d, model, seed).noisy_labels;
      },
      py::arg("labels"), py::arg("task"), py::arg("level") = 0.0, py::arg("seed") = 0,
      py::arg("transition") = std::nullopt, py::arg("num_classes") = 0, py::arg("shape") = "gaussian",
      "Flip (binary), additive noise (regression) or transition sampling (multiclass).");

  m.def(
      "analytic_ntk",
      [](const Eigen::MatrixXd& x, int depth) { return analytic_ntk(depth, inputs_only(x)).values(); },
      py::arg("x"), py::arg("depth") = 2);
  m.def(
      "analytic_ntk_cross",
      [](const Eigen::MatrixXd& queries, const Eigen::MatrixXd& train, int depth) {
        return kernel_cross_batch(AnalyticSource{depth}, queries, train);
      },
      py::arg("queries"), py::arg("train"), py::arg("depth") = 2);
  m.def(
      "empirical_ntk",
      [](const Eigen::MatrixXd& x, Eigen::Index width, std::uint64_t seed, int depth, bool freeze_first_last) {
        const MLP net = init_mlp(net_config(x.cols(), width, depth, 1, freeze_first_last, true), seed);
        return empirical_ntk(net, inputs_only(x)).values();
      },
      py::arg("x"), py::arg("width"), py::arg("seed") = 0, py::arg("depth") = 2,
      py::arg("freeze_first_last") = true);

  m.def(
      "krr_fit",
      [](const Eigen::MatrixXd& k, const Eigen::MatrixXd& targets, double lambda) {
        const KernelMatrix km(k);
        if (targets.cols() == 1) return krr_fit(km, targets.col(0), lambda).alpha;
        return krr_fit_multi(km, targets.transpose(), lambda).alpha;
      },
      py::arg("k"), py::arg("targets"), py::arg("lambda_"),
      "Coefficients alpha = (K + lambda^2 I)^-1 targets, shape n x outputs.");
  m.def(
      "krr_predict",
      [](const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& cross) {
        KrrPredictor p;
        p.alpha = alpha;
        return krr_predict_from_cross(p, cross);
      },
      py::arg("alpha"), py::arg("cross"));
  m.def(
      "rkhs_norm",
      [](const Eigen::MatrixXd& k, const Eigen::VectorXd& alpha) {
        KrrPredictor p;
        p.alpha = alpha;
        return rkhs_norm(p, KernelMatrix(k));
      },
      py::arg("k"), py::arg("alpha"));

  m.def(
      "linearized_equivalence",
      [](const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda, Eigen::Index width, std::uint64_t seed,
         int steps, double eta) {
        const MLP net = init_mlp(net_config(x.cols(), width, 2, 1, true, true), seed);
        DataSet d = inputs_only(x);
        d.noisy_labels = y;
        const LinearizedModel lm = linearize(net, d);
        if (eta <= 0.0) eta = default_eta(lm, lambda);
        const LinTrajectory rdi = run_gd_rdi(lm, y, lambda, eta, steps);
        const LinTrajectory aux = run_gd_aux(lm, y, lambda, eta, steps);
        const EquivalenceReport rep = check_equivalence(rdi, aux);
        const LinLimit limit = closed_form_limit(lm, y, lambda);
        py::dict out;
        out["eta"] = eta;
        out["max_abs_gap"] = rep.max_abs;
        out["max_rel_gap"] = rep.max_rel;
        out["passed"] = rep.passed;
        out["rdi_objective"] = rdi.objective_values;
        out["aux_objective"] = aux.objective_values;
        out["limit_gap"] = limit_gaps(lm, rdi, limit);
        return out;
      },
      py::arg("x"), py::arg("y"), py::arg("lambda_"), py::arg("width") = 512, py::arg("seed") = 0,
      py::arg("steps") = 1000, py::arg("eta") = 0.0,
      "Runs linearized gradient descent on the ridge and auxiliary objectives and compares them.");

  m.def("lemma1_bound", [](const Eigen::MatrixXd& k, const Eigen::VectorXd& y, double sigma, double lambda,
                           double delta) { return lemma1_bound(KernelMatrix(k), y, sigma, lambda, delta); },
        py::arg("k"), py::arg("y"), py::arg("sigma"), py::arg("lambda_"), py::arg("delta"));
  m.def("lemma2_bound", [](const Eigen::MatrixXd& k, const Eigen::VectorXd& y, double sigma, double lambda,
                           double delta) { return lemma2_bound(KernelMatrix(k), y, sigma, lambda, delta); },
        py::arg("k"), py::arg("y"), py::arg("sigma"), py::arg("lambda_"), py::arg("delta"));
  m.def(
      "bound_additive",
      [](const Eigen::MatrixXd& k, const Eigen::VectorXd& y, double sigma, double lambda, double delta,
         const std::string& mode) {
        return report_dict(bound_additive(KernelMatrix(k), y, sigma, lambda, delta, parse_constant_mode(mode)));
      },
      py::arg("k"), py::arg("y"), py::arg("sigma"), py::arg("lambda_"), py::arg("delta") = 0.1,
      py::arg("constant_mode") = "explicit");
  m.def(
      "bound_binary",
      [](const Eigen::MatrixXd& k, const Eigen::VectorXd& y, double p, double lambda, double delta,
         const std::string& mode) {
        return report_dict(bound_binary(KernelMatrix(k), y, p, lambda, delta, parse_constant_mode(mode)));
      },
      py::arg("k"), py::arg("y"), py::arg("p"), py::arg("lambda_"), py::arg("delta") = 0.1,
      py::arg("constant_mode") = "explicit");
  m.def(
      "bound_multiclass",
      [](const Eigen::MatrixXd& k, const Eigen::MatrixXd& y, const Eigen::MatrixXd& p, double lambda, double delta,
         const std::string& mode) {
        return report_dict(bound_multiclass(KernelMatrix(k), y, p, lambda, delta, parse_constant_mode(mode)));
      },
      py::arg("k"), py::arg("y_onehot"), py::arg("transition"), py::arg("lambda_"), py::arg("delta") = 0.1,
      py::arg("constant_mode") = "explicit", "y_onehot is K x n, one column per example.");
  m.def("ramp_loss", &ramp_loss, py::arg("u"), py::arg("y"), py::arg("p"));
}
