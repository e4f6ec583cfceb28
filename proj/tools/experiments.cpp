#include "experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "ntkreg/csv.hpp"
#include "ntkreg/errors.hpp"
#include "ntkreg/krr.hpp"
#include "ntkreg/linmodel.hpp"

namespace ntkreg::exp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<double> kDefaultLambdaGrid{0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

std::shared_ptr<spdlog::logger> logger() {
  if (auto existing = spdlog::get("ntkreg")) return existing;
  auto created = spdlog::stderr_color_mt("ntkreg");
  created->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  return created;
}

bool is_linear(const std::string& method) { return method == "linear-rdi" || method == "linear-aux"; }
bool is_net(const std::string& method) { return method.rfind("net-", 0) == 0; }

Objective method_objective(const std::string& method) {
  if (method == "linear-rdi" || method == "net-rdi") return Objective::kRdi;
  if (method == "linear-aux" || method == "net-aux") return Objective::kAux;
  return Objective::kVanilla;
}

fs::path prepare_out(const ExperimentConfig& cfg) {
  const fs::path out(cfg.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create output directory " + out.string() + ": " + ec.message());
  std::ofstream f(out / "resolved_config.json", std::ios::trunc);
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + (out / "resolved_config.json").string());
  f << config_to_json(cfg).dump(2) << '\n';
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  f << j.dump(2) << '\n';
}

// Commas and newlines would break the CSV row.
std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

// Symmetric channel: keep the class with probability 1 - level, else a uniform other class.
Eigen::MatrixXd symmetric_transition(int k, double level) {
  Eigen::MatrixXd P = Eigen::MatrixXd::Constant(k, k, level / (k - 1));
  P.diagonal().setConstant(1.0 - level);
  return P;
}

Eigen::MatrixXd transition_for(const NoiseSpec& spec, double level, int k) {
  if (spec.kind == "transition") {
    if (spec.transition_csv.empty()) throw UsageError("noise kind transition needs noise.transition_csv");
    return read_transition_csv(spec.transition_csv);
  }
  return symmetric_transition(k, level);
}

std::string resolved_noise_kind(const NoiseSpec& spec, const Task& task) {
  if (spec.kind != "auto") return spec.kind;
  switch (task.kind) {
    case TaskKind::kBinary: return "flip";
    case TaskKind::kRegression: return "gaussian";
    case TaskKind::kMulticlass: return "symmetric";
  }
  return "none";
}

KernelSource kernel_source(const ExperimentConfig& cfg, const MLP* net) {
  if (cfg.model.kernel == "analytic") return AnalyticSource{cfg.model.depth};
  if (!net) throw UsageError("empirical kernel needs a network");
  return EmpiricalSource{std::make_shared<const MLP>(*net)};
}

// Mean test loss used throughout: zero-one for classification, clipped absolute for regression.
Loss default_loss(const Task& task) {
  return task.kind == TaskKind::kRegression ? Loss::clipped_absolute() : Loss::zero_one();
}

// Training error against noisy labels with the default loss.
double noisy_train_error(const Eigen::MatrixXd& outputs, const DataSet& train) {
  DataSet noisy = train;
  noisy.clean_labels = train.noisy_labels;
  return clean_risk(outputs, noisy, default_loss(train.task));
}

Eigen::MatrixXd krr_targets(const DataSet& train) {
  if (train.task.kind == TaskKind::kMulticlass) return onehot_matrix(train.noisy_labels, train.task.num_classes);
  return train.noisy_labels.transpose();
}

double safe_eta(const ExperimentConfig& cfg, double op_norm, double lambda) {
  return cfg.eta > 0.0 ? cfg.eta : 1.0 / (op_norm + lambda * lambda);
}

std::optional<BoundReport> bound_for(const ExperimentConfig& cfg, const KernelMatrix& k, const DataSet& train,
                                     double level, double lambda) {
  if (!(lambda > 0.0)) return std::nullopt;
  const ConstantMode mode = parse_constant_mode(cfg.constant_mode);
  const std::string kind = resolved_noise_kind(cfg.noise, train.task);
  switch (train.task.kind) {
    case TaskKind::kRegression: {
      const double sigma = kind == "none" ? 0.0 : level;
      return bound_additive(k, train.clean_labels, sigma, lambda, cfg.delta, mode);
    }
    case TaskKind::kBinary:
      return bound_binary(k, train.clean_labels, kind == "none" ? 0.0 : level, lambda, cfg.delta, mode);
    case TaskKind::kMulticlass: {
      const int classes = train.task.num_classes;
      const Eigen::MatrixXd P = kind == "none" ? Eigen::MatrixXd(Eigen::MatrixXd::Identity(classes, classes))
                                               : transition_for(cfg.noise, level, classes);
      return bound_multiclass(k, onehot_matrix(train.clean_labels, classes), P, lambda, cfg.delta, mode);
    }
  }
  return std::nullopt;
}

json report_json(const BoundReport& r) {
  json values = json::object();
  for (const auto& [key, value] : r.key_values()) values[key] = value;
  json components = json::array();
  for (const auto& [name, value] : r.components) components.push_back({{"name", name}, {"value", value}});
  return {{"kind", r.kind}, {"constant_mode", to_string(r.mode)}, {"values", values}, {"components", components},
          {"total", r.total}};
}

std::string error_status(const Error& e) {
  static const char* names[] = {"usage", "validation", "numerical", "io"};
  return std::string("error(") + names[static_cast<int>(e.kind())] + "): " + csv_safe(e.what());
}

template <typename T>
std::vector<T> json_list(const json& j, const char* key, std::vector<T> fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<std::vector<T>>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw UsageError(where + ": expected a JSON object");
  std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& item : j.items()) {
    if (!keys.count(item.key())) throw UsageError(where + ": unknown key '" + item.key() + "'");
  }
}

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return kExitUsage;
    case ErrorKind::kValidation: return kExitValidation;
    case ErrorKind::kNumerical: return kExitNumerical;
    case ErrorKind::kIo: return kExitIo;
  }
  return kExitInternal;
}

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
  static const std::set<std::string> methods{"krr", "linear-rdi", "linear-aux", "net-rdi", "net-aux", "net-vanilla"};
  static const std::set<std::string> noise_kinds{"auto", "none", "flip", "gaussian", "uniform", "symmetric",
                                                 "transition"};
  if (!methods.count(method)) throw UsageError("unknown method '" + method + "'");
  if (dataset.kind != "synth-sphere" && dataset.kind != "mnist-binary") {
    throw UsageError("unknown dataset kind '" + dataset.kind + "'");
  }
  if (!noise_kinds.count(noise.kind)) throw UsageError("unknown noise kind '" + noise.kind + "'");
  if (model.kernel != "analytic" && model.kernel != "empirical") {
    throw UsageError("unknown kernel '" + model.kernel + "' (expected analytic or empirical)");
  }
  if (model.depth < 2) throw UsageError("depth must be >= 2");
  if (seeds.empty()) throw UsageError("at least one seed is required");
  for (double l : lambdas()) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw UsageError("lambda values must be >= 0");
  }
  for (double v : noise_levels()) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw UsageError("noise levels must be >= 0");
  }
  for (Eigen::Index w : widths()) {
    if (w < 1) throw UsageError("widths must be >= 1");
  }
  if (!(delta > 0.0 && delta < 1.0)) throw UsageError("delta must lie in (0, 1)");
  if (steps < 0) throw UsageError("steps must be >= 0");
  if (eta < 0.0) throw UsageError("eta must be >= 0 (0 selects the default)");
  if (dataset.n_train < 1 || dataset.n_test < 0) throw UsageError("dataset sizes must be positive");
  parse_constant_mode(constant_mode);
  if (dataset.kind == "synth-sphere") parse_synth_target(dataset.target);
  if (dataset.kind == "mnist-binary") {
    for (const auto& p : {dataset.images, dataset.labels}) {
      if (p.empty() || !fs::exists(p)) throw Error(ErrorKind::kIo, "dataset file not found: '" + p + "'");
    }
    if (dataset.n_test > 0) {
      for (const auto& p : {dataset.test_images, dataset.test_labels}) {
        if (p.empty() || !fs::exists(p)) throw Error(ErrorKind::kIo, "dataset file not found: '" + p + "'");
      }
    }
  }
  if (noise.kind == "transition" && !fs::exists(noise.transition_csv)) {
    throw Error(ErrorKind::kIo, "transition matrix not found: '" + noise.transition_csv + "'");
  }
}

std::vector<double> ExperimentConfig::lambdas() const { return lambda_grid.empty() ? std::vector{lambda} : lambda_grid; }

std::vector<double> ExperimentConfig::noise_levels() const {
  return noise_grid.empty() ? std::vector{noise.level} : noise_grid;
}

std::vector<Eigen::Index> ExperimentConfig::widths() const {
  return width_grid.empty() ? std::vector{model.width} : width_grid;
}

fs::path ExperimentConfig::cache_path() const { return cache_dir.empty() ? fs::path(out) / "cache" : fs::path(cache_dir); }

ExperimentConfig config_from_json(const json& j) {
  reject_unknown(j,
                 {"dataset", "noise", "model", "method", "lambda", "lambda_grid", "noise_grid", "width_grid", "eta",
                  "steps", "batch_size", "seeds", "delta", "constant_mode", "tolerance", "out", "cache_dir",
                  "use_cache"},
                 "config");
  ExperimentConfig c;
  try {
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      reject_unknown(d,
                     {"kind", "n_train", "n_test", "d", "target", "num_classes", "images", "labels", "test_images",
                      "test_labels", "digits"},
                     "dataset");
      c.dataset.kind = d.value("kind", c.dataset.kind);
      c.dataset.n_train = d.value("n_train", c.dataset.n_train);
      c.dataset.n_test = d.value("n_test", c.dataset.n_test);
      c.dataset.d = d.value("d", c.dataset.d);
      c.dataset.target = d.value("target", c.dataset.target);
      c.dataset.num_classes = d.value("num_classes", c.dataset.num_classes);
      c.dataset.images = d.value("images", c.dataset.images);
      c.dataset.labels = d.value("labels", c.dataset.labels);
      c.dataset.test_images = d.value("test_images", c.dataset.test_images);
      c.dataset.test_labels = d.value("test_labels", c.dataset.test_labels);
      if (d.contains("digits")) {
        const auto digits = d.at("digits").get<std::vector<int>>();
        if (digits.size() != 2) throw UsageError("dataset.digits must hold two digits");
        c.dataset.digit_a = digits[0];
        c.dataset.digit_b = digits[1];
      }
    }
    if (j.contains("noise")) {
      const json& n = j.at("noise");
      reject_unknown(n, {"kind", "level", "transition_csv"}, "noise");
      c.noise.kind = n.value("kind", c.noise.kind);
      c.noise.level = n.value("level", c.noise.level);
      c.noise.transition_csv = n.value("transition_csv", c.noise.transition_csv);
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      reject_unknown(m, {"kernel", "width", "depth", "freeze_first_last"}, "model");
      c.model.kernel = m.value("kernel", c.model.kernel);
      c.model.width = m.value("width", c.model.width);
      c.model.depth = m.value("depth", c.model.depth);
      c.model.freeze_first_last = m.value("freeze_first_last", c.model.freeze_first_last);
    }
    c.method = j.value("method", c.method);
    c.lambda = j.value("lambda", c.lambda);
    c.lambda_grid = json_list(j, "lambda_grid", c.lambda_grid);
    c.noise_grid = json_list(j, "noise_grid", c.noise_grid);
    c.width_grid = json_list(j, "width_grid", c.width_grid);
    c.eta = j.value("eta", c.eta);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seeds = json_list(j, "seeds", c.seeds);
    c.delta = j.value("delta", c.delta);
    c.constant_mode = j.value("constant_mode", c.constant_mode);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.out = j.value("out", c.out);
    c.cache_dir = j.value("cache_dir", c.cache_dir);
    c.use_cache = j.value("use_cache", c.use_cache);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  return {
      {"dataset",
       {{"kind", c.dataset.kind},
        {"n_train", c.dataset.n_train},
        {"n_test", c.dataset.n_test},
        {"d", c.dataset.d},
        {"target", c.dataset.target},
        {"num_classes", c.dataset.num_classes},
        {"images", c.dataset.images},
        {"labels", c.dataset.labels},
        {"test_images", c.dataset.test_images},
        {"test_labels", c.dataset.test_labels},
        {"digits", {c.dataset.digit_a, c.dataset.digit_b}}}},
      {"noise", {{"kind", c.noise.kind}, {"level", c.noise.level}, {"transition_csv", c.noise.transition_csv}}},
      {"model",
       {{"kernel", c.model.kernel},
        {"width", c.model.width},
        {"depth", c.model.depth},
        {"freeze_first_last", c.model.freeze_first_last}}},
      {"method", c.method},
      {"lambda", c.lambda},
      {"lambda_grid", c.lambda_grid},
      {"noise_grid", c.noise_grid},
      {"width_grid", c.width_grid},
      {"eta", c.eta},
      {"steps", c.steps},
      {"batch_size", c.batch_size},
      {"seeds", c.seeds},
      {"delta", c.delta},
      {"constant_mode", c.constant_mode},
      {"tolerance", c.tolerance},
      {"out", c.out},
      {"cache_dir", c.cache_dir},
      {"use_cache", c.use_cache},
  };
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = seed + h + 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Building blocks

Split make_split(const ExperimentConfig& cfg, std::uint64_t seed) {
  const DatasetSpec& d = cfg.dataset;
  if (d.kind == "mnist-binary") {
    Split s;
    s.train = load_mnist_binary(d.images, d.labels, d.digit_a, d.digit_b, static_cast<std::size_t>(d.n_train));
    if (d.n_test > 0) {
      s.test = load_mnist_binary(d.test_images, d.test_labels, d.digit_a, d.digit_b, static_cast<std::size_t>(d.n_test));
    }
    return s;
  }
  const SynthTarget target = parse_synth_target(d.target);
  const int classes = target == SynthTarget::kArgmax ? d.num_classes : 0;
  DataSet all = synth_sphere(d.n_train + d.n_test, d.d, target, derive_seed(seed, "data"), classes);
  auto [train, test] = split(all, d.n_train);
  return {std::move(train), std::move(test)};
}

std::optional<NoiseModel> make_noise(const NoiseSpec& spec, double level, const Task& task) {
  const std::string kind = resolved_noise_kind(spec, task);
  if (kind == "none") return std::nullopt;
  if (kind == "flip") {
    if (level == 0.0) return std::nullopt;
    return BinaryFlip{level};
  }
  if (kind == "gaussian" || kind == "uniform") {
    if (level == 0.0) return std::nullopt;
    return AdditiveNoise{level, kind == "gaussian" ? NoiseShape::kGaussian : NoiseShape::kUniform};
  }
  if (task.kind != TaskKind::kMulticlass) throw UsageError("noise kind '" + kind + "' needs a multiclass task");
  if (kind == "symmetric" && level == 0.0) return std::nullopt;
  return ClassTransition{transition_for(spec, level, task.num_classes)};
}

DataSet apply_noise(const ExperimentConfig& cfg, const DataSet& train, double level, std::uint64_t seed) {
  const auto model = make_noise(cfg.noise, level, train.task);
  if (!model) {
    DataSet out = train;
    out.noisy_labels = train.clean_labels;
    return out;
  }
  return corrupt(train, *model, derive_seed(seed, "noise"));
}

MLP make_net(const ExperimentConfig& cfg, const DataSet& train, Eigen::Index width, std::uint64_t seed) {
  NetConfig net;
  net.input_dim = train.d();
  net.widths.assign(static_cast<std::size_t>(cfg.model.depth - 1), width);
  net.outputs = train.task.kind == TaskKind::kMulticlass ? train.task.num_classes : 1;
  net.freeze_first_last = cfg.model.freeze_first_last;
  net.difference_trick = true;
  return init_mlp(net, derive_seed(seed, "init"));
}

KernelMatrix obtain_kernel(const ExperimentConfig& cfg, const DataSet& train, Eigen::Index width, std::uint64_t seed,
                           const MLP* net) {
  const bool analytic = cfg.model.kernel == "analytic";
  auto build = [&]() {
    if (analytic) return analytic_ntk(cfg.model.depth, train);
    if (!net) throw UsageError("empirical kernel needs a network");
    return empirical_ntk(*net, train);
  };
  if (!cfg.use_cache) return build();

  std::ostringstream name;
  name << "ntk_" << (analytic ? "analytic" : "empirical") << "_L" << cfg.model.depth;
  if (!analytic) name << "_w" << width << "_f" << (cfg.model.freeze_first_last ? 1 : 0);
  name << "_s" << seed << "_n" << train.n() << ".ntkk";
  const fs::path dir = cfg.cache_path();
  const fs::path path = dir / name.str();
  auto log = logger();
  if (fs::exists(path)) {
    try {
      KernelCache cache = load_kernel(path, train);
      log->info("cache hit: {}", path.string());
      return std::move(cache.matrix);
    } catch (const StaleCacheError& e) {
      log->warn("stale cache, rebuilding: {}", e.what());
    } catch (const FormatError& e) {
      log->warn("stale cache (unreadable), rebuilding: {}", e.what());
    }
  } else {
    log->info("cache miss: {}", path.string());
  }
  KernelCache cache;
  cache.matrix = build();
  cache.provenance.kind = analytic ? KernelKind::kAnalytic : KernelKind::kEmpirical;
  cache.provenance.width = static_cast<std::uint32_t>(width);
  cache.provenance.depth = static_cast<std::uint32_t>(cfg.model.depth);
  cache.provenance.seed = seed;
  cache.digest = input_digest(train.inputs);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create cache directory " + dir.string());
  save_kernel(cache, path);
  return std::move(cache.matrix);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_kernel(const ExperimentConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const std::uint64_t seed = cfg.seeds.front();
  const Split s = make_split(cfg, seed);
  std::optional<MLP> net;
  if (cfg.model.kernel == "empirical") net = make_net(cfg, s.train, cfg.model.width, seed);
  const KernelMatrix k = obtain_kernel(cfg, s.train, cfg.model.width, seed, net ? &*net : nullptr);
  const double lmin = k.min_eigenvalue();
  logger()->info("kernel n={} trace={} norm={} lambda_min={}", k.size(), format_double(k.trace()),
                 format_double(k.op_norm()), format_double(lmin));
  CsvWriter csv(out / "results.csv");
  csv.header({"seed", "n", "trace", "op_norm", "lambda_min", "diag_min", "diag_max"});
  csv.row({std::to_string(seed), std::to_string(k.size()), format_double(k.trace()), format_double(k.op_norm()),
           format_double(lmin), format_double(k.values().diagonal().minCoeff()),
           format_double(k.values().diagonal().maxCoeff())});
  return kExitOk;
}

int cmd_equivalence(const ExperimentConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const std::uint64_t seed = cfg.seeds.front();
  const Split s = make_split(cfg, seed);
  if (s.train.task.kind == TaskKind::kMulticlass) throw UsageError("equivalence needs a scalar-output task");
  const DataSet train = apply_noise(cfg, s.train, cfg.noise.level, seed);
  const MLP net = make_net(cfg, train, cfg.model.width, seed);
  const LinearizedModel lm = linearize(net, train);
  auto log = logger();

  std::vector<LinTrajectory> rdi_runs, aux_runs;
  std::vector<EquivalenceReport> reports;
  std::vector<double> limit_rel;
  for (double lambda : cfg.lambdas()) {
    if (!(lambda > 0.0)) throw UsageError("equivalence needs lambda > 0");
    const double eta = safe_eta(cfg, lm.K.op_norm(), lambda);
    rdi_runs.push_back(run_gd_rdi(lm, train.noisy_labels, lambda, eta, cfg.steps));
    aux_runs.push_back(run_gd_aux(lm, train.noisy_labels, lambda, eta, cfg.steps));
    reports.push_back(check_equivalence(rdi_runs.back(), aux_runs.back(), cfg.tolerance));
    const LinLimit limit = closed_form_limit(lm, train.noisy_labels, lambda);
    const double scale = (limit.theta - lm.theta0).norm();
    limit_rel.push_back(scale > 0.0 ? limit_gaps(lm, rdi_runs.back(), limit).back() / scale : 0.0);
    log->info("lambda={} eta={} max_rel_gap={} -> {}", format_double(lambda), format_double(eta),
              format_double(reports.back().max_rel), reports.back().passed ? "pass" : "FAIL");
  }

  std::vector<TrajectoryRecord> records;
  for (std::size_t i = 0; i < reports.size(); ++i) records.push_back({&rdi_runs[i], &reports[i]});
  write_trajectory_csv(records, (out / "trajectory.csv").string());

  CsvWriter csv(out / "results.csv");
  csv.header({"seed", "lambda", "eta", "steps", "max_abs_gap", "max_rel_gap", "worst_step", "passed",
              "limit_gap_rel"});
  bool all = true;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    all = all && reports[i].passed;
    csv.row({std::to_string(seed), format_double(rdi_runs[i].lambda), format_double(rdi_runs[i].eta),
             std::to_string(cfg.steps), format_double(reports[i].max_abs), format_double(reports[i].max_rel),
             std::to_string(reports[i].worst_step), reports[i].passed ? "1" : "0", format_double(limit_rel[i])});
  }
  return all ? kExitOk : kExitCheckFailed;
}

int cmd_train(const ExperimentConfig& cfg) {
  if (cfg.method == "krr") throw UsageError("train runs linear-* and net-* methods; use the krr command for krr");
  const fs::path out = prepare_out(cfg);
  const std::uint64_t seed = cfg.seeds.front();
  const double lambda = cfg.lambdas().front();
  const Split s = make_split(cfg, seed);
  const DataSet train = apply_noise(cfg, s.train, cfg.noise.level, seed);
  const MLP net = make_net(cfg, train, cfg.model.width, seed);
  const Loss loss = default_loss(train.task);

  Eigen::MatrixXd train_out, test_out;
  double distance = 0.0;
  double eta = 0.0;
  double final_objective = 0.0;
  if (is_linear(cfg.method)) {
    if (train.task.kind == TaskKind::kMulticlass) throw UsageError("linear methods need a scalar-output task");
    const LinearizedModel lm = linearize(net, train);
    eta = safe_eta(cfg, lm.K.op_norm(), lambda);
    const LinTrajectory traj = cfg.method == "linear-rdi" ? run_gd_rdi(lm, train.noisy_labels, lambda, eta, cfg.steps)
                                                          : run_gd_aux(lm, train.noisy_labels, lambda, eta, cfg.steps);
    write_trajectory_csv({{&traj, nullptr}}, (out / "trajectory.csv").string());
    const Eigen::VectorXd delta = traj.final_theta - lm.theta0;
    train_out = lm.Z.transpose() * delta;
    test_out = feature_matrix(net, s.test.inputs).transpose() * delta;
    distance = delta.norm();
    final_objective = traj.objective_values.back();
  } else {
    TrainConfig tc;
    tc.objective = method_objective(cfg.method);
    tc.lambda = tc.objective == Objective::kVanilla ? 0.0 : lambda;
    tc.eta = cfg.eta > 0.0 ? cfg.eta : safe_eta(cfg, empirical_ntk(net, train).op_norm(), tc.lambda);
    tc.steps = cfg.steps;
    tc.batch_size = cfg.batch_size;
    tc.batch_seed = derive_seed(seed, "batch");
    const TrainResult r = train_full(net, train, tc);
    write_train_log_csv(r.log, (out / "trajectory.csv").string());
    eta = tc.eta;
    train_out = r.mlp.forward_batch(train.inputs);
    test_out = r.mlp.forward_batch(s.test.inputs);
    distance = r.mlp.total_distance();
    final_objective = r.log.back().objective;
  }

  const double train_noisy = noisy_train_error(train_out, train);
  const double train_clean = clean_risk(train_out, train, loss);
  const double test_clean = s.test.n() > 0 ? clean_risk(test_out, s.test, loss) : 0.0;
  logger()->info("{}: train error (noisy) {} test error (clean) {} distance {}", cfg.method, format_double(train_noisy),
                 format_double(test_clean), format_double(distance));
  CsvWriter csv(out / "results.csv");
  csv.header({"method", "lambda", "seed", "steps", "eta", "final_objective", "train_error_noisy", "train_error_clean",
              "test_error_clean", "distance"});
  csv.row({cfg.method, format_double(lambda), std::to_string(seed), std::to_string(cfg.steps), format_double(eta),
           format_double(final_objective), format_double(train_noisy), format_double(train_clean),
           format_double(test_clean), format_double(distance)});
  return kExitOk;
}

int cmd_krr(const ExperimentConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const std::uint64_t seed = cfg.seeds.front();
  const Split s = make_split(cfg, seed);
  const DataSet train = apply_noise(cfg, s.train, cfg.noise.level, seed);
  std::optional<MLP> net;
  if (cfg.model.kernel == "empirical") net = make_net(cfg, train, cfg.model.width, seed);
  const KernelMatrix k = obtain_kernel(cfg, train, cfg.model.width, seed, net ? &*net : nullptr);
  const KernelSource source = kernel_source(cfg, net ? &*net : nullptr);
  const Eigen::MatrixXd cross = s.test.n() > 0 ? kernel_cross_batch(source, s.test.inputs, train.inputs)
                                               : Eigen::MatrixXd(0, train.n());
  const Loss loss = default_loss(train.task);
  const bool classify = train.task.kind != TaskKind::kRegression;

  CsvWriter results(out / "results.csv");
  results.header({"lambda", "train_error_noisy", "train_error_clean", "test_error_clean", "rkhs_norm", "jitter"});
  CsvWriter preds(out / "predictions.csv");
  std::vector<std::string> header{"lambda", "query"};
  const Eigen::Index outputs = train.task.kind == TaskKind::kMulticlass ? train.task.num_classes : 1;
  for (Eigen::Index h = 0; h < outputs; ++h) header.push_back("output_" + std::to_string(h + 1));
  if (classify) header.push_back("predicted_class");
  preds.row(header);

  for (double lambda : cfg.lambdas()) {
    const KrrPredictor p = krr_fit_multi(k, krr_targets(train), lambda);
    const Eigen::MatrixXd train_out = krr_predict_from_cross(p, k.values());
    const Eigen::MatrixXd test_out = krr_predict_from_cross(p, cross);
    double norm = 0.0;
    for (Eigen::Index h = 0; h < p.outputs(); ++h) norm = std::hypot(norm, rkhs_norm(p, k, h));
    const double test_err = s.test.n() > 0 ? clean_risk(test_out, s.test, loss) : 0.0;
    logger()->info("lambda={} test error (clean) {}", format_double(lambda), format_double(test_err));
    results.row({format_double(lambda), format_double(noisy_train_error(train_out, train)),
                 format_double(clean_risk(train_out, train, loss)), format_double(test_err), format_double(norm),
                 format_double(p.jitter)});
    for (Eigen::Index q = 0; q < test_out.rows(); ++q) {
      std::vector<std::string> row{format_double(lambda), std::to_string(q)};
      for (Eigen::Index h = 0; h < outputs; ++h) row.push_back(format_double(test_out(q, h)));
      if (train.task.kind == TaskKind::kBinary) {
        const double u = test_out(q, 0);
        row.push_back(u > 0.0 ? "1" : (u < 0.0 ? "-1" : "0"));
      } else if (classify) {
        row.push_back(std::to_string(predicted_class(test_out.row(q))));
      }
      preds.row(row);
    }
  }
  return kExitOk;
}

int cmd_bounds(const ExperimentConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const std::uint64_t seed = cfg.seeds.front();
  const Split s = make_split(cfg, seed);
  std::optional<MLP> net;
  if (cfg.model.kernel == "empirical") net = make_net(cfg, s.train, cfg.model.width, seed);
  const KernelMatrix k = obtain_kernel(cfg, s.train, cfg.model.width, seed, net ? &*net : nullptr);
  const KernelSource source = kernel_source(cfg, net ? &*net : nullptr);
  const Eigen::MatrixXd cross = s.test.n() > 0 ? kernel_cross_batch(source, s.test.inputs, s.train.inputs)
                                               : Eigen::MatrixXd(0, s.train.n());
  const Loss loss = default_loss(s.train.task);

  json reports = json::array();
  CsvWriter csv(out / "results.csv");
  csv.header({"noise", "lambda", "kind", "constant_mode", "total", "main_term", "sigma_over_lambda_term", "delta_term",
              "gap", "empirical_clean_risk", "holds"});
  for (double level : cfg.noise_levels()) {
    const DataSet train = apply_noise(cfg, s.train, level, seed);
    for (double lambda : cfg.lambdas()) {
      if (!(lambda > 0.0)) throw UsageError("bounds need lambda > 0");
      const BoundReport r = *bound_for(cfg, k, train, level, lambda);
      std::optional<double> risk;
      if (s.test.n() > 0) {
        const KrrPredictor p = krr_fit_multi(k, krr_targets(train), lambda);
        risk = clean_risk(krr_predict_from_cross(p, cross), s.test, loss);
      }
      json entry = report_json(r);
      entry["noise_level"] = level;
      entry["lambda"] = lambda;
      entry["empirical_clean_risk"] = risk ? json(*risk) : json(nullptr);
      reports.push_back(entry);
      logger()->info("noise={} lambda={} {} bound total {}", format_double(level), format_double(lambda), r.kind,
                     format_double(r.total));
      csv.row({format_double(level), format_double(lambda), r.kind, to_string(r.mode), format_double(r.total),
               format_double(r.main_term), format_double(r.sigma_over_lambda_term), format_double(r.delta_term),
               format_double(r.gap), fmt_opt(risk), risk ? (*risk <= r.total ? "1" : "0") : ""});
    }
  }
  write_json(out / "bound_report.json", {{"seed", seed}, {"delta", cfg.delta}, {"reports", reports}});
  return kExitOk;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg) {
  const std::vector<double> lambdas = cfg.lambda_grid.empty() ? kDefaultLambdaGrid : cfg.lambda_grid;
  const std::vector<double> levels = cfg.noise_levels();
  const std::vector<Eigen::Index> widths = cfg.widths();
  const bool uses_width = is_linear(cfg.method) || is_net(cfg.method) || cfg.model.kernel == "empirical";
  auto log = logger();

  std::vector<SweepRow> rows;
  for (Eigen::Index width : uses_width ? widths : std::vector<Eigen::Index>{widths.front()}) {
    for (std::uint64_t seed : cfg.seeds) {
      const Split s = make_split(cfg, seed);
      const Loss loss = default_loss(s.train.task);
      std::optional<MLP> net;
      if (uses_width) net = make_net(cfg, s.train, width, seed);

      // Per (width, seed): kernel and test cross-kernel, or the linearization.
      std::optional<KernelMatrix> k;
      Eigen::MatrixXd cross;
      std::optional<LinearizedModel> lm;
      Eigen::MatrixXd test_features;
      try {
        if (cfg.method == "krr") {
          k = obtain_kernel(cfg, s.train, width, seed, net ? &*net : nullptr);
          cross = kernel_cross_batch(kernel_source(cfg, net ? &*net : nullptr), s.test.inputs, s.train.inputs);
        } else if (is_linear(cfg.method)) {
          lm = linearize(*net, s.train);
          test_features = feature_matrix(*net, s.test.inputs);
        } else {
          k = empirical_ntk(*net, s.train);
        }
      } catch (const Error& e) {
        for (double level : levels) {
          for (double lambda : lambdas) {
            SweepRow row;
            row.noise = level;
            row.lambda = lambda;
            row.width = width;
            row.seed = seed;
            row.status = error_status(e);
            rows.push_back(row);
          }
        }
        continue;
      }

      for (double level : levels) {
        const DataSet train = apply_noise(cfg, s.train, level, seed);
        for (double lambda : lambdas) {
          SweepRow row;
          row.noise = level;
          row.lambda = lambda;
          row.width = width;
          row.seed = seed;
          try {
            Eigen::MatrixXd train_out, test_out;
            if (cfg.method == "krr") {
              const KrrPredictor p = krr_fit_multi(*k, krr_targets(train), lambda);
              train_out = krr_predict_from_cross(p, k->values());
              test_out = krr_predict_from_cross(p, cross);
              double norm = 0.0;
              for (Eigen::Index h = 0; h < p.outputs(); ++h) norm = std::hypot(norm, rkhs_norm(p, *k, h));
              row.distance = norm;
              if (auto b = bound_for(cfg, *k, train, level, lambda)) row.bound_total = b->total;
            } else if (is_linear(cfg.method)) {
              const double eta = safe_eta(cfg, lm->K.op_norm(), lambda);
              const LinTrajectory traj = cfg.method == "linear-rdi"
                                             ? run_gd_rdi(*lm, train.noisy_labels, lambda, eta, cfg.steps)
                                             : run_gd_aux(*lm, train.noisy_labels, lambda, eta, cfg.steps);
              const Eigen::VectorXd delta = traj.final_theta - lm->theta0;
              train_out = lm->Z.transpose() * delta;
              test_out = test_features.transpose() * delta;
              row.distance = delta.norm();
            } else {
              TrainConfig tc;
              tc.objective = method_objective(cfg.method);
              tc.lambda = tc.objective == Objective::kVanilla ? 0.0 : lambda;
              tc.eta = safe_eta(cfg, k->op_norm(), tc.lambda);
              tc.steps = cfg.steps;
              tc.batch_size = cfg.batch_size;
              tc.batch_seed = derive_seed(seed, "batch");
              const TrainResult r = train_full(*net, train, tc);
              train_out = r.mlp.forward_batch(train.inputs);
              test_out = r.mlp.forward_batch(s.test.inputs);
              row.distance = r.mlp.total_distance();
            }
            row.train_error = noisy_train_error(train_out, train);
            row.test_error = s.test.n() > 0 ? clean_risk(test_out, s.test, loss) : 0.0;
          } catch (const Error& e) {
            row.status = error_status(e);
            log->warn("cell noise={} lambda={} width={} seed={} failed: {}", format_double(level),
                      format_double(lambda), width, seed, e.what());
          }
          rows.push_back(row);
        }
      }
    }
  }

  // Report order: noise, lambda, width, seed (grid order), independent of run order.
  auto index_of = [](const auto& grid, auto value) {
    return static_cast<std::size_t>(std::find(grid.begin(), grid.end(), value) - grid.begin());
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const SweepRow& a, const SweepRow& b) {
    const auto ka = std::make_tuple(index_of(levels, a.noise), index_of(lambdas, a.lambda), index_of(widths, a.width),
                                    index_of(cfg.seeds, a.seed));
    const auto kb = std::make_tuple(index_of(levels, b.noise), index_of(lambdas, b.lambda), index_of(widths, b.width),
                                    index_of(cfg.seeds, b.seed));
    return ka < kb;
  });
  return rows;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const std::vector<SweepRow> rows = run_sweep(cfg);

  CsvWriter results(out / "results.csv");
  results.header({"noise", "lambda", "width", "seed", "status", "train_error_noisy", "test_error_clean", "distance",
                  "bound_total"});
  for (const SweepRow& r : rows) {
    const bool ok = r.status == "ok";
    results.row({format_double(r.noise), format_double(r.lambda), std::to_string(r.width), std::to_string(r.seed),
                 r.status, ok ? format_double(r.train_error) : "", ok ? format_double(r.test_error) : "",
                 ok ? format_double(r.distance) : "", ok ? fmt_opt(r.bound_total) : ""});
  }

  // Seed averages per (noise, lambda, width), in first-appearance order.
  struct Cell {
    double noise, lambda;
    Eigen::Index width;
    int ok = 0;
    double test = 0.0, train = 0.0, distance = 0.0;
  };
  std::vector<Cell> cells;
  for (const SweepRow& r : rows) {
    auto it = std::find_if(cells.begin(), cells.end(), [&](const Cell& c) {
      return c.noise == r.noise && c.lambda == r.lambda && c.width == r.width;
    });
    if (it == cells.end()) {
      cells.push_back({r.noise, r.lambda, r.width});
      it = cells.end() - 1;
    }
    if (r.status != "ok") continue;
    ++it->ok;
    it->test += r.test_error;
    it->train += r.train_error;
    it->distance += r.distance;
  }
  CsvWriter table(out / "distance_table.csv");
  table.header({"noise", "lambda", "width", "seeds_ok", "mean_distance", "mean_train_error_noisy",
                "mean_test_error_clean"});
  for (const Cell& c : cells) {
    const double m = c.ok > 0 ? 1.0 / c.ok : 0.0;
    table.row({format_double(c.noise), format_double(c.lambda), std::to_string(c.width), std::to_string(c.ok),
               c.ok ? format_double(c.distance * m) : "", c.ok ? format_double(c.train * m) : "",
               c.ok ? format_double(c.test * m) : ""});
  }

  CsvWriter best(out / "best_lambda.csv");
  best.header({"noise", "width", "best_lambda", "best_test_error_clean", "lambda0_test_error_clean"});
  std::vector<std::pair<double, Eigen::Index>> groups;
  for (const Cell& c : cells) {
    if (std::find(groups.begin(), groups.end(), std::make_pair(c.noise, c.width)) == groups.end()) {
      groups.emplace_back(c.noise, c.width);
    }
  }
  for (const auto& [noise, width] : groups) {
    const Cell* best_cell = nullptr;
    std::optional<double> at_zero;
    for (const Cell& c : cells) {
      if (c.noise != noise || c.width != width || c.ok == 0) continue;
      const double mean = c.test / c.ok;
      if (c.lambda == 0.0) at_zero = mean;
      if (!best_cell || mean < best_cell->test / best_cell->ok) best_cell = &c;
    }
    best.row({format_double(noise), std::to_string(width), best_cell ? format_double(best_cell->lambda) : "",
              best_cell ? format_double(best_cell->test / best_cell->ok) : "", fmt_opt(at_zero)});
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Command line

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Label-noise regularization experiments in the neural tangent kernel regime"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, constant_mode, method;
  std::optional<double> lambda, noise, eta;
  std::optional<std::uint32_t> width, depth;
  std::optional<int> steps;
  bool quiet = false;

  const std::vector<std::pair<const char*, const char*>> commands{
      {"kernel", "Build (or load from cache) the NTK Gram matrix of the training set"},
      {"equivalence", "Run linearized GD on the RDI and AUX objectives and compare trajectories"},
      {"train", "Train a linearized model or a network with RDI, AUX or plain GD"},
      {"krr", "Fit kernel ridge regression and write predictions"},
      {"bounds", "Write itemized generalization bounds"},
      {"sweep", "Grid over noise, lambda, width and seed"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Single seed (replaces the config's seed list)");
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--lambda", lambda, "Regularization strength (replaces the lambda grid)");
    sub->add_option("--noise", noise, "Noise level: p, sigma, or symmetric-channel mass (replaces the noise grid)");
    sub->add_option("--width", width, "Hidden width (replaces the width grid)");
    sub->add_option("--depth", depth, "Network / kernel depth");
    sub->add_option("--constant-mode", constant_mode, "Bound constants: explicit or unit");
    sub->add_option("--method", method, "krr, linear-rdi, linear-aux, net-rdi, net-aux or net-vanilla");
    sub->add_option("--eta", eta, "Step size (0 = 1/(||K|| + lambda^2))");
    sub->add_option("--steps", steps, "Gradient steps");
    sub->add_flag("--quiet", quiet, "Only log warnings and errors");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto log = logger();
  log->set_level(quiet ? spdlog::level::warn : spdlog::level::info);
  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed) cfg.seeds = {*seed};
    if (out) cfg.out = *out;
    if (lambda) {
      cfg.lambda = *lambda;
      cfg.lambda_grid.clear();
    }
    if (noise) {
      cfg.noise.level = *noise;
      cfg.noise_grid.clear();
    }
    if (width) {
      cfg.model.width = *width;
      cfg.width_grid.clear();
    }
    if (depth) cfg.model.depth = static_cast<int>(*depth);
    if (constant_mode) cfg.constant_mode = *constant_mode;
    if (method) cfg.method = *method;
    if (eta) cfg.eta = *eta;
    if (steps) cfg.steps = *steps;
    cfg.validate();

    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "kernel") return cmd_kernel(cfg);
    if (name == "equivalence") return cmd_equivalence(cfg);
    if (name == "train") return cmd_train(cfg);
    if (name == "krr") return cmd_krr(cfg);
    if (name == "bounds") return cmd_bounds(cfg);
    if (name == "sweep") return cmd_sweep(cfg);
    throw UsageError("unknown command " + name);
  } catch (const Error& e) {
    log->error("{}", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    log->error("internal error: {}", e.what());
    return kExitInternal;
  }
}

}  // namespace ntkreg::exp
