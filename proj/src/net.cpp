#include "ntkreg/net.hpp"

#include <cmath>
#include <numeric>

#include "ntkreg/csv.hpp"
#include "ntkreg/errors.hpp"
#include "ntkreg/rng.hpp"

namespace ntkreg {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kHalfSqrt2 = 0.70710678118654752440;
constexpr double kDivergenceThreshold = 1e12;

Eigen::Index layer_in(const NetConfig& c, int l) { return l == 0 ? c.input_dim : c.widths[l - 1]; }
Eigen::Index layer_out(const NetConfig& c, int l) {
  return l == c.depth() - 1 ? c.outputs : c.widths[l];
}

}  // namespace

void NetConfig::validate() const {
  if (input_dim < 1) throw ValidationError("NetConfig: input_dim must be >= 1");
  if (widths.empty()) throw ValidationError("NetConfig: depth must be >= 2 (at least one hidden layer)");
  for (auto w : widths) {
    if (w < 1) throw ValidationError("NetConfig: widths must be >= 1");
  }
  if (outputs < 1) throw ValidationError("NetConfig: outputs must be >= 1");
  if (!(scale_c > 0.0)) throw ValidationError("NetConfig: scale_c must be > 0");
}

NetConfig NetConfig::two_layer(Eigen::Index input_dim, Eigen::Index width, Eigen::Index outputs) {
  NetConfig c;
  c.input_dim = input_dim;
  c.widths = {width};
  c.outputs = outputs;
  return c;
}

MLP::MLP(NetConfig config, std::vector<std::vector<Eigen::MatrixXd>> weights)
    : config_(std::move(config)), weights_(std::move(weights)), weights0_(weights_) {
  config_.validate();
  const std::size_t expected_branches = config_.difference_trick ? 2 : 1;
  if (weights_.size() != expected_branches) throw ValidationError("MLP: wrong number of branches");
  for (const auto& branch : weights_) {
    if (static_cast<int>(branch.size()) != config_.depth()) throw ValidationError("MLP: wrong number of layers");
    for (int l = 0; l < config_.depth(); ++l) {
      if (branch[l].rows() != layer_out(config_, l) || branch[l].cols() != layer_in(config_, l)) {
        throw ValidationError("MLP: layer " + std::to_string(l) + " has the wrong shape");
      }
    }
  }
}

MLP init_mlp(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::vector<Eigen::MatrixXd> layers;
  for (int l = 0; l < config.depth(); ++l) {
    Eigen::MatrixXd w(layer_out(config, l), layer_in(config, l));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.normal();
    }
    layers.push_back(std::move(w));
  }
  std::vector<std::vector<Eigen::MatrixXd>> weights{layers};
  if (config.difference_trick) weights.push_back(layers);
  return MLP(config, std::move(weights));
}

bool MLP::trainable(int layer) const {
  if (!config_.freeze_first_last) return true;
  const int last = depth() - 1;
  if (depth() == 2) return layer != last;
  return layer != 0 && layer != last;
}

Eigen::Index MLP::num_trainable() const {
  Eigen::Index count = 0;
  for (int l = 0; l < depth(); ++l) {
    if (trainable(l)) count += weights_[0][l].size();
  }
  return count * branches();
}

Eigen::VectorXd MLP::trainable_params() const {
  Eigen::VectorXd theta(num_trainable());
  Eigen::Index off = 0;
  for (const auto& branch : weights_) {
    for (int l = 0; l < depth(); ++l) {
      if (!trainable(l)) continue;
      const auto& w = branch[l];
      Eigen::Map<RowMajorMatrix>(theta.data() + off, w.rows(), w.cols()) = w;
      off += w.size();
    }
  }
  return theta;
}

Eigen::VectorXd MLP::trainable_params0() const { return initial().trainable_params(); }

void MLP::set_trainable_params(const Eigen::VectorXd& theta) {
  if (theta.size() != num_trainable()) throw DimensionError("MLP::set_trainable_params", num_trainable(), theta.size());
  Eigen::Index off = 0;
  for (auto& branch : weights_) {
    for (int l = 0; l < depth(); ++l) {
      if (!trainable(l)) continue;
      auto& w = branch[l];
      w = Eigen::Map<const RowMajorMatrix>(theta.data() + off, w.rows(), w.cols());
      off += w.size();
    }
  }
}

void MLP::add_to_trainable(const Eigen::VectorXd& delta) {
  if (delta.size() != num_trainable()) throw DimensionError("MLP::add_to_trainable", num_trainable(), delta.size());
  Eigen::Index off = 0;
  for (auto& branch : weights_) {
    for (int l = 0; l < depth(); ++l) {
      if (!trainable(l)) continue;
      auto& w = branch[l];
      w += Eigen::Map<const RowMajorMatrix>(delta.data() + off, w.rows(), w.cols());
      off += w.size();
    }
  }
}

void MLP::check_input(Eigen::Index cols, const char* where) const {
  if (cols != config_.input_dim) throw DimensionError(where, config_.input_dim, cols);
}

double MLP::branch_sign(int b) const {
  if (!config_.difference_trick) return 1.0;
  return b == 0 ? kHalfSqrt2 : -kHalfSqrt2;
}

Eigen::MatrixXd MLP::branch_forward(int b, const Eigen::MatrixXd& inputs, std::vector<Eigen::MatrixXd>* pre,
                                    std::vector<Eigen::MatrixXd>* post) const {
  const auto& layers = weights_[b];
  Eigen::MatrixXd h = inputs * layers[0].transpose();
  if (post) post->push_back(inputs);
  for (int l = 1; l < depth(); ++l) {
    const double scale = std::sqrt(config_.scale_c / static_cast<double>(layers[l].cols()));
    Eigen::MatrixXd a = scale * h.cwiseMax(0.0);
    if (pre) pre->push_back(std::move(h));
    h = a * layers[l].transpose();
    if (post) post->push_back(std::move(a));
  }
  if (pre) pre->push_back(h);
  return h;
}

MLP::Pass MLP::forward_pass(const Eigen::MatrixXd& inputs) const {
  check_input(inputs.cols(), "MLP::forward_pass");
  Pass pass;
  pass.pre.resize(branches());
  pass.post.resize(branches());
  for (int b = 0; b < branches(); ++b) {
    Eigen::MatrixXd g = branch_forward(b, inputs, &pass.pre[b], &pass.post[b]);
    if (b == 0) {
      pass.outputs = branch_sign(b) * g;
    } else {
      pass.outputs += branch_sign(b) * g;
    }
  }
  return pass;
}

Eigen::MatrixXd MLP::forward_batch(const Eigen::MatrixXd& inputs) const {
  check_input(inputs.cols(), "MLP::forward_batch");
  Eigen::MatrixXd out = branch_sign(0) * branch_forward(0, inputs, nullptr, nullptr);
  for (int b = 1; b < branches(); ++b) out += branch_sign(b) * branch_forward(b, inputs, nullptr, nullptr);
  return out;
}

Eigen::VectorXd MLP::forward(const Eigen::VectorXd& x) const {
  check_input(x.size(), "MLP::forward");
  return forward_batch(x.transpose()).row(0).transpose();
}

Eigen::VectorXd MLP::backward(const Pass& pass, const Eigen::MatrixXd& weights) const {
  if (weights.rows() != pass.outputs.rows() || weights.cols() != pass.outputs.cols()) {
    throw DimensionError("MLP::backward", pass.outputs.size(), weights.size());
  }
  int lowest_trainable = depth();
  for (int l = 0; l < depth(); ++l) {
    if (trainable(l)) {
      lowest_trainable = l;
      break;
    }
  }

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(num_trainable());
  // Offsets of each (branch, layer) segment in the flattened order.
  std::vector<std::vector<Eigen::Index>> offset(branches(), std::vector<Eigen::Index>(depth(), 0));
  Eigen::Index off = 0;
  for (int b = 0; b < branches(); ++b) {
    for (int l = 0; l < depth(); ++l) {
      offset[b][l] = off;
      if (trainable(l)) off += weights_[b][l].size();
    }
  }

  for (int b = 0; b < branches(); ++b) {
    const auto& layers = weights_[b];
    Eigen::MatrixXd g = branch_sign(b) * weights;  // d loss / d (branch output)
    for (int l = depth() - 1; l >= lowest_trainable; --l) {
      if (trainable(l)) {
        Eigen::Map<RowMajorMatrix>(grad.data() + offset[b][l], layers[l].rows(), layers[l].cols()) =
            g.transpose() * pass.post[b][l];
      }
      if (l == lowest_trainable) break;
      const double scale = std::sqrt(config_.scale_c / static_cast<double>(layers[l].cols()));
      Eigen::MatrixXd ga = g * layers[l];
      const auto& h = pass.pre[b][l - 1];
      g = (scale * ga.array() * (h.array() > 0.0).cast<double>()).matrix();
    }
  }
  return grad;
}

Eigen::VectorXd MLP::weighted_gradient(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& weights) const {
  return backward(forward_pass(inputs), weights);
}

Eigen::VectorXd MLP::gradient(const Eigen::VectorXd& x, Eigen::Index output_index) const {
  check_input(x.size(), "MLP::gradient");
  if (output_index < 0 || output_index >= config_.outputs) {
    throw DimensionError("MLP::gradient output index", config_.outputs, output_index);
  }
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(1, config_.outputs);
  w(0, output_index) = 1.0;
  return weighted_gradient(x.transpose(), w);
}

MLP MLP::initial() const {
  MLP copy = *this;
  copy.weights_ = weights0_;
  return copy;
}

MLP MLP::branch(int b) const {
  if (b < 0 || b >= branches()) throw UsageError("MLP::branch: no such branch");
  MLP g;
  g.config_ = config_;
  g.config_.difference_trick = false;
  g.weights_ = {weights_[b]};
  g.weights0_ = {weights0_[b]};
  return g;
}

std::vector<double> MLP::distance_to_init() const {
  std::vector<double> out(depth(), 0.0);
  for (int l = 0; l < depth(); ++l) {
    double sq = 0.0;
    for (int b = 0; b < branches(); ++b) sq += (weights_[b][l] - weights0_[b][l]).squaredNorm();
    out[l] = std::sqrt(sq);
  }
  return out;
}

std::vector<double> MLP::weight_norms() const {
  std::vector<double> out(depth(), 0.0);
  for (int l = 0; l < depth(); ++l) {
    double sq = 0.0;
    for (int b = 0; b < branches(); ++b) sq += weights_[b][l].squaredNorm();
    out[l] = std::sqrt(sq);
  }
  return out;
}

double MLP::total_distance() const {
  double sq = 0.0;
  for (double d : distance_to_init()) sq += d * d;
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------

Objective parse_objective(const std::string& name) {
  if (name == "vanilla") return Objective::kVanilla;
  if (name == "rdi") return Objective::kRdi;
  if (name == "aux") return Objective::kAux;
  throw UsageError("unknown objective '" + name + "'");
}

std::string to_string(Objective objective) {
  switch (objective) {
    case Objective::kVanilla:
      return "vanilla";
    case Objective::kRdi:
      return "rdi";
    case Objective::kAux:
      return "aux";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ValidationError("TrainConfig: eta must be > 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("TrainConfig: lambda must be >= 0");
  if (steps < 0) throw ValidationError("TrainConfig: steps must be >= 0");
  if (batch_size < 0) throw ValidationError("TrainConfig: batch_size must be >= 0");
}

Eigen::MatrixXd training_targets(const DataSet& data, bool noisy) {
  const Eigen::VectorXd& labels = noisy ? data.noisy_labels : data.clean_labels;
  if (data.task.kind != TaskKind::kMulticlass) return labels;
  const int k = data.task.num_classes;
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(data.n(), k);
  for (Eigen::Index i = 0; i < data.n(); ++i) y(i, static_cast<Eigen::Index>(labels(i)) - 1) = 1.0;
  return y;
}

namespace {

double train_error(const Eigen::MatrixXd& outputs, const DataSet& data) {
  const Eigen::Index n = data.n();
  if (data.task.kind == TaskKind::kRegression) {
    return (outputs.col(0) - data.noisy_labels).squaredNorm() / static_cast<double>(n);
  }
  Eigen::Index wrong = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (data.task.kind == TaskKind::kBinary) {
      const double u = outputs(i, 0);
      // sgn(0) counts as an error for either label.
      if (!(u * data.noisy_labels(i) > 0.0)) ++wrong;
    } else {
      Eigen::Index best = 0;
      outputs.row(i).maxCoeff(&best);  // first maximum wins ties
      if (best + 1 != static_cast<Eigen::Index>(data.noisy_labels(i))) ++wrong;
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(n);
}

void check_train_inputs(const MLP& mlp, const DataSet& data, const TrainConfig& cfg) {
  cfg.validate();
  const Eigen::Index expected_outputs = data.task.kind == TaskKind::kMulticlass ? data.task.num_classes : 1;
  if (mlp.config().outputs != expected_outputs) {
    throw UsageError("train_full: network outputs do not match the task");
  }
  if (data.d() != mlp.config().input_dim) throw DimensionError("train_full", mlp.config().input_dim, data.d());
}

}  // namespace

double training_objective(const MLP& mlp, const DataSet& data, const TrainConfig& cfg, const AuxState& aux) {
  const Eigen::MatrixXd targets = training_targets(data);
  Eigen::MatrixXd residual = mlp.forward_batch(data.inputs) - targets;
  if (cfg.objective == Objective::kAux && aux.b.size() > 0) residual += cfg.lambda * aux.b;
  double value = 0.5 * residual.squaredNorm();
  if (cfg.objective == Objective::kRdi) {
    const double dist = mlp.total_distance();
    value += 0.5 * cfg.lambda * cfg.lambda * dist * dist;
  }
  return value;
}

TrainResult train_full(MLP mlp, const DataSet& data, const TrainConfig& cfg) {
  check_train_inputs(mlp, data, cfg);
  const Eigen::Index n = data.n();
  const Eigen::MatrixXd targets = training_targets(data);
  const double lambda = cfg.lambda;
  const double lambda_sq = lambda * lambda;
  const bool minibatch = cfg.batch_size > 0 && cfg.batch_size < n;

  TrainResult result;
  result.aux.b = Eigen::MatrixXd::Zero(n, targets.cols());
  const Eigen::VectorXd theta0 = mlp.trainable_params0();

  Rng batch_rng(cfg.batch_seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::size_t cursor = order.size();

  for (int t = 0; t <= cfg.steps; ++t) {
    MLP::Pass pass = mlp.forward_pass(data.inputs);
    Eigen::MatrixXd residual = pass.outputs - targets;
    if (cfg.objective == Objective::kAux) residual += lambda * result.aux.b;
    const Eigen::VectorXd displacement = mlp.trainable_params() - theta0;

    double objective = 0.5 * residual.squaredNorm();
    if (cfg.objective == Objective::kRdi) objective += 0.5 * lambda_sq * displacement.squaredNorm();
    if (!std::isfinite(objective) || objective > kDivergenceThreshold) {
      throw DivergenceError("train_full", static_cast<std::size_t>(t), objective);
    }

    TrainLogRow row;
    row.step = t;
    row.objective = objective;
    row.train_error = train_error(pass.outputs, data);
    row.layer_distance = mlp.distance_to_init();
    row.layer_norm = mlp.weight_norms();
    result.log.push_back(std::move(row));
    if (t == cfg.steps) break;

    Eigen::VectorXd grad;
    Eigen::MatrixXd grad_b;
    if (!minibatch) {
      grad = mlp.backward(pass, residual);
      if (cfg.objective == Objective::kAux) grad_b = lambda * residual;
    } else {
      std::vector<Eigen::Index> batch;
      while (static_cast<Eigen::Index>(batch.size()) < cfg.batch_size) {
        if (cursor == order.size()) {
          // Fisher-Yates reshuffle at each epoch boundary.
          for (std::size_t i = order.size() - 1; i > 0; --i) {
            std::swap(order[i], order[static_cast<std::size_t>(batch_rng() % (i + 1))]);
          }
          cursor = 0;
        }
        batch.push_back(order[cursor++]);
      }
      Eigen::MatrixXd masked = Eigen::MatrixXd::Zero(residual.rows(), residual.cols());
      for (auto i : batch) masked.row(i) = residual.row(i);
      grad = mlp.backward(pass, masked);
      if (cfg.objective == Objective::kAux) grad_b = lambda * masked;
    }
    if (cfg.objective == Objective::kRdi) grad += lambda_sq * displacement;
    mlp.add_to_trainable(-cfg.eta * grad);
    if (cfg.objective == Objective::kAux) result.aux.b -= cfg.eta * grad_b;
  }
  result.mlp = std::move(mlp);
  return result;
}

void write_train_log_csv(const std::vector<TrainLogRow>& log, const std::string& path) {
  CsvWriter csv(path);
  std::vector<std::string> header{"step", "objective", "train_error"};
  const std::size_t layers = log.empty() ? 0 : log.front().layer_distance.size();
  for (std::size_t l = 0; l < layers; ++l) header.push_back("dist_layer" + std::to_string(l + 1));
  for (std::size_t l = 0; l < layers; ++l) header.push_back("norm_layer" + std::to_string(l + 1));
  csv.row(header);
  for (const auto& row : log) {
    std::vector<std::string> cells{std::to_string(row.step), format_double(row.objective),
                                   format_double(row.train_error)};
    for (double v : row.layer_distance) cells.push_back(format_double(v));
    for (double v : row.layer_norm) cells.push_back(format_double(v));
    csv.row(cells);
  }
}

}  // namespace ntkreg
