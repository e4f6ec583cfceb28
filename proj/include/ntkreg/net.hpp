#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntkreg/data.hpp"

namespace ntkreg {

/// Fully-connected bias-free ReLU network in NTK parameterization:
///
///   g(x) = W_L s_{L-1} relu(W_{L-1} ... s_1 relu(W_1 x)),   s_l = sqrt(c / d_l)
///
/// where d_l is the width of hidden layer l and every W_l has i.i.d. N(0, 1)
/// entries. The first layer is unscaled; inputs are expected to be unit-norm.
/// With `difference_trick`, f = (g(theta_1, x) - g(theta_2, x)) / sqrt(2) with
/// theta_1(0) = theta_2(0), so f(theta(0), .) is identically zero.
struct NetConfig {
  Eigen::Index input_dim = 1;
  std::vector<Eigen::Index> widths;  // hidden widths, depth - 1 entries
  Eigen::Index outputs = 1;
  double scale_c = 2.0;
  // Depth >= 3: first and last layer frozen. Depth 2: only the last layer is
  // frozen, otherwise nothing would train.
  bool freeze_first_last = true;
  bool difference_trick = true;

  int depth() const { return static_cast<int>(widths.size()) + 1; }
  void validate() const;

  static NetConfig two_layer(Eigen::Index input_dim, Eigen::Index width, Eigen::Index outputs = 1);
};

class MLP {
 public:
  MLP() = default;
  MLP(NetConfig config, std::vector<std::vector<Eigen::MatrixXd>> weights);

  const NetConfig& config() const { return config_; }
  int depth() const { return config_.depth(); }
  int branches() const { return static_cast<int>(weights_.size()); }
  bool trainable(int layer) const;

  const Eigen::MatrixXd& weight(int branch, int layer) const { return weights_[branch][layer]; }
  const Eigen::MatrixXd& weight0(int branch, int layer) const { return weights0_[branch][layer]; }

  /// Trainable parameter count, i.e. the length of gradient().
  Eigen::Index num_trainable() const;

  // Flattened trainable parameters in the gradient order: branch-major, then
  // layer, then row-major within a layer. Frozen layers are skipped.
  Eigen::VectorXd trainable_params() const;
  Eigen::VectorXd trainable_params0() const;
  void set_trainable_params(const Eigen::VectorXd& theta);
  // theta <- theta + delta on the trainable parameters.
  void add_to_trainable(const Eigen::VectorXd& delta);

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  // One output row per input row.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs) const;

  /// d f_h(theta, x) / d theta, flattened.
  Eigen::VectorXd gradient(const Eigen::VectorXd& x, Eigen::Index output_index = 0) const;

  /// sum_i sum_h weights(i, h) * d f_h(theta, x_i) / d theta, flattened.
  Eigen::VectorXd weighted_gradient(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& weights) const;

  // Split form of forward + weighted_gradient that shares the forward pass.
  struct Pass {
    Eigen::MatrixXd outputs;
    std::vector<std::vector<Eigen::MatrixXd>> pre;   // [branch][l]: n x d_{l+1}, pre-activations
    std::vector<std::vector<Eigen::MatrixXd>> post;  // [branch][l]: n x d_l, inputs to W_l
  };
  Pass forward_pass(const Eigen::MatrixXd& inputs) const;
  Eigen::VectorXd backward(const Pass& pass, const Eigen::MatrixXd& weights) const;

  // Copy with the current weights reset to theta(0).
  MLP initial() const;

  /// The single-branch network g(theta_b, .) carrying branch `b`'s weights.
  MLP branch(int b) const;

  // Per layer ||W_l - W_l(0)||_F, branches combined in quadrature.
  std::vector<double> distance_to_init() const;
  // Per layer ||W_l||_F, branches combined in quadrature.
  std::vector<double> weight_norms() const;
  // ||theta - theta(0)|| over all parameters.
  double total_distance() const;

  friend MLP init_mlp(const NetConfig& config, std::uint64_t seed);

 private:
  Eigen::MatrixXd branch_forward(int b, const Eigen::MatrixXd& inputs, std::vector<Eigen::MatrixXd>* pre,
                                 std::vector<Eigen::MatrixXd>* post) const;
  double branch_sign(int b) const;
  void check_input(Eigen::Index cols, const char* where) const;

  NetConfig config_;
  std::vector<std::vector<Eigen::MatrixXd>> weights_;   // [branch][layer]
  std::vector<std::vector<Eigen::MatrixXd>> weights0_;  // snapshot at init
};

MLP init_mlp(const NetConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Nonlinear training

enum class Objective { kVanilla, kRdi, kAux };

Objective parse_objective(const std::string& name);
std::string to_string(Objective objective);

struct TrainConfig {
  Objective objective = Objective::kVanilla;
  double lambda = 0.0;
  double eta = 0.1;
  int steps = 100;
  // 0 = full batch. Mini-batches are drawn without replacement per epoch.
  Eigen::Index batch_size = 0;
  std::uint64_t batch_seed = 0;

  void validate() const;
};

struct AuxState {
  Eigen::MatrixXd b;  // n x outputs, starts at zero
};

struct TrainLogRow {
  int step = 0;
  double objective = 0.0;
  // Zero-one error of sgn/argmax of the network output (auxiliary variables
  // excluded) against the noisy labels; mean squared error for regression.
  double train_error = 0.0;
  std::vector<double> layer_distance;
  std::vector<double> layer_norm;
};

struct TrainResult {
  MLP mlp;
  AuxState aux;
  std::vector<TrainLogRow> log;  // steps + 1 rows, row t taken before update t
};

// Training targets for the task: n x 1 for binary/regression, n x K one-hot for multiclass.
Eigen::MatrixXd training_targets(const DataSet& data, bool noisy = true);

double training_objective(const MLP& mlp, const DataSet& data, const TrainConfig& cfg, const AuxState& aux);

TrainResult train_full(MLP mlp, const DataSet& data, const TrainConfig& cfg);

void write_train_log_csv(const std::vector<TrainLogRow>& log, const std::string& path);

}  // namespace ntkreg
