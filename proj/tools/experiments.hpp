#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "ntkreg/bounds.hpp"
#include "ntkreg/data.hpp"
#include "ntkreg/errors.hpp"
#include "ntkreg/kernel.hpp"
#include "ntkreg/net.hpp"
#include "ntkreg/noise.hpp"

namespace ntkreg::exp {

// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitValidation = 3,
  kExitNumerical = 4,
  kExitIo = 5,
  kExitCheckFailed = 6,
};

int exit_code_for(ErrorKind kind);

struct DatasetSpec {
  std::string kind = "synth-sphere";  // synth-sphere | mnist-binary
  Eigen::Index n_train = 200;         // for mnist-binary: cap on training examples
  Eigen::Index n_test = 200;
  Eigen::Index d = 10;
  std::string target = "linear-sign";  // linear-sign | smooth-poly | argmax
  int num_classes = 3;                 // argmax only
  std::string images, labels, test_images, test_labels;
  int digit_a = 0;
  int digit_b = 1;
};

struct NoiseSpec {
  // auto picks flip (binary), gaussian (regression) or symmetric (multiclass).
  // Also: none | flip | gaussian | uniform | symmetric | transition.
  std::string kind = "auto";
  double level = 0.0;  // p, sigma, or the off-diagonal mass of the symmetric channel
  std::string transition_csv;
};

struct ModelSpec {
  std::string kernel = "analytic";  // analytic | empirical
  Eigen::Index width = 512;
  int depth = 2;
  bool freeze_first_last = true;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  NoiseSpec noise;
  ModelSpec model;
  std::string method = "krr";  // krr | linear-rdi | linear-aux | net-rdi | net-aux | net-vanilla
  double lambda = 1.0;
  std::vector<double> lambda_grid;
  std::vector<double> noise_grid;
  std::vector<Eigen::Index> width_grid;
  double eta = 0.0;  // 0 = 1 / (||K|| + lambda^2)
  int steps = 1000;
  Eigen::Index batch_size = 0;
  std::vector<std::uint64_t> seeds{0};
  double delta = 0.1;
  std::string constant_mode = "explicit";
  double tolerance = 1e-10;
  std::string out = "out";
  std::string cache_dir;  // empty = <out>/cache
  bool use_cache = true;

  void validate() const;
  std::vector<double> lambdas() const;  // lambda_grid, or {lambda}
  std::vector<double> noise_levels() const;
  std::vector<Eigen::Index> widths() const;
  std::filesystem::path cache_path() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

// Independent 64-bit seed for a named purpose.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

struct Split {
  DataSet train;  // noisy labels equal clean labels until apply_noise
  DataSet test;
};

Split make_split(const ExperimentConfig& cfg, std::uint64_t seed);

// std::nullopt when the configured noise is a no-op at this level.
std::optional<NoiseModel> make_noise(const NoiseSpec& spec, double level, const Task& task);
DataSet apply_noise(const ExperimentConfig& cfg, const DataSet& train, double level, std::uint64_t seed);

MLP make_net(const ExperimentConfig& cfg, const DataSet& train, Eigen::Index width, std::uint64_t seed);

// Analytic or empirical kernel of `train`, through the on-disk cache when enabled.
KernelMatrix obtain_kernel(const ExperimentConfig& cfg, const DataSet& train, Eigen::Index width,
                           std::uint64_t seed, const MLP* net);

struct SweepRow {
  double noise = 0.0;
  double lambda = 0.0;
  Eigen::Index width = 0;
  std::uint64_t seed = 0;
  std::string status = "ok";
  double train_error = 0.0;  // against noisy labels
  double test_error = 0.0;   // against clean labels
  double distance = 0.0;     // ||theta - theta0||, or the RKHS norm for krr
  std::optional<double> bound_total;
};

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg);

// Commands. Each writes resolved_config.json plus its outputs under cfg.out.
int cmd_kernel(const ExperimentConfig& cfg);
int cmd_equivalence(const ExperimentConfig& cfg);
int cmd_train(const ExperimentConfig& cfg);
int cmd_krr(const ExperimentConfig& cfg);
int cmd_bounds(const ExperimentConfig& cfg);
int cmd_sweep(const ExperimentConfig& cfg);

/// Full command line, argv[0] included. Never throws.
int run_cli(int argc, const char* const* argv);

}  // namespace ntkreg::exp
