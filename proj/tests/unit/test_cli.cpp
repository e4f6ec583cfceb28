#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <spdlog/sinks/ringbuffer_sink.h>
#include <spdlog/spdlog.h>

#include "doctest.h"
#include "experiments.hpp"
#include "helpers.hpp"
#include "json.hpp"
#include "ntkreg/data.hpp"

using namespace ntkreg;
using namespace ntkreg::exp;
using nlohmann::json;

namespace {

// Runs the CLI with the given arguments and returns (exit code, captured log lines).
std::pair<int, std::vector<std::string>> run(std::vector<std::string> args) {
  auto log = spdlog::get("ntkreg");
  if (!log) {
    log = std::make_shared<spdlog::logger>("ntkreg");
    spdlog::register_logger(log);
  }
  auto ring = std::make_shared<spdlog::sinks::ringbuffer_sink_mt>(256);
  ring->set_pattern("%l %v");
  log->sinks().push_back(ring);
  args.insert(args.begin(), "ntkreg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  const int code = run_cli(static_cast<int>(argv.size()), argv.data());
  log->sinks().pop_back();
  return {code, ring->last_formatted()};
}

bool logged(const std::vector<std::string>& lines, const std::string& needle) {
  for (const auto& l : lines) {
    if (l.find(needle) != std::string::npos) return true;
  }
  return false;
}

std::string write_config(const testing::TempDir& dir, const std::string& name, const json& j) {
  const auto path = dir / name;
  std::ofstream(path) << j.dump(2);
  return path.string();
}

json small_binary() {
  return {{"dataset", {{"kind", "synth-sphere"}, {"n_train", 50}, {"n_test", 50}, {"d", 10}}},
          {"model", {{"width", 512}}}};
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    for (char ch : line) {
      if (ch == ',') {
        cells.push_back(cell);
        cell.clear();
      } else {
        cell += ch;
      }
    }
    cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config parsing fills defaults and rejects unknown keys") {
  const ExperimentConfig c = config_from_json(json::object());
  CHECK(c.method == "krr");
  CHECK(c.seeds == std::vector<std::uint64_t>{0});
  CHECK_NOTHROW(c.validate());

  const ExperimentConfig d = config_from_json({{"lambda_grid", {0.25, 1, 4}}, {"seeds", {3, 4}}});
  CHECK(d.lambdas() == std::vector<double>{0.25, 1, 4});
  CHECK(d.seeds.size() == 2);

  CHECK_THROWS_AS(config_from_json({{"lamda", 1.0}}), UsageError);
  CHECK_THROWS_AS(config_from_json({{"model", {{"widht", 4}}}}), UsageError);

  ExperimentConfig bad;
  bad.seeds.clear();
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = ExperimentConfig{};
  bad.lambda_grid = {1.0, -0.5};
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = ExperimentConfig{};
  bad.dataset.kind = "mnist-binary";
  bad.dataset.images = "/nonexistent/images.idx";
  try {
    bad.validate();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kIo);
  }

  // Resolved config round trip.
  const ExperimentConfig e = config_from_json(config_to_json(d));
  CHECK(config_to_json(e) == config_to_json(d));
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ErrorKind::kUsage) == 2);
  CHECK(exit_code_for(ErrorKind::kValidation) == 3);
  CHECK(exit_code_for(ErrorKind::kNumerical) == 4);
  CHECK(exit_code_for(ErrorKind::kIo) == 5);

  testing::TempDir dir("cli");
  const std::string out = (dir / "o").string();
  CHECK(run({"frobnicate"}).first == 2);
  CHECK(run({"krr", "--no-such-flag"}).first == 2);
  CHECK(run({"krr", "--quiet", "--out", out, "--constant-mode", "tight"}).first == 2);
  CHECK(run({"krr", "--quiet", "--out", out, "--config", (dir / "missing.json").string()}).first == 2);
  const std::string mnist = write_config(
      dir, "mnist.json", {{"dataset", {{"kind", "mnist-binary"}, {"images", "/nope"}, {"labels", "/nope"}}}});
  CHECK(run({"krr", "--quiet", "--out", out, "--config", mnist}).first == 5);
  // Flip rate outside [0, 1/2).
  CHECK(run({"krr", "--quiet", "--out", out, "--noise", "0.7"}).first == 3);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(run({"krr", "--quiet", "--out", out, "--config", (dir / "broken.json").string()}).first == 2);
}

TEST_CASE("kernel command caches the analytic kernel") {
  testing::TempDir dir("cli");
  const std::string cfg = write_config(
      dir, "k.json", {{"dataset", {{"n_train", 20}, {"n_test", 0}, {"d", 5}}}, {"out", (dir / "o").string()}});

  const auto [code, lines] = run({"kernel", "--config", cfg});
  CHECK(code == 0);
  CHECK(logged(lines, "cache miss"));
  const auto rows = read_csv(dir / "o" / "results.csv");
  REQUIRE(rows.size() == 2);
  CHECK(rows[1][5] == "2");
  CHECK(rows[1][6] == "2");

  std::filesystem::path cache_file;
  for (const auto& e : std::filesystem::directory_iterator(dir / "o" / "cache")) cache_file = e.path();
  REQUIRE_FALSE(cache_file.empty());
  const Split split = make_split(config_from_json({{"dataset", {{"n_train", 20}, {"n_test", 0}, {"d", 5}}}}), 0);
  const KernelCache cache = load_kernel(cache_file, split.train);
  CHECK(cache.matrix.values().diagonal() == Eigen::VectorXd::Constant(20, 2.0));

  const auto [code2, lines2] = run({"kernel", "--config", cfg});
  CHECK(code2 == 0);
  CHECK(logged(lines2, "cache hit"));

  auto bytes = testing::read_bytes(cache_file);
  bytes.resize(bytes.size() / 2);
  testing::write_bytes(cache_file, bytes);
  const auto [code3, lines3] = run({"kernel", "--config", cfg});
  CHECK(code3 == 0);
  CHECK(logged(lines3, "stale cache"));
  CHECK(load_kernel(cache_file, split.train).matrix.values() == cache.matrix.values());

  // Different data under the same file name: digest mismatch, rebuilt.
  const ExperimentConfig c = config_from_json({{"dataset", {{"n_train", 20}, {"n_test", 0}, {"d", 5}}}});
  const Split other = make_split(c, 1);
  save_kernel({analytic_ntk(2, other.train), {}, input_digest(other.train.inputs)}, cache_file);
  const auto [code4, lines4] = run({"kernel", "--config", cfg});
  CHECK(code4 == 0);
  CHECK(logged(lines4, "stale cache"));
}

TEST_CASE("equivalence passes on a lambda grid") {
  testing::TempDir dir("cli");
  json j = small_binary();
  j["lambda_grid"] = {0.25, 1, 4};
  j["steps"] = 300;
  j["out"] = (dir / "o").string();
  const auto [code, lines] = run({"equivalence", "--quiet", "--config", write_config(dir, "e.json", j)});
  CHECK(code == 0);
  const auto rows = read_csv(dir / "o" / "results.csv");
  REQUIRE(rows.size() == 4);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    CHECK(rows[r][7] == "1");
    CHECK(std::stod(rows[r][5]) <= 1e-10);
  }
  const auto traj = read_csv(dir / "o" / "trajectory.csv");
  CHECK(traj.size() == 1 + 3 * 301);
  CHECK(std::filesystem::exists(dir / "o" / "resolved_config.json"));
}

TEST_CASE("equivalence holds above the step-size threshold") {
  testing::TempDir dir("cli");
  json j = small_binary();
  j["dataset"]["n_train"] = 20;
  j["model"]["width"] = 64;
  j["out"] = (dir / "o").string();
  j["steps"] = 25;
  const std::string cfg = write_config(dir, "e.json", j);
  // Default step for reference, then 2.5 times larger.
  REQUIRE(run({"equivalence", "--quiet", "--config", cfg, "--lambda", "1"}).first == 0);
  const double eta = std::stod(read_csv(dir / "o" / "results.csv")[1][2]);
  CHECK(run({"equivalence", "--quiet", "--config", cfg, "--lambda", "1", "--eta", std::to_string(2.5 * eta)}).first ==
        0);
  const auto traj = read_csv(dir / "o" / "trajectory.csv");
  // The objective grows: GD is unstable at this step size.
  CHECK(std::stod(traj.back()[2]) > std::stod(traj[1][2]));
}

TEST_CASE("binary bound totals increase with p") {
  testing::TempDir dir("cli");
  json j = small_binary();
  j["noise_grid"] = {0.0, 0.2, 0.4};
  j["out"] = (dir / "o").string();
  REQUIRE(run({"bounds", "--quiet", "--config", write_config(dir, "b.json", j)}).first == 0);
  std::ifstream in(dir / "o" / "bound_report.json");
  const json report = json::parse(in);
  const auto& reports = report.at("reports");
  REQUIRE(reports.size() == 3);
  for (std::size_t i = 1; i < 3; ++i) CHECK(reports[i]["total"].get<double>() > reports[i - 1]["total"].get<double>());
  for (const auto& r : reports) {
    for (const auto& c : r["components"]) CHECK(std::isfinite(c["value"].get<double>()));
  }
}

TEST_CASE("additive and multiclass bound reports") {
  testing::TempDir dir("cli");
  json add = small_binary();
  add["dataset"]["target"] = "smooth-poly";
  add["noise"] = {{"level", 0.1}};
  add["out"] = (dir / "a").string();
  REQUIRE(run({"bounds", "--quiet", "--config", write_config(dir, "a.json", add)}).first == 0);
  std::ifstream ain(dir / "a" / "bound_report.json");
  const json a = json::parse(ain);
  CHECK(a["reports"][0]["kind"] == "additive");
  CHECK(a["reports"][0]["components"].size() == 7);

  json multi = small_binary();
  multi["dataset"]["target"] = "argmax";
  multi["dataset"]["num_classes"] = 3;
  multi["noise"] = {{"kind", "none"}};
  multi["out"] = (dir / "m").string();
  REQUIRE(run({"bounds", "--quiet", "--config", write_config(dir, "m.json", multi)}).first == 0);
  std::ifstream min(dir / "m" / "bound_report.json");
  const json m = json::parse(min);
  CHECK(m["reports"][0]["kind"] == "multiclass");
  bool found = false;
  for (const auto& kv : m["reports"][0]["values"].items()) {
    if (kv.key() == "gap") {
      CHECK(kv.value().get<double>() == 1.0);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("sweep interpolates without noise and reruns byte for byte") {
  testing::TempDir dir("cli");
  json j = small_binary();
  j["noise_grid"] = {0.0};
  j["lambda_grid"] = {0.0, 1.0};
  j["seeds"] = {0, 1};
  j["out"] = (dir / "a").string();
  const std::string cfg = write_config(dir, "s.json", j);
  REQUIRE(run({"sweep", "--quiet", "--config", cfg}).first == 0);
  const auto rows = read_csv(dir / "a" / "results.csv");
  REQUIRE(rows.size() == 5);
  const auto& header = rows[0];
  const auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    REQUIRE(it != header.end());
    return static_cast<std::size_t>(it - header.begin());
  };
  for (std::size_t r = 1; r < rows.size(); ++r) {
    CHECK(rows[r][col("status")] == "ok");
    if (std::stod(rows[r][col("lambda")]) == 0.0) CHECK(std::stod(rows[r][col("train_error_noisy")]) == 0.0);
  }

  REQUIRE(run({"sweep", "--quiet", "--config", cfg, "--out", (dir / "b").string()}).first == 0);
  for (const char* name : {"results.csv", "distance_table.csv", "best_lambda.csv"}) {
    CHECK(testing::read_bytes(dir / "a" / name) == testing::read_bytes(dir / "b" / name));
  }
}

TEST_CASE("krr and train commands are reproducible") {
  testing::TempDir dir("cli");
  json j = small_binary();
  j["noise"] = {{"level", 0.2}};
  j["dataset"]["n_train"] = 30;
  j["model"]["width"] = 64;
  j["steps"] = 50;
  const std::string cfg = write_config(dir, "r.json", j);
  for (const char* cmd : {"krr", "train"}) {
    const std::string a = (dir / (std::string(cmd) + "_a")).string();
    const std::string b = (dir / (std::string(cmd) + "_b")).string();
    std::vector<std::string> extra;
    if (std::string(cmd) == "train") extra = {"--method", "net-aux"};
    auto args_a = std::vector<std::string>{cmd, "--quiet", "--config", cfg, "--out", a};
    auto args_b = std::vector<std::string>{cmd, "--quiet", "--config", cfg, "--out", b};
    args_a.insert(args_a.end(), extra.begin(), extra.end());
    args_b.insert(args_b.end(), extra.begin(), extra.end());
    REQUIRE(run(args_a).first == 0);
    REQUIRE(run(args_b).first == 0);
    for (const auto& e : std::filesystem::directory_iterator(a)) {
      if (e.path().extension() != ".csv") continue;
      CHECK(testing::read_bytes(e.path()) == testing::read_bytes(std::filesystem::path(b) / e.path().filename()));
    }
  }
}

TEST_CASE("derived seeds are distinct per purpose") {
  CHECK(derive_seed(0, "data") != derive_seed(0, "noise"));
  CHECK(derive_seed(0, "data") != derive_seed(1, "data"));
  CHECK(derive_seed(7, "init") == derive_seed(7, "init"));
}

}
