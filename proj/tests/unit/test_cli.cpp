#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"

using namespace lnpde;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("lnpde_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "lnpde");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::main_entry(static_cast<int>(argv.size()), argv.data());
}

json tiny_config() {
  return json::parse(R"({
    "dataset": {"grid": {"points": [32], "lo": [0.0], "hi": [1.0], "periodic": true},
                "time": {"F": 6}, "per_param": 20,
                "ranges": {"train": [0, 12], "val": [12, 16], "test": [16, 20]}},
    "model": {"fe": [4, 8], "ke": [5, 3], "fd": [8, 4], "kd": [4, 3], "latent": 6, "hidden": [16]},
    "train": {"max_epochs": 2, "batch_size": 4},
    "eval": {"factors": [1, 2]}
  })");
}

fs::path write_config(const fs::path& dir, const json& j) {
  const auto p = dir / "config_in.json";
  std::ofstream(p) << j.dump();
  return p;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("resolve_config: preset, then file, then flags") {
  cli::Flags flags;
  flags.out = "/tmp/x";
  flags.data = "/tmp/d";
  auto c = cli::resolve_config("train", json::object(), flags);
  CHECK(c["preset"] == "advection-fixed");
  CHECK(c["scale"] == "desk");
  CHECK(c["precision"] == "float");
  CHECK(c["dataset"]["grid"]["points"][0] == 64);
  CHECK(c["eval"]["factors"] == json::array({1, 5}));
  CHECK(c["eval"]["space"] == "model");
  const double preset_lr = c["train"]["lr"].get<double>();

  json file = {{"train", {{"lr", 0.5 * preset_lr}, {"max_epochs", 7}}}, {"model_seed", 11}};
  c = cli::resolve_config("train", file, flags);
  CHECK(c["train"]["lr"].get<double>() == doctest::Approx(0.5 * preset_lr));
  CHECK(c["train"]["max_epochs"] == 7);
  CHECK(c["model_seed"] == 11);

  flags.lr = 0.25 * preset_lr;
  flags.epochs = 3;
  flags.rk_stage = 2;
  flags.seed = 5;
  c = cli::resolve_config("train", file, flags);
  CHECK(c["train"]["lr"].get<double>() == doctest::Approx(0.25 * preset_lr));
  CHECK(c["train"]["max_epochs"] == 3);
  CHECK(c["model"]["rk_stage"] == 2);
  CHECK(c["model_seed"] == 5);
  CHECK(c["train"]["seed"] == 5);
}

TEST_CASE("resolve_config: gen seeds the dataset and writes into --out") {
  cli::Flags flags;
  flags.out = "/tmp/g";
  flags.seed = 42;
  const auto c = cli::resolve_config("gen", json::object(), flags);
  CHECK(c["dataset"]["seed"] == 42);
  CHECK(c["data_dir"] == "/tmp/g");
}

TEST_CASE("resolve_config: invalid settings are usage errors") {
  cli::Flags flags;
  CHECK_THROWS_AS(cli::resolve_config("train", json::object(), flags), cli::UsageError);
  flags.out = "/tmp/x";
  CHECK_THROWS_AS(cli::resolve_config("train", json::object(), flags), cli::UsageError);
  flags.data = "/tmp/d";
  CHECK_THROWS_AS(cli::resolve_config("fit", json::object(), flags), cli::UsageError);
  flags.precision = "half";
  CHECK_THROWS_AS(cli::resolve_config("train", json::object(), flags), cli::UsageError);
  flags.precision.reset();
  flags.metric_space = "latent";
  CHECK_THROWS_AS(cli::resolve_config("eval", json::object(), flags), cli::UsageError);
  flags.metric_space.reset();
  flags.axis = "lr";
  CHECK_THROWS_AS(cli::resolve_config("ablate", json::object(), flags), cli::UsageError);
  flags.axis = "rk-stage";
  flags.values = std::vector<double>{1, 5};
  CHECK_THROWS_AS(cli::resolve_config("ablate", json::object(), flags), cli::UsageError);
  flags.values.reset();
  flags.batch_size = 0;
  CHECK_THROWS_AS(cli::resolve_config("train", json::object(), flags), cli::UsageError);
}

TEST_CASE("argument parsing errors give nonzero status") {
  const auto dir = fresh_dir("args");
  CHECK(run({}) != 0);
  CHECK(run({"gen"}) != 0);
  CHECK(run({"train", "--out", dir.string(), "--strategy", "3"}) != 0);
  CHECK(run({"train", "--out", dir.string(), "--data", dir.string(), "--precision", "half"}) == 2);
  CHECK(run({"eval", "--out", dir.string(), "--data", dir.string(), "--dt-factors", "1,0"}) == 2);
  CHECK(run({"train", "--out", dir.string(), "--config", (dir / "missing.json").string()}) == 2);
}

TEST_CASE("gen, train, eval and ablate end to end") {
  const auto root = fresh_dir("flow");
  const auto cfg = write_config(root, tiny_config()).string();
  const auto data = (root / "data").string();
  const auto run_dir = (root / "run").string();
  const auto eval_dir = (root / "eval").string();

  REQUIRE(run({"gen", "--config", cfg, "--out", data, "--seed", "3"}) == 0);
  for (auto s : {"train", "val", "test"}) CHECK(fs::exists(fs::path(data) / (std::string(s) + ".lnds")));
  CHECK(run({"gen", "--config", cfg, "--out", data}) == 2);
  const auto first_bytes = slurp(fs::path(data) / "train.lnds");
  CHECK(run({"gen", "--config", cfg, "--out", data, "--seed", "3", "--force"}) == 0);
  CHECK(slurp(fs::path(data) / "train.lnds") == first_bytes);

  REQUIRE(run({"train", "--config", cfg, "--out", run_dir, "--data", data}) == 0);
  const fs::path rd(run_dir);
  CHECK(fs::exists(rd / "best.ckpt"));
  CHECK(fs::exists(rd / "last.ckpt"));
  CHECK(line_count(rd / "metrics.csv") == 3);
  const auto echoed = read_json(rd / "config.json");
  CHECK(echoed["command"] == "train");
  CHECK(echoed["train"]["max_epochs"] == 2);
  CHECK(echoed["model"]["latent"] == 6);

  const auto replay_dir = root / "replay";
  REQUIRE(run({"train", "--config", (rd / "config.json").string(), "--out", replay_dir.string()}) == 0);
  CHECK(slurp(replay_dir / "metrics.csv") == slurp(rd / "metrics.csv"));
  CHECK(slurp(replay_dir / "last.ckpt") == slurp(rd / "last.ckpt"));

  CHECK(run({"train", "--config", cfg, "--out", run_dir, "--data", data}) == 2);
  CHECK(run({"train", "--config", cfg, "--out", run_dir, "--data", data, "--resume", "--epochs", "3"}) == 0);
  CHECK(line_count(rd / "metrics.csv") == 4);

  CHECK(run({"eval", "--config", cfg, "--out", eval_dir, "--data", data}) == 2);
  const auto ckpt = (rd / "best.ckpt").string();
  REQUIRE(run({"eval", "--config", cfg, "--out", eval_dir, "--data", data, "--checkpoint", ckpt}) == 0);
  const auto summary = read_json(fs::path(eval_dir) / "summary.json");
  REQUIRE(summary.is_array());
  REQUIRE(summary.size() == 2);
  CHECK(summary[0]["factor"] == 1);
  CHECK(summary[1]["factor"] == 2);
  CHECK(summary[0]["space"] == "model");
  CHECK(std::isfinite(summary[0]["model_nrmse"].get<double>()));
  CHECK(fs::exists(fs::path(eval_dir) / "nrmse_vs_time.svg"));
  CHECK(run({"eval", "--config", cfg, "--out", eval_dir, "--data", data, "--checkpoint", ckpt}) == 2);

  const auto abl_dir = (root / "ablate").string();
  REQUIRE(run({"ablate", "--config", cfg, "--out", abl_dir, "--data", data, "--axis", "rk-stage",
               "--values", "1,4", "--epochs", "1"}) == 0);
  CHECK(fs::exists(fs::path(abl_dir) / "ablation.csv"));
  CHECK(fs::exists(fs::path(abl_dir) / "q1" / "best.ckpt"));
  CHECK(fs::exists(fs::path(abl_dir) / "q4" / "best.ckpt"));
}

TEST_CASE("mismatched grids and locked run directories are refused") {
  const auto root = fresh_dir("mismatch");
  auto small = tiny_config();
  const auto cfg = write_config(root, small).string();
  const auto data32 = (root / "d32").string();
  REQUIRE(run({"gen", "--config", cfg, "--out", data32}) == 0);

  small["dataset"]["grid"]["points"] = {16};
  small.erase("model");
  const auto cfg16 = (root / "c16.json").string();
  std::ofstream(cfg16) << small.dump();
  const auto data16 = (root / "d16").string();
  REQUIRE(run({"gen", "--config", cfg16, "--out", data16}) == 0);

  auto pinned = tiny_config();
  pinned["model"]["extent"] = {16};
  const auto cfg_pinned = (root / "pinned.json").string();
  std::ofstream(cfg_pinned) << pinned.dump();
  CHECK(run({"train", "--config", cfg_pinned, "--out", (root / "bad").string(), "--data", data32}) == 2);

  const auto run_dir = (root / "run").string();
  REQUIRE(run({"train", "--config", cfg, "--out", run_dir, "--data", data32, "--epochs", "1"}) == 0);
  const auto ckpt = (fs::path(run_dir) / "best.ckpt").string();
  CHECK(run({"eval", "--config", cfg, "--out", (root / "e").string(), "--data", data16, "--checkpoint", ckpt}) == 2);

  const auto locked = root / "locked";
  fs::create_directories(locked);
  std::ofstream(locked / ".lnpde.lock") << "1";
  CHECK(run({"train", "--config", cfg, "--out", locked.string(), "--data", data32}) == 2);
  CHECK(fs::exists(locked / ".lnpde.lock"));
  CHECK_FALSE(fs::exists(locked / "metrics.csv"));
}
