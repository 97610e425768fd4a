#include "cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lnpde/autodiff/checkpoint.hpp"
#include "lnpde/data/presets.hpp"
#include "lnpde/eval/report.hpp"
#include "lnpde/model/surrogate.hpp"
#include "lnpde/training/trainer.hpp"
#include "lnpde/util/files.hpp"

namespace lnpde::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kSplitNames[] = {"train", "val", "test"};

/// Exclusive marker file guarding a run directory against concurrent writers.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lnpde.lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw UsageError("run directory " + dir.string() + " is locked by another process (" +
                             path_.string() + ")");
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

std::vector<std::size_t> default_error_frames(std::size_t F) { return {0, F / 2, F}; }

data::Splits load_splits(const fs::path& dir) {
  data::Splits s;
  data::TrajectoryDataset* parts[] = {&s.train, &s.val, &s.test};
  for (int k = 0; k < 3; ++k) {
    const auto p = dir / (std::string(kSplitNames[k]) + ".lnds");
    if (!fs::exists(p)) throw UsageError("dataset file " + p.string() + " not found (run gen first)");
    *parts[k] = data::load_dataset(p);
  }
  return s;
}

/// Binds the partial model section to the dataset and checks it.
model::ModelConfig bind_model(json& config, const data::TrajectoryDataset& ds) {
  json m = model::to_json(model::model_preset(config["preset"], config["scale"], ds.grid.points,
                                              ds.channels, ds.z));
  m.merge_patch(config["model"]);
  const auto mc = model::model_config_from_json(m);
  if (mc.extent != ds.grid.points || mc.channels != ds.channels || mc.z != ds.z) {
    throw UsageError("config/dataset shape mismatch: model expects extent " +
                     ad::to_string(mc.extent) + ", channels " + std::to_string(mc.channels) +
                     ", z " + std::to_string(mc.z) + " but the dataset has " +
                     ad::to_string(ds.grid.points) + ", " + std::to_string(ds.channels) + ", " +
                     std::to_string(ds.z));
  }
  config["model"] = model::to_json(mc);
  return mc;
}

void echo_config(const json& config, const fs::path& out, std::ostream& log) {
  const std::string text = config.dump(2) + "\n";
  std::cout << text;
  fs::create_directories(out);
  write_file_atomic(out / "config.json", text);
  log << "resolved config written to " << (out / "config.json").string() << '\n';
}

void require_absent(const fs::path& p, bool force, const std::string& hint) {
  if (fs::exists(p) && !force) {
    throw UsageError(p.string() + " already exists; pass --force to overwrite" + hint);
  }
}

eval::EvalOptions eval_options(const json& e) {
  eval::EvalOptions o;
  o.factors = e.at("factors").get<std::vector<std::size_t>>();
  o.error_frames = e.at("error_frames").get<std::vector<std::pair<std::size_t, std::size_t>>>();
  o.chunk = e.value("chunk", std::size_t{16});
  o.space = eval::metric_space_from_string(e.value("space", std::string("model")));
  return o;
}

int cmd_gen(json config, bool force, std::ostream& log) {
  const fs::path out = config["out_dir"].get<std::string>();
  RunLock lock(out);
  for (auto name : kSplitNames) require_absent(out / (std::string(name) + ".lnds"), force, "");
  data::Splits splits;
  if (config["preset"] == "import") {
    const std::string input = config.value("input", std::string());
    if (input.empty()) throw UsageError("the import preset needs --input FILE");
    auto ds = data::load_dataset(input);
    if (ds.normalized) ds = data::denormalize(ds);
    auto& dj = config["dataset"];
    data::SplitRanges ranges = data::proportional_ranges(ds.size());
    if (dj.contains("ranges")) ranges = data::dataset_spec_from_json(dj).ranges;
    auto range = [](const data::IndexRange& r) { return json::array({r.begin, r.end}); };
    dj["ranges"] = {{"train", range(ranges.train)}, {"val", range(ranges.val)}, {"test", range(ranges.test)}};
    splits = data::prepare_imported(std::move(ds), ranges, dj.value("normalize_fields", true));
  } else {
    splits = data::generate_dataset(data::dataset_spec_from_json(config["dataset"]));
  }
  echo_config(config, out, log);
  const data::TrajectoryDataset* parts[] = {&splits.train, &splits.val, &splits.test};
  for (int k = 0; k < 3; ++k) {
    const auto tmp = out / (std::string(kSplitNames[k]) + ".lnds.tmp");
    data::save_dataset(*parts[k], tmp);
  }
  for (int k = 0; k < 3; ++k) {
    const auto final_path = out / (std::string(kSplitNames[k]) + ".lnds");
    fs::rename(out / (std::string(kSplitNames[k]) + ".lnds.tmp"), final_path);
    log << kSplitNames[k] << ": " << parts[k]->size() << " trajectories -> " << final_path.string() << '\n';
  }
  return 0;
}

template <class T>
int train_run(json config, bool resume, bool force, std::ostream& log) {
  const fs::path out = config["out_dir"].get<std::string>();
  RunLock lock(out);
  if (!resume) require_absent(out / "metrics.csv", force, " or --resume to continue");
  if (!resume && force) {
    for (auto name : {"metrics.csv", "best.ckpt", "last.ckpt"}) fs::remove(out / name);
  }
  const fs::path data_dir = config["data_dir"].get<std::string>();
  const auto splits = load_splits(data_dir);
  const auto mc = bind_model(config, splits.train);
  const auto plan = train::train_plan_from_json(config["train"]);
  echo_config(config, out, log);
  const auto& stats = splits.train.norm;
  const auto train_set = data::normalize(splits.train, stats);
  const auto val_set = data::normalize(splits.val, stats);
  model::SurrogateModel<T> m(mc, config["model_seed"].get<std::uint64_t>());
  train::TrainOptions opts;
  opts.out_dir = out;
  opts.resume = resume;
  opts.progress = &log;
  opts.extra_meta = {{"dataset", splits.train.provenance}, {"data_dir", data_dir.string()}};
  const auto res = train::train(m, train_set, val_set, plan, opts);
  log << "finished after " << (res.history.empty() ? 0 : res.history.back().epoch) << " epochs"
      << (res.early_stopped ? " (early stop)" : "") << "; best epoch " << res.best_epoch
      << ", best validation loss " << res.best_val << '\n';
  return 0;
}

template <class T>
int eval_run(json config, bool force, std::ostream& log) {
  const fs::path out = config["out_dir"].get<std::string>();
  const std::string ckpt_path = config["eval"].value("checkpoint", std::string());
  if (ckpt_path.empty()) throw UsageError("eval needs --checkpoint FILE");
  RunLock lock(out);
  require_absent(out / "summary.json", force, "");
  const auto ckpt = ad::load_checkpoint(ckpt_path);
  const auto m = model::model_from_checkpoint<T>(ckpt);
  const fs::path data_dir = config["data_dir"].get<std::string>();
  const auto test_path = data_dir / "test.lnds";
  if (!fs::exists(test_path)) throw UsageError("dataset file " + test_path.string() + " not found");
  const auto test = data::load_dataset(test_path);
  const auto& mc = m.config();
  if (mc.extent != test.grid.points || mc.channels != test.channels || mc.z != test.z) {
    throw UsageError("incompatible grid: checkpoint model expects " + ad::to_string(mc.extent) +
                     " but the test set has " + ad::to_string(test.grid.points));
  }
  config["model"] = model::to_json(mc);
  echo_config(config, out, log);
  const auto reports = eval::evaluate(m, test, eval_options(config["eval"]));
  eval::write_eval_report(out, reports);
  for (const auto& r : reports) {
    log << "dt/" << r.factor << ": nRMSE " << r.all.overall << " (training times "
        << r.training_times.overall << ", " << eval::to_string(r.space) << " space; physical "
        << r.physical_nrmse << ", excluded " << r.all.excluded << ", diverged " << r.diverged
        << ")\n";
  }
  return 0;
}

template <class T>
int ablate_run(json config, bool force, std::ostream& log) {
  const fs::path out = config["out_dir"].get<std::string>();
  RunLock lock(out);
  require_absent(out / "ablation.csv", force, "");
  const auto splits = load_splits(config["data_dir"].get<std::string>());
  const auto mc = bind_model(config, splits.train);
  const auto plan = train::train_plan_from_json(config["train"]);
  echo_config(config, out, log);
  const auto& ab = config["ablate"];
  const std::string axis = ab.at("axis");
  std::vector<eval::AblationVariant> variants;
  if (axis == "rk-stage") {
    variants = eval::rk_stage_variants(mc, plan, ab.at("values").get<std::vector<int>>());
  } else {
    variants = eval::l3_variants(mc, plan, ab.at("values").get<std::vector<double>>());
  }
  if (force) {
    for (const auto& v : variants) fs::remove_all(out / v.label);
  }
  train::TrainOptions opts;
  opts.out_dir = out;
  opts.progress = &log;
  const auto results = eval::run_ablation<T>(variants, splits, config["model_seed"].get<std::uint64_t>(),
                                             eval_options(config["eval"]), opts);
  eval::write_ablation_report(out, results);
  for (const auto& r : results)
    for (const auto& rep : r.reports)
      log << r.label << " dt/" << rep.factor << ": nRMSE " << rep.all.overall << '\n';
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw UsageError("empty list '" + s + "'");
  return out;
}

}  // namespace

json resolve_config(const std::string& command, const json& file, const Flags& flags) {
  if (command != "gen" && command != "train" && command != "eval" && command != "ablate") {
    throw UsageError("unknown command '" + command + "'");
  }
  json c;
  c["command"] = command;
  const std::string preset = flags.preset.value_or(file.value("preset", std::string("advection-fixed")));
  const std::string scale = flags.scale.value_or(file.value("scale", std::string("desk")));
  c["preset"] = preset;
  c["scale"] = scale;
  const std::string precision = flags.precision.value_or(file.value("precision", std::string("float")));
  if (precision != "float" && precision != "double") throw UsageError("--precision must be float or double");
  c["precision"] = precision;

  json ds = data::to_json(data::dataset_preset(preset, scale));
  const bool user_ranges = file.contains("dataset") && file["dataset"].contains("ranges");
  if (file.contains("dataset")) ds.merge_patch(file["dataset"]);
  ds["preset"] = preset;
  ds["scale"] = scale;
  if (command == "gen" && flags.seed) ds["seed"] = *flags.seed;
  c["dataset"] = data::to_json(data::dataset_spec_from_json(ds));
  if (preset == "import" && !user_ranges) c["dataset"].erase("ranges");

  const std::string out = flags.out ? flags.out->string() : file.value("out_dir", std::string());
  if (out.empty()) throw UsageError("an output directory is required (--out DIR)");
  c["out_dir"] = out;
  std::string data_dir = flags.data ? flags.data->string() : file.value("data_dir", std::string());
  if (command == "gen") data_dir = out;
  if (data_dir.empty()) throw UsageError("a dataset directory is required (--data DIR)");
  c["data_dir"] = data_dir;
  if (flags.input || file.contains("input")) {
    c["input"] = flags.input ? flags.input->string() : file["input"].get<std::string>();
  }

  json m = file.value("model", json::object());
  if (flags.rk_stage) m["rk_stage"] = *flags.rk_stage;
  c["model"] = m;
  c["model_seed"] = flags.seed.value_or(file.value("model_seed", std::uint64_t{0}));

  auto plan = train::train_plan_from_json(file.value("train", json::object()), train::train_preset(preset, scale));
  if (flags.strategy) plan.strategy = *flags.strategy;
  if (flags.delta) plan.delta = *flags.delta;
  if (flags.gamma0) plan.gamma0 = *flags.gamma0;
  if (flags.lr) plan.lr = *flags.lr;
  if (flags.epochs) plan.max_epochs = *flags.epochs;
  if (flags.batch_size) plan.batch_size = *flags.batch_size;
  if (flags.seed) plan.seed = *flags.seed;
  try {
    plan.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  c["train"] = train::to_json(plan);

  const json fe = file.value("eval", json::object());
  json e;
  e["factors"] = flags.dt_factors ? json(*flags.dt_factors) : fe.value("factors", json::array({1, 5}));
  for (const auto& a : e["factors"]) {
    if (a.get<long long>() < 1) throw UsageError("--dt-factors entries must be positive integers");
  }
  const std::size_t F = c["dataset"]["time"]["F"].get<std::size_t>();
  json frames = json::array();
  for (auto j : default_error_frames(F)) frames.push_back({0, j});
  e["error_frames"] = fe.value("error_frames", frames);
  e["chunk"] = fe.value("chunk", 16);
  e["space"] = flags.metric_space.value_or(fe.value("space", std::string("model")));
  try {
    eval::metric_space_from_string(e["space"]);
  } catch (const std::invalid_argument& err) {
    throw UsageError(err.what());
  }
  if (flags.checkpoint || fe.contains("checkpoint")) {
    e["checkpoint"] = flags.checkpoint ? flags.checkpoint->string() : fe["checkpoint"].get<std::string>();
  }
  c["eval"] = e;

  const json fa = file.value("ablate", json::object());
  const std::string axis = flags.axis.value_or(fa.value("axis", std::string("rk-stage")));
  if (axis != "rk-stage" && axis != "l3") throw UsageError("--axis must be rk-stage or l3");
  json values = flags.values ? json(*flags.values)
                             : fa.value("values", axis == "rk-stage" ? json::array({1, 2, 3, 4})
                                                                     : json::array({0, 1}));
  if (axis == "rk-stage") {
    json ints = json::array();
    for (const auto& v : values) {
      const double q = v.get<double>();
      if (q != static_cast<int>(q) || q < 1 || q > 4) throw UsageError("rk-stage values must be 1..4");
      ints.push_back(static_cast<int>(q));
    }
    values = ints;
  }
  c["ablate"] = {{"axis", axis}, {"values", values}};
  return c;
}

int run_command(const json& config, bool resume, bool force, std::ostream& log) {
  const std::string cmd = config.at("command");
  const bool dbl = config.at("precision") == "double";
  if (cmd == "gen") return cmd_gen(config, force, log);
  if (cmd == "train") return dbl ? train_run<double>(config, resume, force, log)
                                 : train_run<float>(config, resume, force, log);
  if (cmd == "eval") return dbl ? eval_run<double>(config, force, log) : eval_run<float>(config, force, log);
  if (cmd == "ablate") return dbl ? ablate_run<double>(config, force, log) : ablate_run<float>(config, force, log);
  throw UsageError("unknown command '" + cmd + "'");
}

int main_entry(int argc, char** argv) {
  CLI::App app{"Latent neural PDE surrogate: data generation, training, evaluation and ablations"};
  app.require_subcommand(1);
  Flags flags;
  std::string config_path, dt_factors, values;
  std::optional<std::string> out, data, checkpoint, input;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file (flags override it)");
    sub->add_option("--preset", flags.preset, "advection-fixed | advection-param | burgers-fixed | burgers-param | molenkamp | import");
    sub->add_option("--scale", flags.scale, "desk | paper");
    sub->add_option("--seed", flags.seed, "dataset seed for gen; model and training seed otherwise");
    sub->add_option("--out", out, "output directory")->required();
    sub->add_flag("--force", flags.force, "overwrite existing outputs");
  };
  auto training = [&](CLI::App* sub) {
    sub->add_option("--data", data, "dataset directory written by gen");
    sub->add_option("--strategy", flags.strategy, "1 | 2")->check(CLI::IsMember({1, 2}));
    sub->add_option("--rk-stage", flags.rk_stage, "RK stage q")->check(CLI::Range(1, 4));
    sub->add_option("--delta", flags.delta, "weight of the intermediate-time loss")->check(CLI::NonNegativeNumber);
    sub->add_option("--gamma0", flags.gamma0, "autoregressive weight growth per epoch");
    sub->add_option("--lr", flags.lr, "initial learning rate");
    sub->add_option("--epochs", flags.epochs, "maximum epochs");
    sub->add_option("--batch-size", flags.batch_size, "batch size");
    sub->add_option("--precision", flags.precision, "float | double");
  };
  auto* gen = app.add_subcommand("gen", "generate train/val/test dataset files");
  common(gen);
  gen->add_option("--input", input, "trajectory file for the import preset");
  auto* tr = app.add_subcommand("train", "train a model on generated data");
  common(tr);
  training(tr);
  tr->add_flag("--resume", flags.resume, "continue from last.ckpt in the output directory");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  common(ev);
  ev->add_option("--data", data, "dataset directory written by gen");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file");
  ev->add_option("--dt-factors", dt_factors, "comma-separated time refinement factors, e.g. 1,5");
  ev->add_option("--precision", flags.precision, "float | double");
  ev->add_option("--metric-space", flags.metric_space, "model | physical");
  auto* ab = app.add_subcommand("ablate", "train and evaluate an ablation matrix");
  common(ab);
  training(ab);
  ab->add_option("--axis", flags.axis, "rk-stage | l3");
  ab->add_option("--values", values, "comma-separated axis values");
  ab->add_option("--dt-factors", dt_factors, "comma-separated time refinement factors");
  ab->add_option("--metric-space", flags.metric_space, "model | physical");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (out) flags.out = *out;
    if (data) flags.data = *data;
    if (checkpoint) flags.checkpoint = *checkpoint;
    if (input) flags.input = *input;
    if (!dt_factors.empty()) {
      std::vector<std::size_t> f;
      for (const auto& s : split_list(dt_factors)) {
        const long long v = std::stoll(s);
        if (v < 1) throw UsageError("--dt-factors entries must be positive integers");
        f.push_back(static_cast<std::size_t>(v));
      }
      flags.dt_factors = f;
    }
    if (!values.empty()) {
      std::vector<double> v;
      for (const auto& s : split_list(values)) v.push_back(std::stod(s));
      flags.values = v;
    }
    json file = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw UsageError("cannot read config file " + config_path);
      file = json::parse(in);
    }
    const std::string command = app.get_subcommands().front()->get_name();
    const auto config = resolve_config(command, file, flags);
    return run_command(config, flags.resume, flags.force, std::cerr);
  } catch (const UsageError& e) {
    std::cerr << "lnpde: error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "lnpde: error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace lnpde::cli
