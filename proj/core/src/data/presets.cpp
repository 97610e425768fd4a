#include "lnpde/data/presets.hpp"

#include <random>
#include <stdexcept>

#include "lnpde/data/generators.hpp"
#include "lnpde/util/parallel.hpp"

namespace lnpde::data {

namespace {

const std::vector<std::string> kPresets = {"advection-fixed", "advection-param", "burgers-fixed",
                                           "burgers-param", "molenkamp", "import"};

std::string generator_of(const std::string& preset) {
  if (preset.rfind("advection", 0) == 0) return "advection";
  if (preset.rfind("burgers", 0) == 0) return "burgers";
  if (preset == "molenkamp") return "molenkamp";
  return "import";
}

MolenkampParams sample_molenkamp(std::mt19937_64& rng) {
  auto u = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  return {u(1, 20), u(2, 4), u(1, 5), u(-0.1, 0.1), u(-0.1, 0.1)};
}

TrajectoryDataset empty_like(const DatasetSpec& spec) {
  TrajectoryDataset ds;
  ds.grid = spec.grid;
  ds.times = spec.time.times();
  ds.channels = 1;
  const auto gen = generator_of(spec.preset);
  if (gen == "molenkamp") {
    ds.z = 5;
    ds.param_names = {"lambda1", "lambda2", "lambda3", "lambda4", "lambda5"};
  } else if (!spec.train_params.empty()) {
    ds.z = 1;
    ds.param_names = {gen == "advection" ? "zeta" : "nu"};
  }
  ds.provenance = {{"generator", gen},
                   {"preset", spec.preset},
                   {"scale", spec.scale},
                   {"seed", spec.seed},
                   {"zeta", spec.zeta},
                   {"nu", spec.nu},
                   {"oversample", spec.oversample},
                   {"n_waves", spec.n_waves},
                   {"max_mode", spec.max_mode}};
  return ds;
}

struct Recipe {
  std::uint64_t seed;
  double coefficient;  // zeta or nu
  bool parametric;
};

// Builds one dataset from recipes, computing trajectories in parallel but
// appending them in recipe order.
TrajectoryDataset build(const DatasetSpec& spec, const std::vector<Recipe>& recipes) {
  auto ds = empty_like(spec);
  const auto gen = generator_of(spec.preset);
  const auto times = ds.times;
  std::vector<std::vector<double>> traj(recipes.size()), mus(recipes.size());
  parallel_for(recipes.size(), [&](std::size_t r) {
    const auto& recipe = recipes[r];
    if (gen == "molenkamp") {
      std::mt19937_64 rng(recipe.seed);
      const auto lambda = sample_molenkamp(rng);
      traj[r] = gen_molenkamp(spec.grid, times, lambda);
      mus[r].assign(lambda.begin(), lambda.end());
      return;
    }
    const auto ic = sample_sinusoidal_ic(spec.grid, spec.n_waves, recipe.seed, spec.max_mode);
    if (gen == "advection") {
      traj[r] = gen_advection(spec.grid, times, recipe.coefficient, ic);
    } else {
      BurgersOptions options;
      options.oversample = spec.oversample;
      traj[r] = gen_burgers(spec.grid, times, recipe.coefficient, ic, options);
    }
    if (recipe.parametric) mus[r] = {recipe.coefficient};
  });
  for (std::size_t r = 0; r < recipes.size(); ++r) ds.append(traj[r], mus[r]);
  return ds;
}

}  // namespace

std::vector<std::string> dataset_presets() { return kPresets; }

DatasetSpec dataset_preset(const std::string& name, const std::string& scale) {
  if (scale != "desk" && scale != "paper") throw std::invalid_argument("scale must be desk or paper");
  const bool paper = scale == "paper";
  DatasetSpec s;
  s.preset = name;
  s.scale = scale;
  s.time = {0.0, 0.05, 40};
  const std::size_t n1 = paper ? 256 : 64;
  s.grid = GridSpec::line(n1);
  if (name == "advection-fixed") {
    s.zeta = paper ? 0.1 : 0.7;
    s.per_param = paper ? 10000 : 640;
    s.ranges = proportional_ranges(s.per_param);
  } else if (name == "advection-param") {
    s.train_params = {0.2, 0.4, 0.7, 2.0, 4.0};
    s.test_params = {0.1, 1.0, 7.0};
    s.per_param = paper ? 10000 : 80;
    s.ranges = proportional_ranges(s.per_param);
    s.test_param_trajectories = paper ? 1000 : 8;
    s.normalize_fields = false;
  } else if (name == "burgers-fixed") {
    s.nu = paper ? 0.001 : 0.1;
    s.per_param = paper ? 10000 : 640;
    s.ranges = proportional_ranges(s.per_param);
    s.oversample = paper ? 8 : 4;
    s.normalize_fields = false;
  } else if (name == "burgers-param") {
    s.train_params = {0.002, 0.004, 0.02, 0.04, 0.2, 0.4, 2.0};
    s.test_params = {0.001, 0.01, 0.1, 1.0, 4.0};
    s.per_param = paper ? 10000 : 80;
    s.ranges = proportional_ranges(s.per_param);
    s.test_param_trajectories = paper ? 1000 : 8;
    s.oversample = paper ? 8 : 2;
    s.normalize_fields = false;
  } else if (name == "molenkamp") {
    const std::size_t n2 = paper ? 128 : 32;
    s.grid = GridSpec::square(n2, -1.0, 1.0, false);
    s.time = {0.0, 0.05, 20};
    s.per_param = paper ? 5300 : 530;
    s.ranges = paper ? SplitRanges{{0, 5000}, {5000, 5200}, {5200, 5300}}
                     : SplitRanges{{0, 500}, {500, 520}, {520, 530}};
  } else if (name == "import") {
    s.per_param = 0;
  } else {
    throw std::invalid_argument("unknown dataset preset '" + name + "'");
  }
  return s;
}

nlohmann::json to_json(const DatasetSpec& s) {
  auto range = [](const IndexRange& r) { return nlohmann::json::array({r.begin, r.end}); };
  return {{"preset", s.preset},
          {"scale", s.scale},
          {"seed", s.seed},
          {"grid", grid_to_json(s.grid)},
          {"time", {{"t0", s.time.t0}, {"dt", s.time.dt}, {"F", s.time.F}}},
          {"per_param", s.per_param},
          {"ranges", {{"train", range(s.ranges.train)}, {"val", range(s.ranges.val)},
                      {"test", range(s.ranges.test)}}},
          {"train_params", s.train_params},
          {"test_params", s.test_params},
          {"test_param_trajectories", s.test_param_trajectories},
          {"zeta", s.zeta},
          {"nu", s.nu},
          {"n_waves", s.n_waves},
          {"max_mode", s.max_mode},
          {"oversample", s.oversample},
          {"normalize_fields", s.normalize_fields}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  DatasetSpec s = dataset_preset(j.value("preset", std::string("advection-fixed")),
                                 j.value("scale", std::string("desk")));
  auto range = [](const nlohmann::json& r) {
    return IndexRange{r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()};
  };
  if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("grid")) s.grid = grid_from_json(j["grid"]);
  if (j.contains("time")) {
    const auto& t = j["time"];
    s.time = {t.value("t0", s.time.t0), t.value("dt", s.time.dt), t.value("F", s.time.F)};
  }
  if (j.contains("per_param")) s.per_param = j["per_param"].get<std::size_t>();
  if (j.contains("ranges")) {
    const auto& r = j["ranges"];
    s.ranges = {range(r.at("train")), range(r.at("val")), range(r.at("test"))};
  }
  if (j.contains("train_params")) s.train_params = j["train_params"].get<std::vector<double>>();
  if (j.contains("test_params")) s.test_params = j["test_params"].get<std::vector<double>>();
  s.test_param_trajectories = j.value("test_param_trajectories", s.test_param_trajectories);
  s.zeta = j.value("zeta", s.zeta);
  s.nu = j.value("nu", s.nu);
  s.n_waves = j.value("n_waves", s.n_waves);
  s.max_mode = j.value("max_mode", s.max_mode);
  s.oversample = j.value("oversample", s.oversample);
  s.normalize_fields = j.value("normalize_fields", s.normalize_fields);
  return s;
}

Splits generate_dataset(const DatasetSpec& spec) {
  if (spec.preset == "import") throw std::invalid_argument("the import preset reads a file instead");
  spec.time.validate();
  spec.grid.validate();
  std::mt19937_64 master(spec.seed);
  const bool parametric = !spec.train_params.empty();
  std::vector<Recipe> main, extra;
  const std::vector<double> coefficients =
      parametric ? spec.train_params
                 : std::vector<double>{generator_of(spec.preset) == "burgers" ? spec.nu : spec.zeta};
  for (double c : coefficients) {
    for (std::size_t i = 0; i < spec.per_param; ++i) main.push_back({master(), c, parametric});
  }
  for (double c : spec.test_params) {
    for (std::size_t i = 0; i < spec.test_param_trajectories; ++i) extra.push_back({master(), c, true});
  }
  auto all = build(spec, main);
  Splits s = split(all, spec.ranges, parametric ? spec.per_param : 0);
  if (!extra.empty()) {
    const auto unseen = build(spec, extra);
    s.test.fields.insert(s.test.fields.end(), unseen.fields.begin(), unseen.fields.end());
    s.test.params.insert(s.test.params.end(), unseen.params.begin(), unseen.params.end());
  }
  const auto stats = compute_norm_stats(s.train, spec.normalize_fields);
  for (auto* part : {&s.train, &s.val, &s.test}) {
    part->norm = stats;
    part->validate();
  }
  s.train.provenance["split"] = "train";
  s.val.provenance["split"] = "val";
  s.test.provenance["split"] = "test";
  return s;
}

Splits prepare_imported(TrajectoryDataset ds, const SplitRanges& ranges, bool normalize_fields) {
  if (ds.normalized) ds = denormalize(ds);
  ds.validate();
  if (!ds.provenance.contains("generator")) ds.provenance["generator"] = "import";
  Splits s = split(ds, ranges);
  const auto stats = compute_norm_stats(s.train, normalize_fields);
  for (auto* part : {&s.train, &s.val, &s.test}) part->norm = stats;
  return s;
}

bool can_regenerate(const TrajectoryDataset& ds) {
  const auto gen = ds.provenance.value("generator", std::string("import"));
  return gen == "advection" || gen == "burgers" || gen == "molenkamp";
}

std::vector<double> regenerate_trajectory(const TrajectoryDataset& ds, std::size_t i,
                                          std::span<const double> times) {
  if (!can_regenerate(ds)) {
    throw std::invalid_argument("ground truth at new times is unavailable for imported data");
  }
  const auto gen = ds.provenance.at("generator").get<std::string>();
  std::vector<double> mu(ds.z);
  for (std::size_t k = 0; k < ds.z; ++k) {
    const double v = ds.param(i)[k];
    mu[k] = ds.normalized ? denormalize_value(v, ds.norm.params[k]) : v;
  }
  if (gen == "molenkamp") {
    MolenkampParams lambda{};
    std::copy(mu.begin(), mu.end(), lambda.begin());
    return gen_molenkamp(ds.grid, times, lambda);
  }
  std::vector<double> ic(ds.frame_size());
  const auto first = ds.frame(i, 0);
  for (std::size_t k = 0; k < ic.size(); ++k) {
    const double v = first[k];
    ic[k] = ds.normalized && ds.norm.normalize_fields ? denormalize_value(v, ds.norm.field) : v;
  }
  if (gen == "advection") {
    const double zeta = ds.z == 1 ? mu[0] : ds.provenance.at("zeta").get<double>();
    std::vector<double> elapsed(times.begin(), times.end());
    for (double& t : elapsed) t -= ds.times.front();
    return gen_advection(ds.grid, elapsed, zeta, ic);
  }
  const double nu = ds.z == 1 ? mu[0] : ds.provenance.at("nu").get<double>();
  BurgersOptions options;
  options.oversample = ds.provenance.value("oversample", std::size_t{8});
  return gen_burgers(ds.grid, times, nu, ic, options);
}

}  // namespace lnpde::data
