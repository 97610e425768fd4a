#include "lnpde/data/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace lnpde::data {

static_assert(std::endian::native == std::endian::little,
              "the dataset container assumes a little-endian host");

namespace {

constexpr char kMagic[6] = {'L', 'N', 'P', 'D', 'S', '1'};

Range span_of(std::span<const float> values) {
  Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (float v : values) {
    r.min = std::min(r.min, static_cast<double>(v));
    r.max = std::max(r.max, static_cast<double>(v));
  }
  return r;
}

void require_spread(const Range& r, const std::string& what) {
  if (!(r.max > r.min)) throw std::invalid_argument(what + ": max == min, cannot normalise");
}

nlohmann::json range_json(const Range& r) { return nlohmann::json::array({r.min, r.max}); }
Range range_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

std::size_t TrajectoryDataset::size() const {
  const auto per = trajectory_size();
  return per == 0 ? 0 : fields.size() / per;
}

std::span<const float> TrajectoryDataset::trajectory(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("trajectory index out of range");
  return std::span<const float>(fields).subspan(i * trajectory_size(), trajectory_size());
}

std::span<const float> TrajectoryDataset::frame(std::size_t i, std::size_t t) const {
  if (t >= frames()) throw std::out_of_range("time index out of range");
  return trajectory(i).subspan(t * frame_size(), frame_size());
}

std::span<const float> TrajectoryDataset::param(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("trajectory index out of range");
  return std::span<const float>(params).subspan(i * z, z);
}

void TrajectoryDataset::append(std::span<const double> trajectory, std::span<const double> mu) {
  if (trajectory.size() != trajectory_size()) {
    throw std::invalid_argument("trajectory length does not match dataset layout");
  }
  if (mu.size() != z) throw std::invalid_argument("parameter vector length does not match z");
  for (double v : trajectory) fields.push_back(static_cast<float>(v));
  for (double v : mu) params.push_back(static_cast<float>(v));
}

void TrajectoryDataset::validate() const {
  grid.validate();
  if (times.size() < 2) throw std::invalid_argument("dataset needs at least two time levels");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw std::invalid_argument("dataset times not increasing");
  }
  if (channels == 0) throw std::invalid_argument("dataset needs at least one channel");
  if (fields.size() % trajectory_size() != 0) {
    throw std::invalid_argument("field array length is not a whole number of trajectories");
  }
  if (params.size() != size() * z) throw std::invalid_argument("parameter array length mismatch");
  if (param_names.size() != z) throw std::invalid_argument("parameter names do not match z");
  for (float v : fields) {
    if (!std::isfinite(v)) throw std::invalid_argument("dataset contains non-finite field values");
  }
  for (float v : params) {
    if (!std::isfinite(v)) throw std::invalid_argument("dataset contains non-finite parameters");
  }
}

NormStats compute_norm_stats(const TrajectoryDataset& train, bool normalize_fields) {
  if (train.normalized) throw std::invalid_argument("norm stats need physical values");
  if (train.size() == 0) throw std::invalid_argument("norm stats need a non-empty training split");
  NormStats stats;
  stats.normalize_fields = normalize_fields;
  stats.field = span_of(train.fields);
  stats.params.assign(train.z, Range{});
  for (std::size_t k = 0; k < train.z; ++k) {
    Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i < train.size(); ++i) {
      r.min = std::min(r.min, static_cast<double>(train.params[i * train.z + k]));
      r.max = std::max(r.max, static_cast<double>(train.params[i * train.z + k]));
    }
    stats.params[k] = r;
  }
  return stats;
}

double normalize_value(double v, const Range& r) { return (v - r.min) / (r.max - r.min); }
double denormalize_value(double v, const Range& r) { return v * (r.max - r.min) + r.min; }

TrajectoryDataset normalize(const TrajectoryDataset& ds, const NormStats& stats) {
  if (ds.normalized) throw std::invalid_argument("dataset is already normalised");
  if (stats.params.size() != ds.z) throw std::invalid_argument("norm stats do not match z");
  TrajectoryDataset out = ds;
  out.norm = stats;
  out.normalized = true;
  if (stats.normalize_fields) {
    require_spread(stats.field, "field");
    for (float& v : out.fields) v = static_cast<float>(normalize_value(v, stats.field));
  }
  for (std::size_t k = 0; k < ds.z; ++k) require_spread(stats.params[k], "parameter " + std::to_string(k));
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < ds.z; ++k) {
      float& v = out.params[i * ds.z + k];
      v = static_cast<float>(normalize_value(v, stats.params[k]));
    }
  }
  return out;
}

TrajectoryDataset denormalize(const TrajectoryDataset& ds) {
  if (!ds.normalized) throw std::invalid_argument("dataset is not normalised");
  TrajectoryDataset out = ds;
  out.normalized = false;
  if (ds.norm.normalize_fields) {
    for (float& v : out.fields) v = static_cast<float>(denormalize_value(v, ds.norm.field));
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < ds.z; ++k) {
      float& v = out.params[i * ds.z + k];
      v = static_cast<float>(denormalize_value(v, ds.norm.params[k]));
    }
  }
  return out;
}

TrajectoryDataset subset(const TrajectoryDataset& ds, std::span<const std::size_t> indices) {
  TrajectoryDataset out = ds;
  out.fields.clear();
  out.params.clear();
  out.fields.reserve(indices.size() * ds.trajectory_size());
  for (auto i : indices) {
    const auto t = ds.trajectory(i);
    out.fields.insert(out.fields.end(), t.begin(), t.end());
    const auto p = ds.param(i);
    out.params.insert(out.params.end(), p.begin(), p.end());
  }
  return out;
}

Splits split(const TrajectoryDataset& ds, const SplitRanges& ranges, std::size_t group_size) {
  const std::size_t n = ds.size();
  const std::size_t group = group_size == 0 ? n : group_size;
  if (group == 0 || n % group != 0) {
    throw std::invalid_argument("dataset size is not a multiple of the group size");
  }
  const IndexRange parts[3] = {ranges.train, ranges.val, ranges.test};
  for (int a = 0; a < 3; ++a) {
    if (parts[a].begin > parts[a].end || parts[a].end > group) {
      throw std::invalid_argument("split range outside the available trajectories");
    }
    for (int b = a + 1; b < 3; ++b) {
      const bool disjoint = parts[a].end <= parts[b].begin || parts[b].end <= parts[a].begin ||
                            parts[a].size() == 0 || parts[b].size() == 0;
      if (!disjoint) throw std::invalid_argument("split ranges overlap");
    }
  }
  std::vector<std::size_t> idx[3];
  for (std::size_t g = 0; g < n / group; ++g) {
    for (int a = 0; a < 3; ++a) {
      for (std::size_t i = parts[a].begin; i < parts[a].end; ++i) idx[a].push_back(g * group + i);
    }
  }
  return {subset(ds, idx[0]), subset(ds, idx[1]), subset(ds, idx[2])};
}

SplitRanges proportional_ranges(std::size_t n, double train, double val) {
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train));
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val));
  if (n_train + n_val > n) throw std::invalid_argument("split fractions exceed 1");
  return {{0, n_train}, {n_train, n_train + n_val}, {n_train + n_val, n}};
}

nlohmann::json grid_to_json(const GridSpec& grid) {
  return {{"points", grid.points}, {"lo", grid.lo}, {"hi", grid.hi}, {"periodic", grid.periodic}};
}

GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g{j.at("points").get<std::vector<std::size_t>>(), j.at("lo").get<std::vector<double>>(),
             j.at("hi").get<std::vector<double>>(), j.at("periodic").get<bool>()};
  g.validate();
  return g;
}

void save_dataset(const TrajectoryDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  nlohmann::json header;
  header["grid"] = grid_to_json(ds.grid);
  header["times"] = ds.times;
  header["channels"] = ds.channels;
  header["z"] = ds.z;
  header["param_names"] = ds.param_names;
  header["trajectories"] = ds.size();
  header["normalized"] = ds.normalized;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& r : ds.norm.params) params.push_back(range_json(r));
  header["norm"] = {{"normalize_fields", ds.norm.normalize_fields},
                    {"field", range_json(ds.norm.field)},
                    {"params", params}};
  header["provenance"] = ds.provenance;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(ds.fields.data()),
            static_cast<std::streamsize>(ds.fields.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(ds.params.data()),
            static_cast<std::streamsize>(ds.params.size() * sizeof(float)));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

TrajectoryDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error(path.string() + " is not an LNPDS1 dataset");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1ull << 30)) throw std::runtime_error("corrupt dataset header in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);

  TrajectoryDataset ds;
  ds.grid = grid_from_json(header.at("grid"));
  ds.times = header.at("times").get<std::vector<double>>();
  ds.channels = header.at("channels").get<std::size_t>();
  ds.z = header.at("z").get<std::size_t>();
  ds.param_names = header.at("param_names").get<std::vector<std::string>>();
  ds.normalized = header.value("normalized", false);
  const auto& norm = header.at("norm");
  ds.norm.normalize_fields = norm.at("normalize_fields").get<bool>();
  ds.norm.field = range_from(norm.at("field"));
  for (const auto& r : norm.at("params")) ds.norm.params.push_back(range_from(r));
  ds.provenance = header.value("provenance", nlohmann::json::object());

  const auto n = header.at("trajectories").get<std::size_t>();
  ds.fields.resize(n * ds.trajectory_size());
  ds.params.resize(n * ds.z);
  in.read(reinterpret_cast<char*>(ds.fields.data()),
          static_cast<std::streamsize>(ds.fields.size() * sizeof(float)));
  in.read(reinterpret_cast<char*>(ds.params.data()),
          static_cast<std::streamsize>(ds.params.size() * sizeof(float)));
  if (!in) throw std::runtime_error("truncated dataset " + path.string());
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("trailing bytes in dataset " + path.string());
  }
  ds.validate();
  return ds;
}

}  // namespace lnpde::data
