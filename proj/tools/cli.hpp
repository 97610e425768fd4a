#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace lnpde::cli {

/// Raised for user errors (bad flags, existing outputs, mismatched inputs).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Command-line values; unset fields leave the config file or preset value.
struct Flags {
  std::optional<std::string> preset, scale, precision, axis, metric_space;
  std::optional<std::uint64_t> seed;
  std::optional<int> strategy, rk_stage;
  std::optional<double> delta, gamma0, lr;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<std::vector<std::size_t>> dt_factors;
  std::optional<std::vector<double>> values;
  std::optional<std::filesystem::path> out, data, checkpoint, input;
  bool resume = false;
  bool force = false;
};

/// Preset defaults, then the config file, then flags. The model section
/// stays partial until a command binds it to the dataset grid.
nlohmann::json resolve_config(const std::string& command, const nlohmann::json& file,
                              const Flags& flags);

/// Runs one command on a resolved config; returns the process exit status.
int run_command(const nlohmann::json& config, bool resume, bool force, std::ostream& log);

/// Parses argv, runs the command and maps errors to a nonzero status.
int main_entry(int argc, char** argv);

}  // namespace lnpde::cli
