#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace lnpde::model {

enum class Conditioning { concat, film };

/// Architecture of encoder, latent right-hand side and decoder.
///
/// Encoder: conv layers Fe/Ke, the first with stride 1 and the rest with
/// stride 2, then flatten and a linear map to the latent size.
/// Decoder: a linear map to Fd[0] channels at the coarsest extent, D stride-2
/// transposed convs Fd[j-1] -> Fd[j] with kernel Kd[j-1] (D = len(Fe) - 1),
/// stride-1 transposed convs for any remaining Fd entries, and a final
/// stride-1 transposed conv to m channels with kernel Kd.back().
struct ModelConfig {
  std::vector<std::size_t> extent{64};
  std::size_t channels = 1;
  std::size_t z = 0;
  std::vector<std::size_t> fe{8, 16, 32, 32, 32};
  std::vector<std::size_t> ke{5, 5, 5, 3, 3};
  std::vector<std::size_t> fd{32, 32, 16, 16, 8};
  std::vector<std::size_t> kd{4, 4, 4, 4, 5};
  std::size_t latent = 16;
  std::vector<std::size_t> hidden{64, 64};
  Conditioning conditioning = Conditioning::concat;
  int rk_stage = 4;
  /// Stability mitigation: drop every encoder bias (then encode(0) = 0).
  bool encoder_bias = true;
  bool encoder_final_gelu = false;
  bool decoder_first_gelu = false;
  double divergence_bound = 1e6;

  std::size_t spatial_dims() const { return extent.size(); }
  std::size_t doublings() const { return fe.empty() ? 0 : fe.size() - 1; }
  /// Spatial extent after the encoder convolutions.
  std::size_t coarse_extent(std::size_t axis) const;
  std::size_t field_size() const;
  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

/// concat for z <= 2, film otherwise.
Conditioning default_conditioning(std::size_t z);
std::string to_string(Conditioning c);
Conditioning conditioning_from_string(const std::string& s);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Architecture preset for a dataset preset at desk or paper scale.
ModelConfig model_preset(const std::string& dataset_preset, const std::string& scale,
                         std::vector<std::size_t> extent, std::size_t channels, std::size_t z);

}  // namespace lnpde::model
