#include "lnpde/model/config.hpp"

#include <stdexcept>

namespace lnpde::model {

std::size_t ModelConfig::coarse_extent(std::size_t axis) const {
  return extent.at(axis) >> doublings();
}

std::size_t ModelConfig::field_size() const {
  std::size_t n = channels;
  for (auto e : extent) n *= e;
  return n;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (extent.empty() || extent.size() > 2) fail("1 or 2 spatial dimensions are supported");
  if (channels == 0) fail("channels must be positive");
  if (latent == 0) fail("latent size must be positive");
  if (fe.empty() || fe.size() != ke.size()) fail("Fe and Ke must be non-empty and equally long");
  if (fd.size() != kd.size()) fail("Fd and Kd must be equally long");
  const std::size_t d = doublings();
  if (fd.size() < d + 1) fail("Fd needs at least len(Fe) entries");
  for (auto e : extent) {
    if (e % (std::size_t{1} << d) != 0 || (e >> d) == 0) {
      fail("extent " + std::to_string(e) + " is not divisible by 2^" + std::to_string(d));
    }
  }
  for (auto k : ke) {
    if (k % 2 == 0) fail("encoder kernels must be odd");
  }
  for (std::size_t j = d; j < kd.size(); ++j) {
    if (kd[j] % 2 == 0) fail("stride-1 decoder kernels must be odd");
  }
  for (std::size_t j = 0; j < d; ++j) {
    if (kd[j] < 2) fail("stride-2 decoder kernels must be >= 2");
  }
  for (auto f : fe) {
    if (f == 0) fail("filter counts must be positive");
  }
  for (auto f : fd) {
    if (f == 0) fail("filter counts must be positive");
  }
  for (auto h : hidden) {
    if (h == 0) fail("hidden widths must be positive");
  }
  if (rk_stage < 1 || rk_stage > 4) fail("RK stage must be in 1..4");
  if (conditioning == Conditioning::film && z == 0) fail("film conditioning needs z >= 1");
  if (!(divergence_bound > 0)) fail("divergence bound must be positive");
}

Conditioning default_conditioning(std::size_t z) {
  return z <= 2 ? Conditioning::concat : Conditioning::film;
}

std::string to_string(Conditioning c) { return c == Conditioning::concat ? "concat" : "film"; }

Conditioning conditioning_from_string(const std::string& s) {
  if (s == "concat") return Conditioning::concat;
  if (s == "film") return Conditioning::film;
  throw std::invalid_argument("conditioning must be concat or film, got '" + s + "'");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"extent", c.extent},
          {"channels", c.channels},
          {"z", c.z},
          {"fe", c.fe},
          {"ke", c.ke},
          {"fd", c.fd},
          {"kd", c.kd},
          {"latent", c.latent},
          {"hidden", c.hidden},
          {"conditioning", to_string(c.conditioning)},
          {"rk_stage", c.rk_stage},
          {"encoder_bias", c.encoder_bias},
          {"encoder_final_gelu", c.encoder_final_gelu},
          {"decoder_first_gelu", c.decoder_first_gelu},
          {"divergence_bound", c.divergence_bound}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.extent = j.value("extent", c.extent);
  c.channels = j.value("channels", c.channels);
  c.z = j.value("z", c.z);
  c.fe = j.value("fe", c.fe);
  c.ke = j.value("ke", c.ke);
  c.fd = j.value("fd", c.fd);
  c.kd = j.value("kd", c.kd);
  c.latent = j.value("latent", c.latent);
  c.hidden = j.value("hidden", c.hidden);
  c.conditioning = j.contains("conditioning")
                       ? conditioning_from_string(j["conditioning"].get<std::string>())
                       : default_conditioning(c.z);
  c.rk_stage = j.value("rk_stage", c.rk_stage);
  c.encoder_bias = j.value("encoder_bias", c.encoder_bias);
  c.encoder_final_gelu = j.value("encoder_final_gelu", c.encoder_final_gelu);
  c.decoder_first_gelu = j.value("decoder_first_gelu", c.decoder_first_gelu);
  c.divergence_bound = j.value("divergence_bound", c.divergence_bound);
  c.validate();
  return c;
}

ModelConfig model_preset(const std::string& preset, const std::string& scale,
                         std::vector<std::size_t> extent, std::size_t channels, std::size_t z) {
  if (scale != "desk" && scale != "paper") throw std::invalid_argument("scale must be desk or paper");
  ModelConfig c;
  c.extent = std::move(extent);
  c.channels = channels;
  c.z = z;
  c.conditioning = default_conditioning(z);
  const bool paper = scale == "paper";
  if (paper) {
    const std::vector<std::size_t> k_small{5, 5, 3, 3, 3, 3, 3};
    c.fe = {8, 16, 32, 32, 32, 32, 32};
    c.ke = k_small;
    c.fd = {32, 32, 32, 32, 32, 16, 1, 1};
    c.kd = {4, 4, 4, 4, 4, 4, 3, 3};
    c.latent = 30;
    c.hidden = {200, 200, 200, 200};
    if (preset == "advection-fixed") {
      c.fe = {8, 16, 32, 64, 64, 64, 64};
      c.ke = {5, 5, 5, 5, 5, 5, 5};
      c.fd = {64, 64, 64, 64, 32, 16, 1};
      c.kd = {6, 6, 6, 6, 6, 6, 5};
      c.hidden = {50, 50};
    } else if (preset == "advection-param") {
      c.fd = {32, 32, 32, 32, 32, 16, 1};
      c.kd = {4, 4, 4, 4, 4, 4, 3};
    } else if (preset == "burgers-param") {
      c.fe = {8, 32, 32, 32, 32, 32, 32};
    } else if (preset == "molenkamp") {
      c.hidden = {100, 100};
      c.latent = 50;
    } else if (preset == "import") {
      c.fe = {8, 32, 32, 32, 32, 32, 32};
      c.hidden = {50, 50};
      c.latent = 20;
    } else if (preset != "burgers-fixed") {
      throw std::invalid_argument("unknown preset '" + preset + "'");
    }
  } else {
    c.hidden = {64, 64};
    c.latent = 16;
    if (preset == "advection-fixed" || preset == "advection-param") {
      c.fe = {8, 16, 32, 32, 32};
      c.ke = {5, 5, 5, 3, 3};
      c.fd = {32, 32, 16, 16, 8};
      c.kd = {4, 4, 4, 4, 5};
    } else if (preset == "burgers-fixed" || preset == "burgers-param") {
      c.fe = {8, 16, 32, 32, 32};
      c.ke = {5, 5, 3, 3, 3};
      c.fd = {32, 32, 16, 16, 8, 8};
      c.kd = {4, 4, 4, 4, 3, 3};
    } else if (preset == "molenkamp") {
      c.fe = {8, 16, 16, 16};
      c.ke = {5, 5, 3, 3};
      c.fd = {16, 16, 16, 8};
      c.kd = {4, 4, 4, 3};
    } else if (preset == "import") {
      // Four doublings when the grid allows it, fewer on small grids.
      std::size_t d = 4;
      for (auto e : c.extent) {
        while (d > 0 && (e % (std::size_t{1} << d) != 0 || (e >> d) < 2)) --d;
      }
      c.fe = {8};
      c.ke = {5};
      c.fd = {16};
      c.kd = {};
      for (std::size_t j = 0; j < d; ++j) {
        c.fe.push_back(16);
        c.ke.push_back(3);
        c.fd.push_back(16);
        c.kd.push_back(4);
      }
      c.kd.push_back(3);
    } else {
      throw std::invalid_argument("unknown preset '" + preset + "'");
    }
  }
  c.validate();
  return c;
}

}  // namespace lnpde::model
