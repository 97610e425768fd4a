#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lnpde/autodiff/tensor.hpp"

namespace lnpde::ad {

enum class DType { f32, f64 };

/// Named array stored in a checkpoint. Values are held as double in memory
/// and written with the declared width.
struct Blob {
  std::string name;
  Shape shape;
  DType dtype = DType::f32;
  std::vector<double> values;
};

/// "LNPDE1" container: magic, uint64 header length, JSON header (user
/// metadata plus the blob table), then the blobs as little-endian scalars.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Blob> blobs;

  const Blob* find(const std::string& name) const;
  const Blob& at(const std::string& name) const;
};

template <class T>
Blob to_blob(const std::string& name, const Tensor<T>& t);

/// Copies blob values into a leaf tensor of the same shape.
template <class T>
void assign(const Blob& blob, Tensor<T>& t);

/// Writes to a temporary file next to path and renames it into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lnpde::ad
