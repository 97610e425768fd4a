#include "lnpde/autodiff/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lnpde::ad {

namespace {

constexpr char kMagic[6] = {'L', 'N', 'P', 'D', 'E', '1'};

const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

DType dtype_from(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw std::runtime_error("unknown checkpoint dtype '" + s + "'");
}

}  // namespace

const Blob* Checkpoint::find(const std::string& name) const {
  for (const auto& b : blobs) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

const Blob& Checkpoint::at(const std::string& name) const {
  const Blob* b = find(name);
  if (!b) throw std::runtime_error("checkpoint has no entry '" + name + "'");
  return *b;
}

template <class T>
Blob to_blob(const std::string& name, const Tensor<T>& t) {
  Blob b{name, t.shape(), std::is_same_v<T, float> ? DType::f32 : DType::f64, {}};
  b.values.assign(t.data().begin(), t.data().end());
  return b;
}

template <class T>
void assign(const Blob& blob, Tensor<T>& t) {
  if (blob.shape != t.shape()) {
    throw ShapeError("checkpoint entry '" + blob.name + "' has shape " + to_string(blob.shape) +
                     ", expected " + to_string(t.shape()));
  }
  auto dst = t.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(blob.values[i]);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& b : ckpt.blobs) {
    if (numel(b.shape) != b.values.size()) {
      throw ShapeError("blob '" + b.name + "' size does not match its shape");
    }
    table.push_back({{"name", b.name}, {"shape", b.shape}, {"dtype", dtype_name(b.dtype)}});
  }
  header["blobs"] = table;
  const std::string text = header.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : ckpt.blobs) {
      if (b.dtype == DType::f32) {
        std::vector<float> v(b.values.begin(), b.values.end());
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
      } else {
        out.write(reinterpret_cast<const char*>(b.values.data()),
                  static_cast<std::streamsize>(b.values.size() * 8));
      }
    }
    out.flush();
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error(path.string() + " is not an LNPDE1 checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1ull << 30)) throw std::runtime_error("corrupt checkpoint header in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
  const auto header = nlohmann::json::parse(text);

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("blobs")) {
    Blob b;
    b.name = entry.at("name").get<std::string>();
    b.shape = entry.at("shape").get<Shape>();
    b.dtype = dtype_from(entry.at("dtype").get<std::string>());
    const std::size_t n = numel(b.shape);
    if (b.dtype == DType::f32) {
      std::vector<float> v(n);
      in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 4));
      b.values.assign(v.begin(), v.end());
    } else {
      b.values.resize(n);
      in.read(reinterpret_cast<char*>(b.values.data()), static_cast<std::streamsize>(n * 8));
    }
    if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
    ckpt.blobs.push_back(std::move(b));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("trailing bytes in checkpoint " + path.string());
  }
  return ckpt;
}

template Blob to_blob<float>(const std::string&, const Tensor<float>&);
template Blob to_blob<double>(const std::string&, const Tensor<double>&);
template void assign<float>(const Blob&, Tensor<float>&);
template void assign<double>(const Blob&, Tensor<double>&);

}  // namespace lnpde::ad
