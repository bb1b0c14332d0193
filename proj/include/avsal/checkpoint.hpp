#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "avsal/module.hpp"

namespace avsal {

/// Binary layout (little-endian):
///   "AVSALCKP" u32 version
///   u64 len, manifest text
///   u64 count, then per tensor: u32 len, name, u8 dtype (0 f32, 1 f64),
///     u32 ndim, u64 dims[ndim], row-major data
///   u64 count, then per buffer: u32 len, name, u8 dtype, u64 n, data
inline constexpr std::array<char, 8> kCheckpointMagic{'A', 'V', 'S', 'A', 'L', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::kF32 : DType::kF64;
}

struct StoredTensor {
  std::string name;
  DType dtype = DType::kF64;
  Shape shape;
  std::vector<double> values;  // widened; f32 -> f64 -> f32 is exact
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string manifest;
  std::vector<StoredTensor> params, buffers;
};

namespace detail {

class Writer {
 public:
  explicit Writer(const std::string& path) : f_(path, std::ios::binary), path_(path) {
    if (!f_) throw IoError("cannot write '" + path + "'");
  }
  template <class V>
  void pod(const V& v) {
    f_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* p, std::size_t n) { f_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void name(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void finish() {
    f_.flush();
    if (!f_) throw IoError("write failed for '" + path_ + "'");
  }

 private:
  std::ofstream f_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : f_(path, std::ios::binary), path_(path) {
    if (!f_) throw IoError("cannot read '" + path + "'");
  }
  template <class V>
  V pod() {
    V v{};
    read(&v, sizeof v);
    return v;
  }
  void read(void* p, std::size_t n) {
    f_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!f_) throw IoError("'" + path_ + "': truncated checkpoint");
  }
  std::string text(std::size_t n) {
    if (n > (1u << 30)) throw IoError("'" + path_ + "': corrupt length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  std::vector<double> values(DType dt, std::size_t n) {
    if (n > (std::size_t{1} << 32)) throw IoError("'" + path_ + "': corrupt length");
    std::vector<double> out(n);
    if (dt == DType::kF64) {
      read(out.data(), n * sizeof(double));
    } else if (dt == DType::kF32) {
      std::vector<float> tmp(n);
      read(tmp.data(), n * sizeof(float));
      std::copy(tmp.begin(), tmp.end(), out.begin());
    } else {
      throw IoError("'" + path_ + "': unknown dtype");
    }
    return out;
  }
  bool at_end() { return f_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream f_;
  std::string path_;
};

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, Module<T>& model, const std::string& manifest) {
  detail::Writer w(path);
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.pod(kCheckpointVersion);
  w.pod(static_cast<std::uint64_t>(manifest.size()));
  w.bytes(manifest.data(), manifest.size());
  const auto params = model.named_parameters();
  w.pod(static_cast<std::uint64_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.name(name);
    w.pod(dtype_of<T>());
    w.pod(static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) w.pod(static_cast<std::uint64_t>(d));
    w.bytes(t.data().data(), t.numel() * sizeof(T));
  }
  const auto buffers = model.named_buffers();
  w.pod(static_cast<std::uint64_t>(buffers.size()));
  for (const auto& [name, b] : buffers) {
    w.name(name);
    w.pod(dtype_of<T>());
    w.pod(static_cast<std::uint64_t>(b->size()));
    w.bytes(b->data(), b->size() * sizeof(T));
  }
  w.finish();
}

inline Checkpoint read_checkpoint(const std::string& path) {
  detail::Reader r(path);
  std::array<char, 8> magic{};
  r.read(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw IoError("'" + path + "' is not a checkpoint");
  Checkpoint ck;
  ck.version = r.pod<std::uint32_t>();
  if (ck.version != kCheckpointVersion) {
    throw IoError("'" + path + "': unsupported checkpoint version " + std::to_string(ck.version));
  }
  ck.manifest = r.text(r.pod<std::uint64_t>());
  const auto np = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < np; ++i) {
    StoredTensor t;
    t.name = r.text(r.pod<std::uint32_t>());
    t.dtype = r.pod<DType>();
    const auto nd = r.pod<std::uint32_t>();
    if (nd > 8) throw IoError("'" + path + "': corrupt rank");
    for (std::uint32_t k = 0; k < nd; ++k) t.shape.push_back(static_cast<std::size_t>(r.pod<std::uint64_t>()));
    t.values = r.values(t.dtype, numel_of(t.shape));
    ck.params.push_back(std::move(t));
  }
  const auto nb = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < nb; ++i) {
    StoredTensor t;
    t.name = r.text(r.pod<std::uint32_t>());
    t.dtype = r.pod<DType>();
    const auto n = static_cast<std::size_t>(r.pod<std::uint64_t>());
    t.shape = {n};
    t.values = r.values(t.dtype, n);
    ck.buffers.push_back(std::move(t));
  }
  if (!r.at_end()) throw IoError("'" + path + "': trailing bytes");
  return ck;
}

/// Copies stored values into `model`. Names, order and shapes must match.
template <class T>
void load_parameters(Module<T>& model, const Checkpoint& ck) {
  auto params = model.named_parameters();
  if (params.size() != ck.params.size()) {
    throw ConfigError("checkpoint", "parameter count " + std::to_string(ck.params.size()) +
                                        " does not match model (" + std::to_string(params.size()) + ")");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    const auto& s = ck.params[i];
    if (s.name != name) throw ConfigError("checkpoint", "expected parameter '" + name + "', found '" + s.name + "'");
    if (s.shape != t.shape()) {
      throw ConfigError("checkpoint", "'" + name + "' has shape " + to_string(s.shape) + ", model expects " +
                                          to_string(t.shape()));
    }
    auto d = t.mutable_data();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<T>(s.values[k]);
  }
  auto buffers = model.named_buffers();
  if (buffers.size() != ck.buffers.size()) throw ConfigError("checkpoint", "buffer count mismatch");
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    auto& [name, b] = buffers[i];
    const auto& s = ck.buffers[i];
    if (s.name != name || s.values.size() != b->size()) {
      throw ConfigError("checkpoint", "buffer '" + name + "' does not match '" + s.name + "'");
    }
    for (std::size_t k = 0; k < b->size(); ++k) (*b)[k] = static_cast<T>(s.values[k]);
  }
}

}  // namespace avsal
