#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lytnet/parameters.hpp"

namespace lytnet {

// LYTW container, all integers little-endian u32:
//   "LYTW" | version | count | { name_len | name | rank | extents... |
//   float32 data... } * count
inline constexpr char kWeightsMagic[4] = {'L', 'Y', 'T', 'W'};
inline constexpr std::uint32_t kWeightsVersion = 1;

class WeightsFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff),
                         static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff),
                         static_cast<char>((v >> 24) & 0xff)};
  os.write(bytes, 4);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char bytes[4];
  if (!is.read(reinterpret_cast<char*>(bytes), 4)) {
    throw WeightsFormatError(std::string("bad weights file: truncated ") + what);
  }
  return static_cast<std::uint32_t>(bytes[0]) |
         (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace detail

/// A parameter as stored on disk, independent of the in-memory scalar type.
struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

inline void write_weights(std::ostream& os,
                          const std::vector<StoredTensor>& tensors) {
  os.write(kWeightsMagic, 4);
  detail::put_u32(os, kWeightsVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) detail::put_u32(os, static_cast<std::uint32_t>(e));
    for (float v : t.data) detail::put_u32(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw std::runtime_error("failed writing weights");
}

inline std::vector<StoredTensor> read_weights(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kWeightsMagic, 4) != 0) {
    throw WeightsFormatError("bad weights file: missing LYTW magic");
  }
  const std::uint32_t version = detail::get_u32(is, "version");
  if (version != kWeightsVersion) {
    throw WeightsFormatError("bad weights file: unsupported version " +
                             std::to_string(version));
  }
  const std::uint32_t count = detail::get_u32(is, "parameter count");
  std::vector<StoredTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    const std::uint32_t len = detail::get_u32(is, "name length");
    if (len > (1u << 16)) throw WeightsFormatError("bad weights file: name too long");
    t.name.resize(len);
    if (!is.read(t.name.data(), len)) {
      throw WeightsFormatError("bad weights file: truncated name");
    }
    const std::uint32_t rank = detail::get_u32(is, "rank");
    if (rank > 8) throw WeightsFormatError("bad weights file: rank " + std::to_string(rank));
    std::size_t total = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(detail::get_u32(is, "extent"));
      total *= t.shape.back();
    }
    if (total > (std::size_t{1} << 30)) {
      throw WeightsFormatError("bad weights file: tensor too large");
    }
    t.data.resize(total);
    for (auto& v : t.data)
      v = std::bit_cast<float>(detail::get_u32(is, "tensor data"));
    out.push_back(std::move(t));
  }
  return out;
}

template <typename T>
std::vector<StoredTensor> to_stored(const Parameters<T>& params) {
  std::vector<StoredTensor> out;
  for (const auto& p : params) {
    StoredTensor t{p.name, p.value.shape(), {}};
    t.data.reserve(p.value.size());
    for (T v : p.value.data()) t.data.push_back(static_cast<float>(v));
    out.push_back(std::move(t));
  }
  return out;
}

/// Copies stored values into `params`. Names, order and shapes must match.
template <typename T>
void assign_stored(Parameters<T>& params,
                   const std::vector<StoredTensor>& stored) {
  if (stored.size() != params.size()) {
    throw WeightsFormatError("weights file holds " +
                             std::to_string(stored.size()) +
                             " tensors, network expects " +
                             std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < stored.size(); ++i) {
    auto& p = params[i];
    if (stored[i].name != p.name || stored[i].shape != p.value.shape()) {
      throw WeightsFormatError("weights entry " + std::to_string(i) + " '" +
                               stored[i].name + "' " +
                               shape_string(stored[i].shape) +
                               " does not match network parameter '" + p.name +
                               "' " + shape_string(p.value.shape()));
    }
    for (std::size_t j = 0; j < stored[i].data.size(); ++j)
      p.value[j] = static_cast<T>(stored[i].data[j]);
  }
}

template <typename T>
void save_weights(const std::string& path, const Parameters<T>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_weights(os, to_stored(params));
}

template <typename T>
void load_weights(const std::string& path, Parameters<T>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open weights file " + path);
  assign_stored(params, read_weights(is));
}

}  // namespace lytnet
