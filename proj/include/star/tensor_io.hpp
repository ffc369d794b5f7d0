#pragma once

// Binary tensor container.
//
// Layout (little-endian):
//   char[4]  magic "STAR"
//   u32      version
//   u32      rank
//   u32      element bytes (4 = f32, 8 = f64)
//   u32      dims[rank]
//   data     prod(dims) elements, row-major
//
// Several containers may be concatenated in one stream.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "star/error.hpp"

namespace star::io {

static_assert(std::endian::native == std::endian::little, "tensor container assumes a little-endian host");

inline constexpr char kMagic[4] = {'S', 'T', 'A', 'R'};
inline constexpr std::uint32_t kVersion = 1;

struct RawTensor {
  std::vector<std::uint32_t> dims;
  std::uint32_t elem_bytes = 0;
  std::vector<char> bytes;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  template <typename T>
  std::vector<T> as() const {
    if (sizeof(T) != elem_bytes) {
      throw DataError("tensor: stored element size " + std::to_string(elem_bytes) + " does not match requested " +
                      std::to_string(sizeof(T)));
    }
    std::vector<T> out(count());
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
  }
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline std::uint32_t get_u32(std::istream& is, const std::string& where) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw DataError(where + ": truncated tensor header");
  return v;
}

}  // namespace detail

template <typename T>
void write_tensor(std::ostream& os, const std::vector<std::uint32_t>& dims, const T* data) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  os.write(kMagic, 4);
  detail::put_u32(os, kVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(dims.size()));
  detail::put_u32(os, sizeof(T));
  std::size_t n = 1;
  for (auto d : dims) {
    detail::put_u32(os, d);
    n *= d;
  }
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
  if (!os) throw DataError("tensor: write failed");
}

// `where` names the source (usually a path) in error messages.
inline RawTensor read_tensor(std::istream& is, const std::string& where) {
  char magic[4];
  if (!is.read(magic, 4)) throw DataError(where + ": truncated tensor header");
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError(where + ": bad magic, not a tensor container");
  const std::uint32_t version = detail::get_u32(is, where);
  if (version != kVersion) throw DataError(where + ": unsupported tensor version " + std::to_string(version));
  RawTensor t;
  const std::uint32_t rank = detail::get_u32(is, where);
  if (rank > 16) throw DataError(where + ": implausible tensor rank " + std::to_string(rank));
  t.elem_bytes = detail::get_u32(is, where);
  if (t.elem_bytes != 4 && t.elem_bytes != 8) throw DataError(where + ": unsupported element size");
  for (std::uint32_t r = 0; r < rank; ++r) t.dims.push_back(detail::get_u32(is, where));
  t.bytes.resize(t.count() * t.elem_bytes);
  if (!is.read(t.bytes.data(), static_cast<std::streamsize>(t.bytes.size()))) {
    throw DataError(where + ": truncated tensor data");
  }
  return t;
}

template <typename T>
void write_tensor_file(const std::filesystem::path& path, const std::vector<std::uint32_t>& dims, const T* data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  write_tensor(os, dims, data);
}

inline RawTensor read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path.string() + ": cannot open");
  return read_tensor(is, path.string());
}

}  // namespace star::io
