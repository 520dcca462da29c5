#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "psrpn/errors.hpp"
#include "psrpn/tensor.hpp"

namespace psrpn {

// Portable tensor container: magic "PFT1", uint32 LE rank, uint32 LE dims,
// then raw float32 LE payload.

static_assert(std::endian::native == std::endian::little, "PFT1 io assumes a little-endian host");

inline void save_pft(const std::string& path, const std::vector<std::uint32_t>& dims,
                     const float* data, std::size_t count) {
  std::size_t prod = 1;
  for (auto d : dims) prod *= d;
  if (prod != count) throw IoError("save_pft: dims do not match payload size");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_pft: cannot open " + path);
  f.write("PFT1", 4);
  const std::uint32_t rank = static_cast<std::uint32_t>(dims.size());
  f.write(reinterpret_cast<const char*>(&rank), 4);
  for (std::uint32_t d : dims) f.write(reinterpret_cast<const char*>(&d), 4);
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
  if (!f) throw IoError("save_pft: write failed for " + path);
}

inline void save_pft(const std::string& path, const Tensor4f& t, int rank = 4) {
  if (rank < 1 || rank > 4) throw IoError("save_pft: rank must be 1..4");
  const int full[4] = {t.n, t.c, t.h, t.w};
  for (int i = 0; i < 4 - rank; ++i)
    if (full[i] != 1) throw IoError("save_pft: cannot drop non-unit leading dim");
  std::vector<std::uint32_t> dims;
  for (int i = 4 - rank; i < 4; ++i) dims.push_back(static_cast<std::uint32_t>(full[i]));
  save_pft(path, dims, t.data.data(), t.numel());
}

inline Tensor4f load_pft(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_pft: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "PFT1", 4) != 0) throw IoError("load_pft: bad magic in " + path);
  std::uint32_t rank = 0;
  f.read(reinterpret_cast<char*>(&rank), 4);
  if (!f || rank < 1 || rank > 4) throw IoError("load_pft: unsupported rank in " + path);
  std::uint32_t dims[4] = {1, 1, 1, 1};
  for (std::uint32_t i = 0; i < rank; ++i) {
    f.read(reinterpret_cast<char*>(&dims[4 - rank + i]), 4);
    if (!f) throw IoError("load_pft: truncated header in " + path);
  }
  Tensor4f t(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
             static_cast<int>(dims[3]));
  f.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.numel() * 4));
  if (!f) throw IoError("load_pft: truncated payload in " + path);
  return t;
}

}  // namespace psrpn
