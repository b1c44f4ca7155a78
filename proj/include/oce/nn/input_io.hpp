#pragma once

// Resampled network inputs on disk:
//   "OCEN" | version u16 | depth u32 | lateral u32 | time u32 | provenance | payload f32

#include <array>
#include <cstring>
#include <filesystem>

#include "oce/binary_io.hpp"
#include "oce/nn/resize.hpp"

namespace oce::nn {

inline constexpr std::array<char, 4> kNetInputMagic = {'O', 'C', 'E', 'N'};
inline constexpr std::uint16_t kNetInputVersion = 1;

inline void write_net_input(const NetInput& x, const std::string& provenance, const std::filesystem::path& path) {
  io::Writer w;
  w.put_bytes(kNetInputMagic.data(), 4);
  w.put(kNetInputVersion);
  w.put(static_cast<std::uint32_t>(x.depth));
  w.put(static_cast<std::uint32_t>(x.lateral));
  w.put(static_cast<std::uint32_t>(x.time));
  w.put_string(provenance);
  io::write_file(path, w.bytes(), x.data.data(), x.data.size() * sizeof(float));
}

inline NetInput read_net_input(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kNetInputMagic.data(), 4) != 0)
    throw ParseError("net input: bad magic in " + path.string());
  io::Reader r(bytes.data(), bytes.size(), "net input");
  r.get<std::uint32_t>();
  const auto version = r.get<std::uint16_t>();
  if (version != kNetInputVersion) throw ParseError("net input: unsupported version " + std::to_string(version));
  NetInput x;
  x.depth = static_cast<int>(r.get<std::uint32_t>());
  x.lateral = static_cast<int>(r.get<std::uint32_t>());
  x.time = static_cast<int>(r.get<std::uint32_t>());
  r.get_string();
  const std::size_t n = static_cast<std::size_t>(x.depth) * x.lateral * x.time;
  if (r.remaining() != n * sizeof(float)) throw ParseError("net input: payload size mismatch in " + path.string());
  x.data.resize(n);
  r.get_bytes(x.data.data(), n * sizeof(float));
  return x;
}

}  // namespace oce::nn
