#pragma once

// Containers for derived data, sharing the recording container conventions:
//
//   "OCEP" | version u16 | mode u8 | depth u32 | lateral u32 | time u32
//          | surface_index i32 | turning_offset i32 | provenance (u16 length + bytes)
//          | payload depth x lateral x time f32
//   "OCES" | version u16 | lateral u32 | time u32 | lateral_pitch_mm f64
//          | frame_period_s f64 | provenance | payload lateral x time f32

#include <array>
#include <cstring>
#include <filesystem>

#include "oce/binary_io.hpp"
#include "oce/preproc.hpp"

namespace oce {

inline constexpr std::array<char, 4> kSequenceMagic = {'O', 'C', 'E', 'P'};
inline constexpr std::array<char, 4> kStMapMagic = {'O', 'C', 'E', 'S'};
inline constexpr std::uint16_t kDerivedVersion = 1;

namespace detail {

inline io::Reader open_container(const std::vector<std::uint8_t>& bytes, const std::array<char, 4>& magic,
                                 const std::string& what) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), magic.data(), 4) != 0) throw ParseError(what + ": bad magic");
  io::Reader r(bytes.data(), bytes.size(), what);
  r.get<std::uint32_t>();
  const auto version = r.get<std::uint16_t>();
  if (version != kDerivedVersion) throw ParseError(what + ": unsupported version " + std::to_string(version));
  return r;
}

inline void read_payload(const std::vector<std::uint8_t>& bytes, io::Reader& r, std::vector<float>& out,
                         std::size_t count, const std::string& what) {
  const std::size_t expected = count * sizeof(float);
  if (r.remaining() < expected) throw ParseError(what + ": truncated payload");
  if (r.remaining() > expected) throw ParseError(what + ": trailing bytes after payload");
  out.resize(count);
  std::memcpy(out.data(), bytes.data() + r.position(), expected);
}

}  // namespace detail

inline void write_phase_sequence(const PhaseSequence& seq, const std::filesystem::path& path) {
  io::Writer w;
  w.put_bytes(kSequenceMagic.data(), 4);
  w.put(kDerivedVersion);
  w.put(static_cast<std::uint8_t>(seq.mode));
  w.put(static_cast<std::uint32_t>(seq.depth));
  w.put(static_cast<std::uint32_t>(seq.lateral));
  w.put(static_cast<std::uint32_t>(seq.time));
  w.put(static_cast<std::int32_t>(seq.surface_index));
  w.put(static_cast<std::int32_t>(seq.turning_offset));
  w.put_string(seq.provenance);
  io::write_file(path, w.bytes(), seq.data.data(), seq.data.size() * sizeof(float));
}

inline PhaseSequence read_phase_sequence(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  auto r = detail::open_container(bytes, kSequenceMagic, "phase sequence");
  PhaseSequence seq;
  const auto mode = r.get<std::uint8_t>();
  if (mode > 1) throw ParseError("phase sequence: unknown scan mode");
  seq.mode = static_cast<ScanMode>(mode);
  seq.depth = static_cast<int>(r.get<std::uint32_t>());
  seq.lateral = static_cast<int>(r.get<std::uint32_t>());
  seq.time = static_cast<int>(r.get<std::uint32_t>());
  seq.surface_index = r.get<std::int32_t>();
  seq.turning_offset = r.get<std::int32_t>();
  seq.provenance = r.get_string();
  detail::read_payload(bytes, r, seq.data,
                       static_cast<std::size_t>(seq.depth) * seq.lateral * seq.time, "phase sequence");
  return seq;
}

inline void write_st_map(const STMap& map, const std::filesystem::path& path) {
  io::Writer w;
  w.put_bytes(kStMapMagic.data(), 4);
  w.put(kDerivedVersion);
  w.put(static_cast<std::uint32_t>(map.lateral));
  w.put(static_cast<std::uint32_t>(map.time));
  w.put(map.lateral_pitch_mm);
  w.put(map.frame_period_s);
  w.put_string(map.provenance);
  io::write_file(path, w.bytes(), map.data.data(), map.data.size() * sizeof(float));
}

inline STMap read_st_map(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  auto r = detail::open_container(bytes, kStMapMagic, "st map");
  STMap map;
  map.lateral = static_cast<int>(r.get<std::uint32_t>());
  map.time = static_cast<int>(r.get<std::uint32_t>());
  map.lateral_pitch_mm = r.get<double>();
  map.frame_period_s = r.get<double>();
  map.provenance = r.get_string();
  detail::read_payload(bytes, r, map.data, static_cast<std::size_t>(map.lateral) * map.time, "st map");
  return map;
}

}  // namespace oce
