#pragma once

// Raw recording container ("OCER", version 1). All fields little-endian:
//
//   magic "OCER" | version u16 | mode u8 | n_lines u32 | depth_pixels u16
//   cycle_freq f64 | lines_per_cycle u32 | wavelength_nm f64 | aperture_mm f64
//   depth_extent_mm f64 | probe_center 2 x f64 | source_xy 2 x f64 | seed u64
//   payload: n_lines x depth_pixels x (real f32, imag f32), line-major

#include <array>
#include <complex>
#include <filesystem>
#include <fstream>

#include "oce/binary_io.hpp"
#include "oce/probe.hpp"

namespace oce {

inline constexpr std::array<char, 4> kRecordingMagic = {'O', 'C', 'E', 'R'};
inline constexpr std::uint16_t kRecordingVersion = 1;
inline constexpr std::size_t kRecordingHeaderBytes = 89;

inline std::vector<std::uint8_t> encode_recording_header(const RawRecording& rec) {
  if (rec.n_lines > 0xffffffffULL) throw DataError("recording: too many lines for the container");
  io::Writer w;
  w.put_bytes(kRecordingMagic.data(), 4);
  w.put(kRecordingVersion);
  w.put(static_cast<std::uint8_t>(rec.config.mode));
  w.put(static_cast<std::uint32_t>(rec.n_lines));
  w.put(static_cast<std::uint16_t>(rec.config.depth_pixels));
  w.put(rec.config.cycle_freq_hz);
  w.put(static_cast<std::uint32_t>(rec.config.lines_per_cycle));
  w.put(rec.config.center_wavelength_nm);
  w.put(rec.config.aperture_mm);
  w.put(rec.config.depth_extent_mm);
  w.put(rec.probe_center_mm.x);
  w.put(rec.probe_center_mm.y);
  w.put(rec.source_xy_mm.x);
  w.put(rec.source_xy_mm.y);
  w.put(rec.seed);
  return w.bytes();
}

inline void write_recording(const RawRecording& rec, const std::filesystem::path& path) {
  if (rec.samples.size() != rec.n_lines * rec.depth()) throw DataError("recording: payload size mismatch");
  io::write_file(path, encode_recording_header(rec), rec.samples.data(),
                 rec.samples.size() * sizeof(std::complex<float>));
}

// Fields not stored in the container (refractive index, surface pixel, imperfections,
// phantom truth) keep their defaults.
inline RawRecording read_recording(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);

  std::array<std::uint8_t, kRecordingHeaderBytes> header{};
  const std::size_t header_read = std::min(file_size, kRecordingHeaderBytes);
  in.read(reinterpret_cast<char*>(header.data()), static_cast<std::streamsize>(header_read));
  if (header_read >= 4 && std::memcmp(header.data(), kRecordingMagic.data(), 4) != 0)
    throw ParseError("recording: bad magic");
  io::Reader r(header.data(), header_read, "recording");
  r.get<std::uint32_t>();
  const auto version = r.get<std::uint16_t>();
  if (version != kRecordingVersion) throw ParseError("recording: unsupported version " + std::to_string(version));

  RawRecording rec;
  const auto mode = r.get<std::uint8_t>();
  if (mode > 1) throw ParseError("recording: unknown scan mode " + std::to_string(mode));
  rec.config.mode = static_cast<ScanMode>(mode);
  rec.n_lines = r.get<std::uint32_t>();
  rec.config.depth_pixels = r.get<std::uint16_t>();
  rec.config.cycle_freq_hz = r.get<double>();
  rec.config.lines_per_cycle = static_cast<int>(r.get<std::uint32_t>());
  rec.config.center_wavelength_nm = r.get<double>();
  rec.config.aperture_mm = r.get<double>();
  rec.config.depth_extent_mm = r.get<double>();
  rec.probe_center_mm.x = r.get<double>();
  rec.probe_center_mm.y = r.get<double>();
  rec.source_xy_mm.x = r.get<double>();
  rec.source_xy_mm.y = r.get<double>();
  rec.seed = r.get<std::uint64_t>();
  if (rec.config.surface_pixel >= rec.config.depth_pixels) rec.config.surface_pixel = 0;

  const std::size_t expected = rec.n_lines * rec.depth() * sizeof(std::complex<float>);
  const std::size_t payload = file_size - kRecordingHeaderBytes;
  if (payload < expected) throw ParseError("recording: truncated payload");
  if (payload > expected) throw ParseError("recording: trailing bytes after payload");
  rec.samples.resize(rec.n_lines * rec.depth());
  in.read(reinterpret_cast<char*>(rec.samples.data()), static_cast<std::streamsize>(expected));
  if (!in) throw ParseError("recording: truncated payload");
  return rec;
}

}  // namespace oce
