#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geotdm/geom.hpp"

namespace geotdm {

// GTRJ trajectory container. A file is a concatenation of records, each:
//
//   bytes 0-3   magic "GTRJ"
//   u16         version (currently 1)
//   u32 x5      T, N, D, Dh, E          (little-endian)
//   f32 x T*N*D coordinates, frame-major then node then component
//   f32 x N*Dh  node features
//   u32 x 2E    edge pairs (src, dst)
//   u32         CRC-32 of every preceding byte of the record
//
// Records are self-delimiting, so multi-trajectory files are plain
// concatenations and can be streamed.

uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0);

void write_gtrj(const std::string& path, const std::vector<GeoTrajectory>& trajs);
std::vector<GeoTrajectory> read_gtrj(const std::string& path);

void write_csv(const std::string& path, const std::vector<GeoTrajectory>& trajs);

}  // namespace geotdm
