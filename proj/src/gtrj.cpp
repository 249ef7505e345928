#include "geotdm/gtrj.hpp"

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace geotdm {

namespace {

constexpr uint16_t kVersion = 1;

uint32_t crc_table_entry(uint32_t i) {
  uint32_t c = i;
  for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
  return c;
}

const std::array<uint32_t, 256>& crc_table() {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) t[i] = crc_table_entry(i);
    return t;
  }();
  return table;
}

void put_u16(std::vector<uint8_t>& buf, uint16_t v) {
  buf.push_back(static_cast<uint8_t>(v & 0xff));
  buf.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>& buf, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

struct Reader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;
  size_t record_start = 0;

  bool eof() const { return pos >= buf.size(); }
  void need(size_t n, const char* what) const {
    if (pos + n > buf.size())
      throw std::runtime_error("gtrj: truncated record (" + std::string(what) +
                               ") at byte " + std::to_string(pos));
  }
  uint16_t u16() {
    need(2, "u16");
    uint16_t v = static_cast<uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4, "u32");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace

uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc) {
  crc = ~crc;
  const auto& table = crc_table();
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return ~crc;
}

void write_gtrj(const std::string& path, const std::vector<GeoTrajectory>& trajs) {
  std::vector<uint8_t> out;
  for (const auto& tr : trajs) {
    std::vector<uint8_t> rec;
    rec.push_back('G');
    rec.push_back('T');
    rec.push_back('R');
    rec.push_back('J');
    put_u16(rec, kVersion);
    put_u32(rec, static_cast<uint32_t>(tr.frames()));
    put_u32(rec, static_cast<uint32_t>(tr.nodes()));
    put_u32(rec, static_cast<uint32_t>(tr.space_dim()));
    put_u32(rec, static_cast<uint32_t>(tr.feat_dim()));
    put_u32(rec, static_cast<uint32_t>(tr.edges.size()));
    for (int64_t i = 0; i < tr.coords.numel(); ++i)
      put_f32(rec, static_cast<float>(tr.coords[i]));
    for (int64_t i = 0; i < tr.node_feats.numel(); ++i)
      put_f32(rec, static_cast<float>(tr.node_feats[i]));
    for (const auto& e : tr.edges) {
      put_u32(rec, static_cast<uint32_t>(e[0]));
      put_u32(rec, static_cast<uint32_t>(e[1]));
    }
    put_u32(rec, crc32(rec.data(), rec.size()));
    out.insert(out.end(), rec.begin(), rec.end());
  }
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("gtrj: cannot open '" + tmp + "' for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("gtrj: short write to '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::vector<GeoTrajectory> read_gtrj(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("gtrj: cannot open '" + path + "'");
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};
  std::vector<GeoTrajectory> trajs;
  while (!r.eof()) {
    r.record_start = r.pos;
    r.need(4, "magic");
    if (std::memcmp(buf.data() + r.pos, "GTRJ", 4) != 0)
      throw std::runtime_error("gtrj: bad magic at byte " + std::to_string(r.pos));
    r.pos += 4;
    uint16_t version = r.u16();
    if (version != kVersion)
      throw std::runtime_error("gtrj: unsupported version " + std::to_string(version));
    int64_t T = r.u32(), N = r.u32(), D = r.u32(), Dh = r.u32(), E = r.u32();
    GeoTrajectory tr;
    tr.coords = TensorD({T, N, D});
    tr.node_feats = TensorD({N, Dh});
    for (int64_t i = 0; i < tr.coords.numel(); ++i) tr.coords[i] = r.f32();
    for (int64_t i = 0; i < tr.node_feats.numel(); ++i) tr.node_feats[i] = r.f32();
    tr.edges.reserve(E);
    for (int64_t i = 0; i < E; ++i) {
      int32_t a = static_cast<int32_t>(r.u32());
      int32_t b = static_cast<int32_t>(r.u32());
      if (a < 0 || a >= N || b < 0 || b >= N)
        throw std::runtime_error("gtrj: edge index out of range at byte " +
                                 std::to_string(r.pos));
      tr.edges.push_back({a, b});
    }
    uint32_t expect = crc32(buf.data() + r.record_start, r.pos - r.record_start);
    uint32_t stored = r.u32();
    if (expect != stored)
      throw std::runtime_error("gtrj: checksum mismatch in record " +
                               std::to_string(trajs.size()) + " of '" + path + "'");
    trajs.push_back(std::move(tr));
  }
  return trajs;
}

void write_csv(const std::string& path, const std::vector<GeoTrajectory>& trajs) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("csv: cannot open '" + path + "' for writing");
  f << "trajectory,frame,node";
  if (!trajs.empty()) {
    for (int64_t d = 0; d < trajs[0].space_dim(); ++d) f << ",x" << d;
    for (int64_t d = 0; d < trajs[0].feat_dim(); ++d) f << ",h" << d;
  }
  f << "\n";
  for (size_t k = 0; k < trajs.size(); ++k) {
    const auto& tr = trajs[k];
    for (int64_t t = 0; t < tr.frames(); ++t)
      for (int64_t i = 0; i < tr.nodes(); ++i) {
        f << k << "," << t << "," << i;
        for (int64_t d = 0; d < tr.space_dim(); ++d) f << "," << tr.coords.at({t, i, d});
        for (int64_t d = 0; d < tr.feat_dim(); ++d) f << "," << tr.node_feats.at({i, d});
        f << "\n";
      }
  }
}

}  // namespace geotdm
