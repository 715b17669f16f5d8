#pragma once

// Serialization helpers: JSON header + raw little-endian float64 blobs,
// pose/grid JSON, and 17-significant-digit number strings for reports.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vgocc/error.hpp"
#include "vgocc/geometry.hpp"
#include "vgocc/grid.hpp"

namespace vgocc {

using json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "blob format is little-endian; big-endian hosts need byte swapping");

/// Decimal string with 17 significant digits (round-trips any double).
inline std::string num17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_num(const json& j) {
  if (j.is_string()) return std::stod(j.get<std::string>());
  return j.get<double>();
}

inline json pose_to_json(const Pose& p) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(p.rotation(r, c));
  return json{{"rotation", rot},
              {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

inline Pose pose_from_json(const json& j) {
  Pose p;
  if (j.contains("yaw")) {
    p.rotation = rotation_z(j.at("yaw").get<double>());
  } else {
    const auto& rot = j.at("rotation");
    require(rot.size() == 9, "pose rotation must have 9 row-major entries");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) p.rotation(r, c) = rot.at(r * 3 + c).get<double>();
  }
  if (j.contains("translation")) {
    const auto& t = j.at("translation");
    require(t.size() == 3, "pose translation must have 3 entries");
    p.translation = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
  }
  require(p.is_valid(1e-6), "pose rotation is not orthonormal with det +1");
  return p;
}

inline json grid_to_json(const GridSpec& g) {
  return json{{"dims", {g.nz, g.ny, g.nx}},
              {"pitch", g.pitch},
              {"origin", {g.origin.x(), g.origin.y(), g.origin.z()}}};
}

inline GridSpec grid_from_json(const json& j) {
  GridSpec g;
  const auto& d = j.at("dims");
  require(d.size() == 3, "grid dims must be [Z, H, W]");
  g.nz = d[0].get<int>();
  g.ny = d[1].get<int>();
  g.nx = d[2].get<int>();
  g.pitch = j.at("pitch").get<double>();
  const auto& o = j.at("origin");
  g.origin = Vec3(o[0].get<double>(), o[1].get<double>(), o[2].get<double>());
  g.validate();
  return g;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot open " + path.string() + " for writing");
  f << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ContractViolation("invalid JSON in " + path.string() + ": " + e.what());
  }
}

/// Append-only byte buffer for blobs; offsets are in bytes.
class BlobWriter {
 public:
  std::size_t append(const void* data, std::size_t bytes) {
    const std::size_t off = buf_.size();
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + bytes);
    return off;
  }
  std::size_t append(const std::vector<double>& v) { return append(v.data(), v.size() * sizeof(double)); }
  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    require(static_cast<bool>(f), "cannot open " + path.string() + " for writing");
    f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  }
  std::size_t size() const { return buf_.size(); }

 private:
  std::vector<char> buf_;
};

class BlobReader {
 public:
  explicit BlobReader(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), "cannot open blob " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  void read(std::size_t offset, void* out, std::size_t bytes) const {
    require(offset + bytes <= buf_.size(), "blob truncated");
    std::copy_n(buf_.data() + offset, bytes, static_cast<char*>(out));
  }
  std::vector<double> doubles(std::size_t offset, std::size_t count) const {
    std::vector<double> v(count);
    read(offset, v.data(), count * sizeof(double));
    return v;
  }

 private:
  std::vector<char> buf_;
};

inline std::vector<double> pose_to_doubles(const Pose& p) {
  std::vector<double> v;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v.push_back(p.rotation(r, c));
  for (int i = 0; i < 3; ++i) v.push_back(p.translation[i]);
  return v;
}

inline Pose pose_from_doubles(const std::vector<double>& v) {
  require(v.size() == 12, "pose needs 12 doubles");
  Pose p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = v[r * 3 + c];
  p.translation = Vec3(v[9], v[10], v[11]);
  return p;
}

}  // namespace vgocc
