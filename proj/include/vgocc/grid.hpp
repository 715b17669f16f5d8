#pragma once

#include <cmath>
#include <cstddef>
#include <optional>

#include "vgocc/error.hpp"
#include "vgocc/geometry.hpp"

namespace vgocc {

/// Regular voxel lattice: Z x H x W cells of edge `pitch`, `origin` is the
/// minimum corner. Row index h runs along y, column w along x.
/// Flat index = (z*H + h)*W + w.
struct GridSpec {
  int nz = 8, ny = 50, nx = 50;
  double pitch = 0.4;
  Vec3 origin = Vec3(-10.0, -10.0, -0.4);

  void validate() const {
    require(nz > 0 && ny > 0 && nx > 0, "grid extents must be positive");
    require(pitch > 0.0, "grid pitch must be positive");
  }
  std::size_t voxels() const { return static_cast<std::size_t>(nz) * ny * nx; }
  std::size_t cells() const { return static_cast<std::size_t>(ny) * nx; }
  std::size_t index(int z, int h, int w) const {
    return (static_cast<std::size_t>(z) * ny + h) * nx + w;
  }
  Vec3 center(int z, int h, int w) const {
    return origin + pitch * Vec3(w + 0.5, h + 0.5, z + 0.5);
  }
  Vec3 center(std::size_t idx) const {
    const int w = static_cast<int>(idx % nx);
    const int h = static_cast<int>((idx / nx) % ny);
    const int z = static_cast<int>(idx / (static_cast<std::size_t>(nx) * ny));
    return center(z, h, w);
  }
  /// Flat index of the voxel containing p, if inside.
  std::optional<std::size_t> locate(const Vec3& p) const {
    const Vec3 r = (p - origin) / pitch;
    const double fw = std::floor(r.x()), fh = std::floor(r.y()), fz = std::floor(r.z());
    if (fw < 0 || fh < 0 || fz < 0 || fw >= nx || fh >= ny || fz >= nz) return std::nullopt;
    return index(static_cast<int>(fz), static_cast<int>(fh), static_cast<int>(fw));
  }
  bool operator==(const GridSpec& o) const {
    return nz == o.nz && ny == o.ny && nx == o.nx && pitch == o.pitch && origin == o.origin;
  }
};

}  // namespace vgocc
