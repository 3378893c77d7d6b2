#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "inatlas/rng.hpp"

namespace inatlas {

using Dims = std::array<int, 3>;
using Spacing = std::array<double, 3>;
using Vec3 = std::array<double, 3>;

// Multi-channel 3D scalar grid. Data layout matches the NIfTI payload:
// x fastest, then y, z, channel: index = ((c*nz + z)*ny + y)*nx + x.
struct Volume {
  Dims dims{0, 0, 0};
  Spacing spacing{1.0, 1.0, 1.0};
  int channels = 1;
  std::vector<float> data;

  Volume() = default;
  Volume(Dims d, int c, Spacing s = {1.0, 1.0, 1.0})
      : dims(d), spacing(s), channels(c),
        data(static_cast<std::size_t>(c) * d[0] * d[1] * d[2], 0.0f) {}

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t linear(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
  }
  float& at(int c, int x, int y, int z) {
    return data[static_cast<std::size_t>(c) * voxel_count() + linear(x, y, z)];
  }
  float at(int c, int x, int y, int z) const {
    return data[static_cast<std::size_t>(c) * voxel_count() + linear(x, y, z)];
  }
  float& at(int c, std::size_t voxel) { return data[static_cast<std::size_t>(c) * voxel_count() + voxel]; }
  float at(int c, std::size_t voxel) const { return data[static_cast<std::size_t>(c) * voxel_count() + voxel]; }
};

// Integer class per voxel, classes in [0, num_classes).
struct LabelMap {
  Dims dims{0, 0, 0};
  Spacing spacing{1.0, 1.0, 1.0};
  int num_classes = 1;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(Dims d, int k, Spacing s = {1.0, 1.0, 1.0})
      : dims(d), spacing(s), num_classes(k),
        labels(static_cast<std::size_t>(d[0]) * d[1] * d[2], 0) {}

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t linear(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
  }
  std::uint8_t& at(int x, int y, int z) { return labels[linear(x, y, z)]; }
  std::uint8_t at(int x, int y, int z) const { return labels[linear(x, y, z)]; }
};

struct Mask {
  Dims dims{0, 0, 0};
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> inside;

  Mask() = default;
  Mask(Dims d, Spacing s = {1.0, 1.0, 1.0})
      : dims(d), spacing(s), inside(static_cast<std::size_t>(d[0]) * d[1] * d[2], 0) {}

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t linear(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
  }
  bool at(int x, int y, int z) const { return inside[linear(x, y, z)] != 0; }
  void set(int x, int y, int z, bool v) { inside[linear(x, y, z)] = v ? 1 : 0; }
  std::size_t count() const;
};

// Affine map into the normalized [-1,1]^3 model domain: one isotropic scale
// plus a translation of the mask's world-space bounding-box center to zero.
struct CoordTransform {
  Vec3 world_center{0.0, 0.0, 0.0};
  double scale = 1.0;  // normalized units per millimeter

  Vec3 to_normalized(const Vec3& world) const {
    return {(world[0] - world_center[0]) * scale,
            (world[1] - world_center[1]) * scale,
            (world[2] - world_center[2]) * scale};
  }
  Vec3 to_world(const Vec3& normalized) const {
    return {normalized[0] / scale + world_center[0],
            normalized[1] / scale + world_center[1],
            normalized[2] / scale + world_center[2]};
  }
};

// World position of a voxel center; the volume origin sits at the grid corner.
inline Vec3 voxel_center_world(const Dims& dims, const Spacing& sp, int x, int y, int z) {
  (void)dims;
  return {(x + 0.5) * sp[0], (y + 0.5) * sp[1], (z + 0.5) * sp[2]};
}

struct CoordinateBatch {
  std::vector<std::size_t> voxel_indices;   // linear voxel index per entry
  std::vector<double> coords;               // 3 per entry, normalized
  std::string source_subject;

  std::size_t size() const { return voxel_indices.size(); }
};

// Per-channel min-max normalization inside the mask; outside set to zero.
// Throws DegenerateInputError when a masked channel is constant.
Volume normalize_intensities(const Volume& v, const Mask& m);

// The affine map sending the mask's world bounding box center to the origin
// with one isotropic scale so the longest box edge spans [-1, 1].
CoordTransform normalize_coordinates(const Mask& m, const Spacing& spacing);

// n voxels drawn uniformly with replacement from the mask, with normalized
// coordinates attached via the given transform.
CoordinateBatch sample_coordinates(const Mask& m, std::size_t n, Rng& rng,
                                   const CoordTransform& transform,
                                   const std::string& subject_id = "");

// Linear indices of all masked voxels, in grid order.
std::vector<std::size_t> masked_voxel_indices(const Mask& m);

// Normalized coordinate of one voxel center.
Vec3 normalized_voxel_coord(const Mask& m, const CoordTransform& t, std::size_t linear_index);

}  // namespace inatlas
