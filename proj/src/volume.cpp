#include "inatlas/volume.hpp"

#include <algorithm>
#include <limits>

#include "inatlas/errors.hpp"

namespace inatlas {

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (auto v : inside) n += (v != 0);
  return n;
}

Volume normalize_intensities(const Volume& v, const Mask& m) {
  if (v.dims != m.dims) throw ShapeError("normalize_intensities: volume/mask dims mismatch");
  Volume out(v.dims, v.channels, v.spacing);
  const std::size_t nvox = v.voxel_count();
  for (int c = 0; c < v.channels; ++c) {
    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (std::size_t i = 0; i < nvox; ++i) {
      if (!m.inside[i]) continue;
      const float val = v.data[static_cast<std::size_t>(c) * nvox + i];
      lo = std::min(lo, val);
      hi = std::max(hi, val);
    }
    if (!(hi > lo)) {
      throw DegenerateInputError("normalize_intensities: constant masked channel " + std::to_string(c));
    }
    const float range = hi - lo;
    for (std::size_t i = 0; i < nvox; ++i) {
      const std::size_t idx = static_cast<std::size_t>(c) * nvox + i;
      out.data[idx] = m.inside[i] ? (v.data[idx] - lo) / range : 0.0f;
    }
  }
  return out;
}

CoordTransform normalize_coordinates(const Mask& m, const Spacing& spacing) {
  int lo[3] = {m.dims[0], m.dims[1], m.dims[2]};
  int hi[3] = {-1, -1, -1};
  for (int z = 0; z < m.dims[2]; ++z)
    for (int y = 0; y < m.dims[1]; ++y)
      for (int x = 0; x < m.dims[0]; ++x) {
        if (!m.at(x, y, z)) continue;
        const int idx[3] = {x, y, z};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], idx[a]);
          hi[a] = std::max(hi[a], idx[a]);
        }
      }
  if (hi[0] < 0) throw DegenerateInputError("normalize_coordinates: empty mask");

  // Bounding box spans from the low voxel's near edge to the high voxel's far edge.
  CoordTransform t;
  double longest = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double lo_edge = lo[a] * spacing[a];
    const double hi_edge = (hi[a] + 1) * spacing[a];
    t.world_center[a] = 0.5 * (lo_edge + hi_edge);
    longest = std::max(longest, hi_edge - lo_edge);
  }
  t.scale = 2.0 / longest;
  return t;
}

std::vector<std::size_t> masked_voxel_indices(const Mask& m) {
  std::vector<std::size_t> idx;
  idx.reserve(m.voxel_count() / 4);
  for (std::size_t i = 0; i < m.inside.size(); ++i)
    if (m.inside[i]) idx.push_back(i);
  return idx;
}

Vec3 normalized_voxel_coord(const Mask& m, const CoordTransform& t, std::size_t linear_index) {
  const std::size_t plane = static_cast<std::size_t>(m.dims[0]) * m.dims[1];
  const int z = static_cast<int>(linear_index / plane);
  const std::size_t rem = linear_index % plane;
  const int y = static_cast<int>(rem / m.dims[0]);
  const int x = static_cast<int>(rem % m.dims[0]);
  return t.to_normalized(voxel_center_world(m.dims, m.spacing, x, y, z));
}

CoordinateBatch sample_coordinates(const Mask& m, std::size_t n, Rng& rng,
                                   const CoordTransform& transform,
                                   const std::string& subject_id) {
  const auto candidates = masked_voxel_indices(m);
  if (candidates.empty()) throw DegenerateInputError("sample_coordinates: empty mask");

  CoordinateBatch batch;
  batch.source_subject = subject_id;
  batch.voxel_indices.resize(n);
  batch.coords.resize(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t vi = candidates[rng.uniform_index(candidates.size())];
    batch.voxel_indices[i] = vi;
    const Vec3 p = normalized_voxel_coord(m, transform, vi);
    batch.coords[3 * i + 0] = p[0];
    batch.coords[3 * i + 1] = p[1];
    batch.coords[3 * i + 2] = p[2];
  }
  return batch;
}

}  // namespace inatlas
