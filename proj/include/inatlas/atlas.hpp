#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "inatlas/engine.hpp"
#include "inatlas/errors.hpp"
#include "inatlas/train.hpp"

namespace inatlas::atlas {

struct AtlasRequest {
  double t_weeks = 0.0;
  double sigma_weeks = 0.5;
  // Overrides in normalized condition units; absent conditions default to
  // the kernel-weighted mean of the training values.
  std::map<std::string, double> condition_override;
  Dims grid_dims{0, 0, 0};
  Spacing grid_spacing{1, 1, 1};
  // Evaluation frame; by default the grid's own world box maps to the
  // normalized cube (longest edge to [-1,1]).
  std::optional<CoordTransform> frame;
};

struct AtlasMetadata {
  double t_weeks = 0.0;
  double sigma_weeks = 0.5;
  std::vector<double> xi;  // normalized conditions used
  Dims grid_dims{0, 0, 0};
  Spacing grid_spacing{1, 1, 1};
};

template <typename T>
struct Atlas {
  Volume intensities;    // C channels
  Volume probabilities;  // K channels, sum to 1 per voxel
  LabelMap labels;
  AtlasMetadata metadata;
};

// Gaussian kernel weights over normalized ages, normalized to sum to one so
// the regressed latent is a convex combination (weighted mean) of the
// training codes. Raw exponentials are kept unshifted: a query far outside
// the cohort with a tiny sigma underflows to an all-zero kernel, which is
// reported as a degenerate kernel.
inline std::vector<double> kernel_weights(double t_norm, const std::vector<double>& ages_norm,
                                          double sigma_norm) {
  if (ages_norm.empty()) throw DegenerateInputError("kernel_weights: no subjects");
  if (sigma_norm <= 0.0) throw ConfigError("kernel_weights: sigma must be positive");
  std::vector<double> w(ages_norm.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = t_norm - ages_norm[i];
    w[i] = std::exp(-d * d / (2.0 * sigma_norm * sigma_norm));
    sum += w[i];
  }
  if (sum <= 0.0)
    throw DegenerateInputError("kernel_weights: all weights underflowed to zero");
  for (auto& v : w) v /= sum;
  return w;
}

// Eq.-style time regression: elementwise weighted mean over the optimized
// latent grids; conditions default to the same weighted mean of training
// values unless overridden.
template <typename T>
model::LatentGrid<T> regress_latent(const train::TrainedModel<T>& m, double t_weeks,
                                    double sigma_weeks,
                                    const std::map<std::string, double>& overrides = {}) {
  if (m.subjects.empty()) throw DegenerateInputError("regress_latent: model has no subjects");
  std::vector<double> ages(m.subjects.size());
  for (std::size_t i = 0; i < m.subjects.size(); ++i)
    ages[i] = m.normalize_age(m.subjects[i].scan_age_weeks);
  const auto w = kernel_weights(m.normalize_age(t_weeks), ages, m.normalized_sigma(sigma_weeks));

  model::LatentGrid<T> out;
  out.z.assign(m.cfg.latent_size(), T(0));
  out.xi.assign(m.cfg.condition_dims(), T(0));
  for (std::size_t i = 0; i < m.subjects.size(); ++i) {
    const T wi = static_cast<T>(w[i]);
    const auto& z = m.subjects[i].latent.z;
    for (std::size_t j = 0; j < out.z.size(); ++j) out.z[j] += wi * z[j];
    for (std::size_t q = 0; q < out.xi.size(); ++q) out.xi[q] += wi * m.subjects[i].latent.xi[q];
  }
  for (int q = 0; q < m.cfg.condition_dims(); ++q) {
    auto it = overrides.find(m.cfg.condition_names[q]);
    if (it != overrides.end()) out.xi[q] = static_cast<T>(it->second);
  }
  return out;
}

inline CoordTransform grid_frame(const Dims& dims, const Spacing& spacing) {
  CoordTransform t;
  double longest = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double extent = dims[a] * spacing[a];
    t.world_center[a] = 0.5 * extent;
    longest = std::max(longest, extent);
  }
  t.scale = 2.0 / longest;
  return t;
}

// Forward pass of one latent over a full grid in the shared frame (identity
// rigid transform); utility shared by atlas generation, latent interpolation,
// and the sigma-collapse checks.
template <typename T>
Atlas<T> evaluate_latent_on_grid(const train::TrainedModel<T>& m,
                                 const model::LatentGrid<T>& latent, const Dims& dims,
                                 const Spacing& spacing,
                                 const std::optional<CoordTransform>& frame = std::nullopt) {
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
    throw ConfigError("evaluate_latent_on_grid: empty grid");
  const CoordTransform t = frame ? *frame : grid_frame(dims, spacing);
  const std::size_t nvox = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  engine::MatX<T> coords(3, static_cast<int>(nvox));
  std::size_t i = 0;
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x, ++i) {
        const Vec3 p = t.to_normalized(voxel_center_world(dims, spacing, x, y, z));
        for (int a = 0; a < 3; ++a) coords(a, static_cast<int>(i)) = static_cast<T>(p[a]);
      }

  engine::View<T> view{&m.cfg, &m.params, &latent, nullptr};
  engine::MatX<T> img, probs;
  engine::infer(view, coords, &img, &probs);

  Atlas<T> out;
  out.intensities = Volume(dims, m.cfg.image_channels, spacing);
  out.probabilities = Volume(dims, m.cfg.tissue_classes, spacing);
  out.labels = LabelMap(dims, m.cfg.tissue_classes, spacing);
  for (std::size_t v = 0; v < nvox; ++v) {
    for (int c = 0; c < m.cfg.image_channels; ++c)
      out.intensities.data[static_cast<std::size_t>(c) * nvox + v] =
          static_cast<float>(img(c, static_cast<int>(v)));
    int best = 0;
    for (int k = 0; k < m.cfg.tissue_classes; ++k) {
      out.probabilities.data[static_cast<std::size_t>(k) * nvox + v] =
          static_cast<float>(probs(k, static_cast<int>(v)));
      if (probs(k, static_cast<int>(v)) > probs(best, static_cast<int>(v))) best = k;
    }
    out.labels.labels[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// Continuous spatio-temporal atlas at any resolution: kernel-regressed
// latent, identity rigid transform (the shared space is the atlas frame),
// no parameter mutated.
template <typename T>
Atlas<T> generate_atlas(const train::TrainedModel<T>& m, const AtlasRequest& req) {
  const auto latent = regress_latent(m, req.t_weeks, req.sigma_weeks, req.condition_override);
  Atlas<T> out = evaluate_latent_on_grid(m, latent, req.grid_dims, req.grid_spacing, req.frame);
  out.metadata.t_weeks = req.t_weeks;
  out.metadata.sigma_weeks = req.sigma_weeks;
  out.metadata.xi.assign(latent.xi.begin(), latent.xi.end());
  out.metadata.grid_dims = req.grid_dims;
  out.metadata.grid_spacing = req.grid_spacing;
  return out;
}

// Grid dims covering the model's reference world box at a target resolution.
inline Dims grid_for_resolution(const Dims& ref_dims, const Spacing& ref_spacing,
                                double resolution_mm) {
  if (resolution_mm <= 0.0) throw ConfigError("grid_for_resolution: resolution must be positive");
  Dims d;
  for (int a = 0; a < 3; ++a)
    d[a] = std::max(1, static_cast<int>(std::lround(ref_dims[a] * ref_spacing[a] / resolution_mm)));
  return d;
}

}  // namespace inatlas::atlas
