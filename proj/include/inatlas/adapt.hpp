#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "inatlas/adam.hpp"
#include "inatlas/engine.hpp"
#include "inatlas/errors.hpp"
#include "inatlas/metrics.hpp"
#include "inatlas/train.hpp"

namespace inatlas::adapt {

struct AdaptConfig {
  int epochs = 10;
  double holdout_fraction = 0.10;
  int patience = 3;   // evaluations without improvement before stopping
  int eval_every = 1; // epochs between holdout evaluations
  double lr_latent = 5e-4;
  double lr_rigid = 7.5e-3;
  double lr_condition = 5e-4;
  int batch_coords = 4096;
  std::vector<int> observed_channels;  // empty = all model channels
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("AdaptConfig: epochs must be >= 1");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 0.5))
      throw ConfigError("AdaptConfig: holdout_fraction must be in (0, 0.5)");
    if (patience < 1) throw ConfigError("AdaptConfig: patience must be >= 1");
    if (eval_every < 1) throw ConfigError("AdaptConfig: eval_every must be >= 1");
    if (batch_coords < 1) throw ConfigError("AdaptConfig: batch_coords must be >= 1");
  }
};

template <typename T>
struct AdaptResult {
  model::LatentGrid<T> latent;  // optimized z_j and xi_j
  model::RigidParams<T> rigid;
  std::vector<double> holdout_trace;
  int stopped_epoch = 0;
  double fit_psnr = 0.0;  // observed channels, full mask
  double fit_ssim = 0.0;
  std::vector<int> observed_channels;
  CoordTransform transform;
  Dims dims{0, 0, 0};
  Spacing spacing{1, 1, 1};
};

// Test hook: receives the fitted voxel indices of each batch.
using BatchObserver = std::function<void(const std::vector<std::size_t>&)>;

// Adapts the frozen model to a new subject by optimizing a fresh latent
// code, condition vector, and rigid transform on image intensities only.
// 10% of masked voxels are held out to monitor the loss; the best-holdout
// state is restored on return. Network parameters are never touched.
template <typename T>
AdaptResult<T> adapt(const train::TrainedModel<T>& m, const Volume& image, const Mask& mask,
                     const AdaptConfig& cfg_in, const BatchObserver& observer = nullptr) {
  AdaptConfig cfg = cfg_in;
  cfg.validate();
  const auto& mcfg = m.cfg;
  if (image.dims != mask.dims) throw ShapeError("adapt: image/mask dims mismatch");
  if (cfg.observed_channels.empty()) {
    cfg.observed_channels.resize(std::min(image.channels, mcfg.image_channels));
    for (std::size_t i = 0; i < cfg.observed_channels.size(); ++i)
      cfg.observed_channels[i] = static_cast<int>(i);
  }
  for (int c : cfg.observed_channels)
    if (c < 0 || c >= mcfg.image_channels)
      throw ConfigError("adapt: observed channel " + std::to_string(c) + " outside model range");

  // Image channels line up with model channels when counts match; otherwise
  // the image provides exactly the observed channels, in order.
  const bool full_layout = image.channels == mcfg.image_channels;
  if (!full_layout && image.channels != static_cast<int>(cfg.observed_channels.size()))
    throw ConfigError("adapt: image channels must equal model channels or observed count");

  const auto masked = masked_voxel_indices(mask);
  if (masked.empty()) throw DegenerateInputError("adapt: empty mask");

  // Min-max normalize the observed channels inside the mask.
  const std::size_t nvox = mask.voxel_count();
  Volume targets(image.dims, mcfg.image_channels, image.spacing);
  for (std::size_t oc = 0; oc < cfg.observed_channels.size(); ++oc) {
    const int model_c = cfg.observed_channels[oc];
    const int image_c = full_layout ? model_c : static_cast<int>(oc);
    float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
    for (std::size_t vi : masked) {
      const float v = image.data[static_cast<std::size_t>(image_c) * nvox + vi];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (!(hi > lo)) throw DegenerateInputError("adapt: constant masked channel");
    for (std::size_t vi : masked)
      targets.data[static_cast<std::size_t>(model_c) * nvox + vi] =
          (image.data[static_cast<std::size_t>(image_c) * nvox + vi] - lo) / (hi - lo);
  }

  AdaptResult<T> result;
  result.observed_channels = cfg.observed_channels;
  result.transform = normalize_coordinates(mask, mask.spacing);
  result.dims = image.dims;
  result.spacing = image.spacing;

  Rng init_rng = Rng::derive(cfg.seed, "adapt.init");
  result.latent = model::init_latent<T>(mcfg, init_rng, /*random_conditions=*/true);
  result.rigid = model::RigidParams<T>{};

  // Holdout split: shuffled masked voxels, first fraction held out.
  std::vector<std::size_t> shuffled = masked;
  Rng holdout_rng = Rng::derive(cfg.seed, "adapt.holdout");
  for (std::size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[holdout_rng.uniform_index(i)]);
  const std::size_t n_holdout =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(cfg.holdout_fraction *
                                                                   shuffled.size())));
  const std::vector<std::size_t> holdout(shuffled.begin(), shuffled.begin() + n_holdout);
  const std::vector<std::size_t> fit(shuffled.begin() + n_holdout, shuffled.end());
  if (fit.empty()) throw DegenerateInputError("adapt: no fitting voxels left after holdout");

  auto coords_for = [&](const std::vector<std::size_t>& voxels) {
    engine::MatX<T> coords(3, static_cast<int>(voxels.size()));
    for (std::size_t i = 0; i < voxels.size(); ++i) {
      const Vec3 p = normalized_voxel_coord(mask, result.transform, voxels[i]);
      for (int a = 0; a < 3; ++a) coords(a, static_cast<int>(i)) = static_cast<T>(p[a]);
    }
    return coords;
  };
  auto targets_for = [&](const std::vector<std::size_t>& voxels) {
    engine::MatX<T> t(mcfg.image_channels, static_cast<int>(voxels.size()));
    t.setZero();
    for (std::size_t i = 0; i < voxels.size(); ++i)
      for (int c : cfg.observed_channels)
        t(c, static_cast<int>(i)) =
            static_cast<T>(targets.data[static_cast<std::size_t>(c) * nvox + voxels[i]]);
    return t;
  };

  const engine::MatX<T> holdout_coords = coords_for(holdout);
  const engine::MatX<T> holdout_targets = targets_for(holdout);

  auto holdout_loss = [&]() {
    engine::View<T> view{&mcfg, &m.params, &result.latent, &result.rigid};
    engine::BatchTargets<T> bt;
    bt.image = &holdout_targets;
    bt.observed_channels = cfg.observed_channels;
    return static_cast<double>(
        engine::run_batch(view, holdout_coords, bt).total);
  };

  engine::AdamState<T> z_state, xi_state, rigid_state;
  Rng coord_rng = Rng::derive(cfg.seed, "adapt.coords");

  double best_loss = std::numeric_limits<double>::infinity();
  model::LatentGrid<T> best_latent = result.latent;
  model::RigidParams<T> best_rigid = result.rigid;
  int bad_evals = 0;
  int epoch = 0;
  const int batches_per_epoch =
      static_cast<int>((fit.size() + cfg.batch_coords - 1) / cfg.batch_coords);

  for (epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int b = 0; b < batches_per_epoch; ++b) {
      std::vector<std::size_t> batch(cfg.batch_coords);
      for (auto& vi : batch) vi = fit[coord_rng.uniform_index(fit.size())];
      if (observer) observer(batch);
      const engine::MatX<T> coords = coords_for(batch);
      const engine::MatX<T> image_targets = targets_for(batch);

      engine::View<T> view{&mcfg, &m.params, &result.latent, &result.rigid};
      engine::BatchTargets<T> bt;
      bt.image = &image_targets;
      bt.observed_channels = cfg.observed_channels;
      engine::GradRequest req;
      req.network = false;  // theta frozen
      engine::Gradients<T> grads = engine::Gradients<T>::zeros(view);
      const auto loss = engine::run_batch(view, coords, bt, req, &grads);
      if (!std::isfinite(static_cast<double>(loss.total)))
        throw NumericError("adapt: non-finite loss in epoch " + std::to_string(epoch));

      engine::adam_step(result.latent.z, grads.z, z_state, cfg.lr_latent, "latent");
      if (mcfg.condition_dims() > 0)
        engine::adam_step(result.latent.xi, grads.xi, xi_state, cfg.lr_condition, "condition");
      std::array<T, 6> rp{result.rigid.axis_angle[0],  result.rigid.axis_angle[1],
                          result.rigid.axis_angle[2],  result.rigid.translation[0],
                          result.rigid.translation[1], result.rigid.translation[2]};
      engine::adam_step(rp, grads.rigid, rigid_state, cfg.lr_rigid, "rigid");
      for (int a = 0; a < 3; ++a) {
        result.rigid.axis_angle[a] = rp[a];
        result.rigid.translation[a] = rp[3 + a];
      }
    }

    if (epoch % cfg.eval_every == 0) {
      const double loss = holdout_loss();
      result.holdout_trace.push_back(loss);
      if (loss < best_loss) {
        best_loss = loss;
        best_latent = result.latent;
        best_rigid = result.rigid;
        bad_evals = 0;
      } else {
        ++bad_evals;
        if (bad_evals >= cfg.patience) break;
      }
    }
  }
  result.stopped_epoch = std::min(epoch, cfg.epochs);
  result.latent = best_latent;
  result.rigid = best_rigid;

  // Fit metrics on the observed channels over the full mask.
  const auto recon =
      train::evaluate_on_voxels(m, result.latent, &result.rigid, mask, result.transform, masked);
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (int c : cfg.observed_channels) {
    psnr_sum += metrics::psnr(recon.intensities, targets, mask, c);
    ssim_sum += metrics::ssim3d(recon.intensities, targets, mask, c);
  }
  result.fit_psnr = psnr_sum / static_cast<double>(cfg.observed_channels.size());
  result.fit_ssim = ssim_sum / static_cast<double>(cfg.observed_channels.size());
  return result;
}

// Tissue probabilities and labels from the adapted latent via a forward pass
// at the subject's rigidly transformed masked voxels.
template <typename T>
train::Reconstruction<T> predict_segmentation(const train::TrainedModel<T>& m,
                                              const AdaptResult<T>& r, const Mask& mask) {
  if (mask.dims != r.dims) throw ShapeError("predict_segmentation: mask dims mismatch");
  return train::evaluate_on_voxels(m, r.latent, &r.rigid, mask, r.transform,
                                   masked_voxel_indices(mask));
}

// Emits one trained modality on the subject grid, observed or not.
template <typename T>
Volume translate_modality(const train::TrainedModel<T>& m, const AdaptResult<T>& r,
                          const Mask& mask, int target_channel) {
  if (target_channel < 0 || target_channel >= m.cfg.image_channels)
    throw ConfigError("translate_modality: channel " + std::to_string(target_channel) +
                      " outside model range");
  const auto recon = train::evaluate_on_voxels(m, r.latent, &r.rigid, mask, r.transform,
                                               masked_voxel_indices(mask));
  Volume out(mask.dims, 1, mask.spacing);
  const std::size_t nvox = mask.voxel_count();
  std::copy_n(recon.intensities.data.begin() + static_cast<std::size_t>(target_channel) * nvox,
              nvox, out.data.begin());
  return out;
}

// Optimized explicit conditions mapped back to physical units.
template <typename T>
std::map<std::string, double> estimate_conditions(const train::TrainedModel<T>& m,
                                                  const AdaptResult<T>& r) {
  if (m.cfg.condition_dims() == 0)
    throw ConfigError("estimate_conditions: model trained without explicit conditions");
  std::map<std::string, double> out;
  for (int q = 0; q < m.cfg.condition_dims(); ++q) {
    const auto& rec = m.condition_records[q];
    out[rec.name] = rec.to_physical(static_cast<double>(r.latent.xi[q]));
  }
  return out;
}

}  // namespace inatlas::adapt
