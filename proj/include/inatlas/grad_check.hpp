#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "inatlas/engine.hpp"
#include "inatlas/rng.hpp"

namespace inatlas::engine {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_group;
};

// Compares analytic gradients against central finite differences (double
// precision) for every parameter group: network, latent, rigid, condition.
// The random configuration keeps coordinates away from the interpolation
// clamp so the loss stays smooth at the probe step.
inline GradCheckResult grad_check(const model::ModelConfig& cfg, std::uint64_t seed,
                                  double step = 1e-4, bool rigid_near_zero = false) {
  using Mat = MatX<double>;
  Rng rng = Rng::derive(seed, "grad_check");

  model::ModelParams<double> params = model::init_model<double>(cfg, rng.next_u64());
  // Nudge modulation away from its identity start so M gradients are
  // generic. Magnitudes stay moderate: the finite-difference oracle is only
  // valid while the omega0-scaled curvature keeps its truncation error well
  // under the tolerance at the probe step.
  {
    const auto& l = params.layout;
    for (std::size_t s = 0; s < l.m.size(); ++s) {
      auto m = model::seg_map(params.values, l.m[s]);
      for (int c = 0; c < m.cols(); ++c)
        for (int r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-0.03, 0.03);
    }
  }
  model::LatentGrid<double> latent;
  latent.z.resize(cfg.latent_size());
  for (auto& v : latent.z) v = rng.normal(0.0, 0.15);
  latent.xi.resize(cfg.condition_dims());
  for (auto& v : latent.xi) v = rng.uniform(-0.3, 0.3);
  model::RigidParams<double> rigid;
  for (int i = 0; i < 3; ++i) {
    rigid.axis_angle[i] = rigid_near_zero ? rng.uniform(-1e-8, 1e-8) : rng.uniform(-0.1, 0.1);
    rigid.translation[i] = rng.uniform(-0.05, 0.05);
  }

  const int n = 6;
  Mat coords(3, n), targets(cfg.image_channels, n);
  std::vector<std::uint8_t> labels(n);
  for (int p = 0; p < n; ++p) {
    for (int a = 0; a < 3; ++a) coords(a, p) = rng.uniform(-0.4, 0.4);
    for (int c = 0; c < cfg.image_channels; ++c) targets(c, p) = rng.uniform(0.0, 1.0);
    labels[p] = static_cast<std::uint8_t>(rng.uniform_index(cfg.tissue_classes));
  }

  View<double> view{&cfg, &params, &latent, &rigid};
  BatchTargets<double> bt;
  bt.image = &targets;
  bt.observed_channels.resize(cfg.image_channels);
  for (int c = 0; c < cfg.image_channels; ++c) bt.observed_channels[c] = c;
  bt.labels = &labels;
  bt.seg_weight = 1.0;

  Gradients<double> grads = Gradients<double>::zeros(view);
  run_batch(view, coords, bt, GradRequest{}, &grads);

  auto loss_at = [&]() {
    return static_cast<double>(run_batch(view, coords, bt).total);
  };
  GradCheckResult result;
  auto check = [&](double* p, double analytic, const std::string& group) {
    const double keep = *p;
    *p = keep + step;
    const double hi = loss_at();
    *p = keep - step;
    const double lo = loss_at();
    *p = keep;
    const double fd = (hi - lo) / (2.0 * step);
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
    const double rel = std::abs(fd - analytic) / denom;
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_group = group;
    }
  };

  for (std::size_t i = 0; i < params.values.size(); ++i)
    check(&params.values[i], grads.network[i], "network");
  for (std::size_t i = 0; i < latent.z.size(); ++i) check(&latent.z[i], grads.z[i], "latent");
  for (std::size_t i = 0; i < latent.xi.size(); ++i) check(&latent.xi[i], grads.xi[i], "condition");
  for (int i = 0; i < 3; ++i) check(&rigid.axis_angle[i], grads.rigid[i], "rigid");
  for (int i = 0; i < 3; ++i) check(&rigid.translation[i], grads.rigid[3 + i], "rigid");
  return result;
}

// A compact random configuration for repeated gradient checking. omega0 is
// kept moderate: it scales every phase linearly (a mis-wiring shows up at
// any value), while the sin-chain curvature grows like omega0^3 per layer
// and would swamp a 1e-4 central-difference probe at the full 30.
inline model::ModelConfig random_check_config(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "grad_check.config");
  model::ModelConfig cfg;
  cfg.hidden_layers = 2 + static_cast<int>(rng.uniform_index(2));  // 2 or 3
  cfg.hidden_width = 6 + static_cast<int>(rng.uniform_index(5));
  cfg.modulated_layers = {1, cfg.hidden_layers};
  cfg.omega0 = 5.0 + static_cast<double>(rng.uniform_index(8));  // 5..12
  cfg.latent_channels = 3 + static_cast<int>(rng.uniform_index(3));
  cfg.latent_grid = {2 + static_cast<int>(rng.uniform_index(2)),
                     2 + static_cast<int>(rng.uniform_index(2)),
                     1 + static_cast<int>(rng.uniform_index(3))};
  cfg.condition_names = {"c0", "c1"};
  cfg.image_channels = 1 + static_cast<int>(rng.uniform_index(2));
  cfg.tissue_classes = 3 + static_cast<int>(rng.uniform_index(3));
  return cfg;
}

}  // namespace inatlas::engine
