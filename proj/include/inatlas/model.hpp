#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "inatlas/errors.hpp"
#include "inatlas/rng.hpp"
#include "inatlas/so3.hpp"

namespace inatlas::model {

// Modulated sinusoidal coordinate network: hidden layer h computes
// sin(omega0 * alpha .* (W a + b) + beta) when modulated (beta deliberately
// not scaled by omega0), sin(omega0 * (W a + b)) otherwise, with
// (alpha; beta) = M z_local + mu. Heads are linear; the segmentation head
// is followed by softmax.
struct ModelConfig {
  int hidden_layers = 5;
  int hidden_width = 1024;
  std::vector<int> modulated_layers = {1, 3, 5};  // 1-based layer indices
  double omega0 = 30.0;
  int latent_channels = 256;  // D
  std::array<int, 3> latent_grid = {3, 3, 3};
  std::vector<std::string> condition_names;  // Q entries
  int image_channels = 1;  // C
  int tissue_classes = 5;  // K

  int condition_dims() const { return static_cast<int>(condition_names.size()); }
  int latent_nodes() const { return latent_grid[0] * latent_grid[1] * latent_grid[2]; }
  int latent_size() const { return latent_channels * latent_nodes(); }
  int local_latent_dims() const { return latent_channels + condition_dims(); }

  bool is_modulated(int layer_one_based) const {
    return std::find(modulated_layers.begin(), modulated_layers.end(), layer_one_based) !=
           modulated_layers.end();
  }

  void validate() const {
    if (hidden_layers < 1) throw ConfigError("ModelConfig: hidden_layers must be >= 1");
    if (hidden_width < 1) throw ConfigError("ModelConfig: hidden_width must be >= 1");
    if (latent_channels < 1) throw ConfigError("ModelConfig: latent_channels must be >= 1");
    if (image_channels < 1) throw ConfigError("ModelConfig: image_channels must be >= 1");
    if (tissue_classes < 2) throw ConfigError("ModelConfig: tissue_classes must be >= 2");
    if (omega0 <= 0.0) throw ConfigError("ModelConfig: omega0 must be positive");
    for (int g : latent_grid)
      if (g < 1) throw ConfigError("ModelConfig: latent grid dims must be >= 1");
    for (int h : modulated_layers)
      if (h < 1 || h > hidden_layers)
        throw ConfigError("ModelConfig: modulated layer " + std::to_string(h) +
                          " outside [1, " + std::to_string(hidden_layers) + "]");
  }
};

// Flat-buffer layout of the shared network parameters theta. Each segment is
// a column-major (rows x cols) block; Eigen maps view into one contiguous
// vector so the optimizer, serializer, and gradient checker all see plain
// arrays.
struct NetLayout {
  struct Seg {
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;
    std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
  };

  std::vector<Seg> w, b;    // per hidden layer
  std::vector<int> mod_slot;  // per hidden layer, -1 when unmodulated
  std::vector<Seg> m, mu;   // per modulation slot
  Seg w_img, b_img, w_seg, b_seg;
  std::size_t total = 0;

  static NetLayout make(const ModelConfig& cfg) {
    cfg.validate();
    NetLayout l;
    std::size_t off = 0;
    auto add = [&off](int rows, int cols) {
      Seg s{off, rows, cols};
      off += s.size();
      return s;
    };
    const int width = cfg.hidden_width;
    for (int h = 1; h <= cfg.hidden_layers; ++h) {
      const int in = h == 1 ? 3 : width;
      l.w.push_back(add(width, in));
      l.b.push_back(add(width, 1));
      if (cfg.is_modulated(h)) {
        l.mod_slot.push_back(static_cast<int>(l.m.size()));
        l.m.push_back(add(2 * width, cfg.local_latent_dims()));
        l.mu.push_back(add(2 * width, 1));
      } else {
        l.mod_slot.push_back(-1);
      }
    }
    l.w_img = add(cfg.image_channels, width);
    l.b_img = add(cfg.image_channels, 1);
    l.w_seg = add(cfg.tissue_classes, width);
    l.b_seg = add(cfg.tissue_classes, 1);
    l.total = off;
    return l;
  }
};

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
Eigen::Map<MatX<T>> seg_map(std::vector<T>& buf, const NetLayout::Seg& s) {
  return Eigen::Map<MatX<T>>(buf.data() + s.offset, s.rows, s.cols);
}
template <typename T>
Eigen::Map<const MatX<T>> seg_map(const std::vector<T>& buf, const NetLayout::Seg& s) {
  return Eigen::Map<const MatX<T>>(buf.data() + s.offset, s.rows, s.cols);
}

// Per-subject spatial latent code plus explicit conditions. The z grid is
// stored node-major: entry (d, node) lives at node * D + d, nodes ordered
// x1-fastest.
template <typename T>
struct LatentGrid {
  std::vector<T> z;   // D * X1 * X2 * X3
  std::vector<T> xi;  // Q
};

template <typename T>
struct RigidParams {
  std::array<T, 3> axis_angle{T(0), T(0), T(0)};
  std::array<T, 3> translation{T(0), T(0), T(0)};
};

template <typename T>
struct ModelParams {
  NetLayout layout;
  std::vector<T> values;

  explicit ModelParams(const ModelConfig& cfg) : layout(NetLayout::make(cfg)) {
    values.assign(layout.total, T(0));
  }
};

// Sinusoidal-network initialization: first layer U[-1/in, 1/in], deeper
// layers and heads U[-sqrt(6/in)/omega0, sqrt(6/in)/omega0], biases zero.
// Modulation starts at identity (M = 0, mu = (1...1; 0...0)) so a fresh
// model equals the unmodulated network for every latent.
template <typename T>
ModelParams<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<T> params(cfg);
  Rng rng = Rng::derive(seed, "model.init");
  const NetLayout& l = params.layout;
  for (std::size_t h = 0; h < l.w.size(); ++h) {
    const int in = l.w[h].cols;
    const double bound = h == 0 ? 1.0 / in : std::sqrt(6.0 / in) / cfg.omega0;
    auto wm = seg_map(params.values, l.w[h]);
    for (int c = 0; c < wm.cols(); ++c)
      for (int r = 0; r < wm.rows(); ++r) wm(r, c) = static_cast<T>(rng.uniform(-bound, bound));
  }
  const double head_bound = std::sqrt(6.0 / cfg.hidden_width) / cfg.omega0;
  for (const auto* seg : {&l.w_img, &l.w_seg}) {
    auto wm = seg_map(params.values, *seg);
    for (int c = 0; c < wm.cols(); ++c)
      for (int r = 0; r < wm.rows(); ++r)
        wm(r, c) = static_cast<T>(rng.uniform(-head_bound, head_bound));
  }
  for (std::size_t s = 0; s < l.mu.size(); ++s) {
    auto mum = seg_map(params.values, l.mu[s]);
    const int width = cfg.hidden_width;
    for (int r = 0; r < width; ++r) mum(r, 0) = T(1);  // alpha half
  }
  return params;
}

template <typename T>
LatentGrid<T> init_latent(const ModelConfig& cfg, Rng& rng, bool random_conditions) {
  LatentGrid<T> g;
  g.z.resize(cfg.latent_size());
  for (auto& v : g.z) v = static_cast<T>(rng.normal(0.0, 0.01));
  g.xi.assign(cfg.condition_dims(), T(0));
  if (random_conditions)
    for (auto& v : g.xi) v = static_cast<T>(rng.normal(0.0, 0.01));
  return g;
}

// ---------------------------------------------------------------------------
// Single-point reference operations. These are the plain, tape-free
// definitions of the model math; the batched engine must agree with them.
// ---------------------------------------------------------------------------

// Trilinear interpolation over the latent grid with boundary clamping; the
// condition vector is appended unmodified. Grid nodes span [-1,1] per axis
// (a single-node axis is spatially constant).
template <typename T>
std::vector<T> interp_latent(const ModelConfig& cfg, const LatentGrid<T>& g,
                             const std::array<double, 3>& x) {
  const int D = cfg.latent_channels;
  std::array<int, 3> i0{};
  std::array<double, 3> f{};
  for (int a = 0; a < 3; ++a) {
    const int nodes = cfg.latent_grid[a];
    if (nodes == 1) {
      i0[a] = 0;
      f[a] = 0.0;
      continue;
    }
    const double c = std::clamp(x[a], -1.0, 1.0);
    double u = (c + 1.0) * 0.5 * (nodes - 1);
    int i = static_cast<int>(std::floor(u));
    i = std::clamp(i, 0, nodes - 2);
    i0[a] = i;
    f[a] = u - i;
  }
  std::vector<T> out(cfg.local_latent_dims(), T(0));
  const int X1 = cfg.latent_grid[0], X2 = cfg.latent_grid[1];
  for (int c2 = 0; c2 < 2; ++c2)
    for (int c1 = 0; c1 < 2; ++c1)
      for (int c0 = 0; c0 < 2; ++c0) {
        const int n0 = std::min(i0[0] + c0, cfg.latent_grid[0] - 1);
        const int n1 = std::min(i0[1] + c1, cfg.latent_grid[1] - 1);
        const int n2 = std::min(i0[2] + c2, cfg.latent_grid[2] - 1);
        const double w = (c0 ? f[0] : 1.0 - f[0]) * (c1 ? f[1] : 1.0 - f[1]) *
                         (c2 ? f[2] : 1.0 - f[2]);
        const std::size_t node = (static_cast<std::size_t>(n2) * X2 + n1) * X1 + n0;
        for (int d = 0; d < D; ++d)
          out[d] += static_cast<T>(w) * g.z[node * D + d];
      }
  for (int q = 0; q < cfg.condition_dims(); ++q) out[D + q] = g.xi[q];
  return out;
}

// R(x) = exp(r^) x + t.
template <typename T>
std::array<double, 3> rigid_transform(const RigidParams<T>& p, const std::array<double, 3>& x) {
  const so3::Mat3 rot = so3::exp_map(
      {static_cast<double>(p.axis_angle[0]), static_cast<double>(p.axis_angle[1]),
       static_cast<double>(p.axis_angle[2])});
  const so3::Vec3d y = so3::apply(rot, {x[0], x[1], x[2]});
  return {y[0] + static_cast<double>(p.translation[0]),
          y[1] + static_cast<double>(p.translation[1]),
          y[2] + static_cast<double>(p.translation[2])};
}

// (alpha; beta) = M z_local + mu for one modulated layer slot.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> modulate(const ModelConfig& cfg,
                                                   const ModelParams<T>& params, int slot,
                                                   const std::vector<T>& z_local) {
  const NetLayout& l = params.layout;
  auto m = seg_map(params.values, l.m[slot]);
  auto mu = seg_map(params.values, l.mu[slot]);
  const int width = cfg.hidden_width;
  std::vector<T> alpha(width), beta(width);
  for (int r = 0; r < 2 * width; ++r) {
    T acc = mu(r, 0);
    for (int c = 0; c < m.cols(); ++c) acc += m(r, c) * z_local[c];
    if (r < width)
      alpha[r] = acc;
    else
      beta[r - width] = acc;
  }
  return {alpha, beta};
}

struct PointOutput {
  std::vector<double> intensities;    // C
  std::vector<double> tissue_probs;   // K, softmax normalized
  std::vector<double> tissue_logits;  // K
};

// Reference forward pass at one (already rigidly transformed) coordinate.
template <typename T>
PointOutput forward_point(const ModelConfig& cfg, const ModelParams<T>& params,
                          const std::array<double, 3>& x, const std::vector<T>& z_local) {
  if (static_cast<int>(z_local.size()) != cfg.local_latent_dims())
    throw ShapeError("forward_point: z_local length mismatch");
  const NetLayout& l = params.layout;
  std::vector<double> act(x.begin(), x.end());
  for (int h = 1; h <= cfg.hidden_layers; ++h) {
    auto w = seg_map(params.values, l.w[h - 1]);
    auto b = seg_map(params.values, l.b[h - 1]);
    std::vector<double> pre(cfg.hidden_width);
    for (int r = 0; r < cfg.hidden_width; ++r) {
      double acc = static_cast<double>(b(r, 0));
      for (int c = 0; c < w.cols(); ++c) acc += static_cast<double>(w(r, c)) * act[c];
      pre[r] = acc;
    }
    const int slot = l.mod_slot[h - 1];
    std::vector<double> next(cfg.hidden_width);
    if (slot >= 0) {
      auto [alpha, beta] = modulate(cfg, params, slot, z_local);
      for (int r = 0; r < cfg.hidden_width; ++r)
        next[r] = std::sin(cfg.omega0 * static_cast<double>(alpha[r]) * pre[r] +
                           static_cast<double>(beta[r]));
    } else {
      for (int r = 0; r < cfg.hidden_width; ++r) next[r] = std::sin(cfg.omega0 * pre[r]);
    }
    for (double v : next)
      if (!std::isfinite(v))
        throw NumericError("forward_point: non-finite activation in layer " + std::to_string(h));
    act = std::move(next);
  }

  PointOutput out;
  auto head = [&](const NetLayout::Seg& ws, const NetLayout::Seg& bs) {
    auto w = seg_map(params.values, ws);
    auto b = seg_map(params.values, bs);
    std::vector<double> y(ws.rows);
    for (int r = 0; r < ws.rows; ++r) {
      double acc = static_cast<double>(b(r, 0));
      for (int c = 0; c < ws.cols; ++c) acc += static_cast<double>(w(r, c)) * act[c];
      y[r] = acc;
    }
    return y;
  };
  out.intensities = head(l.w_img, l.b_img);
  out.tissue_logits = head(l.w_seg, l.b_seg);
  out.tissue_probs.resize(out.tissue_logits.size());
  const double mx = *std::max_element(out.tissue_logits.begin(), out.tissue_logits.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < out.tissue_probs.size(); ++k) {
    out.tissue_probs[k] = std::exp(out.tissue_logits[k] - mx);
    sum += out.tissue_probs[k];
  }
  for (auto& p : out.tissue_probs) p /= sum;
  return out;
}

}  // namespace inatlas::model
