#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "inatlas/errors.hpp"
#include "inatlas/model.hpp"
#include "inatlas/so3.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace inatlas::engine {

using model::LatentGrid;
using model::MatX;
using model::ModelConfig;
using model::ModelParams;
using model::NetLayout;
using model::RigidParams;
using model::VecX;

// Everything needed to evaluate the model for one subject.
template <typename T>
struct View {
  const ModelConfig* cfg = nullptr;
  const ModelParams<T>* params = nullptr;
  const LatentGrid<T>* latent = nullptr;
  const RigidParams<T>* rigid = nullptr;  // null = identity transform
};

struct GradRequest {
  bool network = true;
  bool latent = true;
  bool rigid = true;
  bool condition = true;
  bool any() const { return network || latent || rigid || condition; }
};

template <typename T>
struct Gradients {
  std::vector<T> network;     // NetLayout-flat
  std::vector<T> z;           // latent grid
  std::vector<T> xi;          // Q
  std::array<T, 6> rigid{};   // axis-angle then translation

  static Gradients zeros(const View<T>& v) {
    Gradients g;
    g.network.assign(v.params->layout.total, T(0));
    g.z.assign(v.cfg->latent_size(), T(0));
    g.xi.assign(v.cfg->condition_dims(), T(0));
    g.rigid.fill(T(0));
    return g;
  }
  void add(const Gradients& o) {
    for (std::size_t i = 0; i < network.size(); ++i) network[i] += o.network[i];
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += o.z[i];
    for (std::size_t i = 0; i < xi.size(); ++i) xi[i] += o.xi[i];
    for (int i = 0; i < 6; ++i) rigid[i] += o.rigid[i];
  }
  void scale(T s) {
    for (auto& v : network) v *= s;
    for (auto& v : z) v *= s;
    for (auto& v : xi) v *= s;
    for (auto& v : rigid) v *= s;
  }
};

// Recorded forward pass over one coordinate batch. Buffers are kept in the
// exact order the backward pass replays them (reverse topological order of
// the fixed graph).
template <typename T>
struct Tape {
  int n = 0;
  MatX<T> coords;   // 3 x n, leaf
  MatX<T> warped;   // 3 x n, after rigid transform
  std::vector<std::array<int, 3>> cell;
  std::vector<std::array<T, 3>> frac;
  std::vector<std::array<bool, 3>> interior;  // axis gradient valid (not clamped)
  MatX<T> zloc;     // (D+Q) x n
  std::vector<MatX<T>> pre;    // per layer
  std::vector<MatX<T>> phase;  // per layer
  std::vector<MatX<T>> act;    // per layer
  std::vector<MatX<T>> ab;     // per modulation slot
  MatX<T> img;     // C x n
  MatX<T> logits;  // K x n
  MatX<T> probs;   // K x n
};

namespace detail {

template <typename T>
void gather_latent(const View<T>& view, Tape<T>& tape) {
  const ModelConfig& cfg = *view.cfg;
  const int n = tape.n;
  const int D = cfg.latent_channels;
  const int Q = cfg.condition_dims();
  tape.cell.resize(n);
  tape.frac.resize(n);
  tape.interior.resize(n);
  tape.zloc.resize(D + Q, n);
  const T* z = view.latent->z.data();
  const int X1 = cfg.latent_grid[0], X2 = cfg.latent_grid[1];
  for (int p = 0; p < n; ++p) {
    for (int a = 0; a < 3; ++a) {
      const int nodes = cfg.latent_grid[a];
      if (nodes == 1) {
        tape.cell[p][a] = 0;
        tape.frac[p][a] = T(0);
        tape.interior[p][a] = false;
        continue;
      }
      const T y = tape.warped(a, p);
      const T c = y < T(-1) ? T(-1) : (y > T(1) ? T(1) : y);
      T u = (c + T(1)) * T(0.5) * T(nodes - 1);
      int i = static_cast<int>(std::floor(static_cast<double>(u)));
      if (i < 0) i = 0;
      if (i > nodes - 2) i = nodes - 2;
      tape.cell[p][a] = i;
      tape.frac[p][a] = u - T(i);
      tape.interior[p][a] = (y > T(-1) && y < T(1));
    }
    for (int d = 0; d < D; ++d) tape.zloc(d, p) = T(0);
    for (int c2 = 0; c2 < 2; ++c2)
      for (int c1 = 0; c1 < 2; ++c1)
        for (int c0 = 0; c0 < 2; ++c0) {
          const int n0 = std::min(tape.cell[p][0] + c0, cfg.latent_grid[0] - 1);
          const int n1 = std::min(tape.cell[p][1] + c1, cfg.latent_grid[1] - 1);
          const int n2 = std::min(tape.cell[p][2] + c2, cfg.latent_grid[2] - 1);
          const T w = (c0 ? tape.frac[p][0] : T(1) - tape.frac[p][0]) *
                      (c1 ? tape.frac[p][1] : T(1) - tape.frac[p][1]) *
                      (c2 ? tape.frac[p][2] : T(1) - tape.frac[p][2]);
          const std::size_t node = (static_cast<std::size_t>(n2) * X2 + n1) * X1 + n0;
          const T* zn = z + node * D;
          for (int d = 0; d < D; ++d) tape.zloc(d, p) += w * zn[d];
        }
    for (int q = 0; q < Q; ++q) tape.zloc(D + q, p) = view.latent->xi[q];
  }
}

// Adjoint of the gather: scatters into dz and, when the warp is trainable,
// pushes the coordinate adjoint back through the interpolation weights.
template <typename T>
void gather_backward(const View<T>& view, const Tape<T>& tape, const MatX<T>& d_zloc_top,
                     std::vector<T>* dz, MatX<T>* d_warped) {
  const ModelConfig& cfg = *view.cfg;
  const int D = cfg.latent_channels;
  const int X1 = cfg.latent_grid[0], X2 = cfg.latent_grid[1];
  const T* z = view.latent->z.data();
  for (int p = 0; p < tape.n; ++p) {
    const auto& cell = tape.cell[p];
    const auto& frac = tape.frac[p];
    for (int c2 = 0; c2 < 2; ++c2)
      for (int c1 = 0; c1 < 2; ++c1)
        for (int c0 = 0; c0 < 2; ++c0) {
          const int n0 = std::min(cell[0] + c0, cfg.latent_grid[0] - 1);
          const int n1 = std::min(cell[1] + c1, cfg.latent_grid[1] - 1);
          const int n2 = std::min(cell[2] + c2, cfg.latent_grid[2] - 1);
          const T fx = c0 ? frac[0] : T(1) - frac[0];
          const T fy = c1 ? frac[1] : T(1) - frac[1];
          const T fz = c2 ? frac[2] : T(1) - frac[2];
          const T w = fx * fy * fz;
          const std::size_t node = (static_cast<std::size_t>(n2) * X2 + n1) * X1 + n0;
          if (dz) {
            T* dzn = dz->data() + node * D;
            for (int d = 0; d < D; ++d) dzn[d] += w * d_zloc_top(d, p);
          }
          if (d_warped) {
            // s = <z_node, d_zloc(:,p)>
            T s = T(0);
            const T* zn = z + node * D;
            for (int d = 0; d < D; ++d) s += zn[d] * d_zloc_top(d, p);
            const T sx = c0 ? T(1) : T(-1);
            const T sy = c1 ? T(1) : T(-1);
            const T sz = c2 ? T(1) : T(-1);
            if (tape.interior[p][0])
              (*d_warped)(0, p) += s * sx * fy * fz * T(0.5) * T(cfg.latent_grid[0] - 1);
            if (tape.interior[p][1])
              (*d_warped)(1, p) += s * fx * sy * fz * T(0.5) * T(cfg.latent_grid[1] - 1);
            if (tape.interior[p][2])
              (*d_warped)(2, p) += s * fx * fy * sz * T(0.5) * T(cfg.latent_grid[2] - 1);
          }
        }
  }
}

}  // namespace detail

// Forward pass: rigid warp, latent gather, modulated sinusoidal layers,
// linear heads, softmax. Returns the tape required by backward().
template <typename T>
Tape<T> forward(const View<T>& view, const MatX<T>& coords) {
  const ModelConfig& cfg = *view.cfg;
  if (coords.rows() != 3) throw ShapeError("engine::forward: coords must be 3 x n");
  Tape<T> tape;
  tape.n = static_cast<int>(coords.cols());
  tape.coords = coords;

  // Rigid transform (identity when absent).
  if (view.rigid) {
    const so3::Mat3 rot = so3::exp_map({static_cast<double>(view.rigid->axis_angle[0]),
                                        static_cast<double>(view.rigid->axis_angle[1]),
                                        static_cast<double>(view.rigid->axis_angle[2])});
    Eigen::Matrix<T, 3, 3> R;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) R(i, j) = static_cast<T>(rot[i][j]);
    Eigen::Matrix<T, 3, 1> t(view.rigid->translation[0], view.rigid->translation[1],
                             view.rigid->translation[2]);
    tape.warped = (R * coords).colwise() + t;
  } else {
    tape.warped = coords;
  }

  detail::gather_latent(view, tape);

  const NetLayout& l = view.params->layout;
  const auto& values = view.params->values;
  const T omega0 = static_cast<T>(cfg.omega0);
  tape.pre.resize(cfg.hidden_layers);
  tape.phase.resize(cfg.hidden_layers);
  tape.act.resize(cfg.hidden_layers);
  tape.ab.resize(l.m.size());

  const MatX<T>* a_prev = &tape.warped;
  for (int h = 1; h <= cfg.hidden_layers; ++h) {
    auto w = model::seg_map(values, l.w[h - 1]);
    auto b = model::seg_map(values, l.b[h - 1]);
    tape.pre[h - 1] = (w * (*a_prev)).colwise() + b.col(0);
    const int slot = l.mod_slot[h - 1];
    if (slot >= 0) {
      auto m = model::seg_map(values, l.m[slot]);
      auto mu = model::seg_map(values, l.mu[slot]);
      tape.ab[slot] = (m * tape.zloc).colwise() + mu.col(0);
      const int width = cfg.hidden_width;
      tape.phase[h - 1] = (omega0 * tape.ab[slot].topRows(width).array() *
                               tape.pre[h - 1].array() +
                           tape.ab[slot].bottomRows(width).array())
                              .matrix();
    } else {
      tape.phase[h - 1] = omega0 * tape.pre[h - 1];
    }
    tape.act[h - 1] = tape.phase[h - 1].array().sin().matrix();
    if (!tape.act[h - 1].allFinite())
      throw NumericError("engine::forward: non-finite activation in layer " + std::to_string(h));
    a_prev = &tape.act[h - 1];
  }

  auto w_img = model::seg_map(values, l.w_img);
  auto b_img = model::seg_map(values, l.b_img);
  auto w_seg = model::seg_map(values, l.w_seg);
  auto b_seg = model::seg_map(values, l.b_seg);
  tape.img = (w_img * (*a_prev)).colwise() + b_img.col(0);
  tape.logits = (w_seg * (*a_prev)).colwise() + b_seg.col(0);

  tape.probs.resize(tape.logits.rows(), tape.n);
  for (int p = 0; p < tape.n; ++p) {
    const T mx = tape.logits.col(p).maxCoeff();
    VecX<T> e = (tape.logits.col(p).array() - mx).exp();
    tape.probs.col(p) = e / e.sum();
  }
  return tape;
}

// Backward pass from head adjoints; accumulates into `grads` (callers zero
// or reuse buffers as they see fit). Unreached parameters keep exact zeros.
template <typename T>
void backward(const View<T>& view, const Tape<T>& tape, const MatX<T>& d_img,
              const MatX<T>& d_logits, const GradRequest& req, Gradients<T>& grads) {
  const ModelConfig& cfg = *view.cfg;
  if (d_img.rows() != cfg.image_channels || d_img.cols() != tape.n)
    throw ShapeError("engine::backward: d_img shape mismatch");
  if (d_logits.rows() != cfg.tissue_classes || d_logits.cols() != tape.n)
    throw ShapeError("engine::backward: d_logits shape mismatch");
  const NetLayout& l = view.params->layout;
  const auto& values = view.params->values;
  const T omega0 = static_cast<T>(cfg.omega0);
  const int width = cfg.hidden_width;
  const int D = cfg.latent_channels;
  const int Q = cfg.condition_dims();

  const MatX<T>& act_last = tape.act[cfg.hidden_layers - 1];
  auto w_img = model::seg_map(values, l.w_img);
  auto w_seg = model::seg_map(values, l.w_seg);
  if (req.network) {
    model::seg_map(grads.network, l.w_img) += d_img * act_last.transpose();
    model::seg_map(grads.network, l.b_img).col(0) += d_img.rowwise().sum();
    model::seg_map(grads.network, l.w_seg) += d_logits * act_last.transpose();
    model::seg_map(grads.network, l.b_seg).col(0) += d_logits.rowwise().sum();
  }
  MatX<T> d_act = w_img.transpose() * d_img + w_seg.transpose() * d_logits;

  MatX<T> d_zloc = MatX<T>::Zero(D + Q, tape.n);
  MatX<T> d_warped = MatX<T>::Zero(3, tape.n);
  for (int h = cfg.hidden_layers; h >= 1; --h) {
    const MatX<T>& a_prev = h == 1 ? tape.warped : tape.act[h - 2];
    const MatX<T> cos_phase = tape.phase[h - 1].array().cos().matrix();
    MatX<T> d_phase = d_act.cwiseProduct(cos_phase);
    const int slot = l.mod_slot[h - 1];
    MatX<T> d_pre;
    if (slot >= 0) {
      const auto alpha = tape.ab[slot].topRows(width);
      d_pre = omega0 * d_phase.cwiseProduct(alpha);
      MatX<T> d_ab(2 * width, tape.n);
      d_ab.topRows(width) = omega0 * d_phase.cwiseProduct(tape.pre[h - 1]);
      d_ab.bottomRows(width) = d_phase;
      auto m = model::seg_map(values, l.m[slot]);
      if (req.network) {
        model::seg_map(grads.network, l.m[slot]) += d_ab * tape.zloc.transpose();
        model::seg_map(grads.network, l.mu[slot]).col(0) += d_ab.rowwise().sum();
      }
      if (req.latent || req.rigid || req.condition) d_zloc += m.transpose() * d_ab;
    } else {
      d_pre = omega0 * d_phase;
    }
    auto w = model::seg_map(values, l.w[h - 1]);
    if (req.network) {
      model::seg_map(grads.network, l.w[h - 1]) += d_pre * a_prev.transpose();
      model::seg_map(grads.network, l.b[h - 1]).col(0) += d_pre.rowwise().sum();
    }
    if (h > 1) {
      d_act = w.transpose() * d_pre;
    } else if (req.rigid) {
      d_warped += w.transpose() * d_pre;
    }
  }

  if (req.condition && Q > 0) {
    Eigen::Map<VecX<T>> dxi(grads.xi.data(), Q);
    dxi += d_zloc.bottomRows(Q).rowwise().sum();
  }
  const bool need_coord_grad = req.rigid && view.rigid != nullptr;
  if (req.latent || need_coord_grad) {
    detail::gather_backward(view, tape, MatX<T>(d_zloc.topRows(D)),
                            req.latent ? &grads.z : nullptr,
                            need_coord_grad ? &d_warped : nullptr);
  }
  if (need_coord_grad) {
    const so3::Vec3d r{static_cast<double>(view.rigid->axis_angle[0]),
                       static_cast<double>(view.rigid->axis_angle[1]),
                       static_cast<double>(view.rigid->axis_angle[2])};
    const auto jac = so3::exp_map_jacobian(r);
    for (int m = 0; m < 3; ++m) {
      Eigen::Matrix<T, 3, 3> jm;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) jm(i, j) = static_cast<T>(jac[m][i][j]);
      grads.rigid[m] += (jm * tape.coords).cwiseProduct(d_warped).sum();
    }
    const VecX<T> dt = d_warped.rowwise().sum();
    for (int a = 0; a < 3; ++a) grads.rigid[3 + a] += dt(a);
  }
}

// ---------------------------------------------------------------------------
// Losses. Both return the SUM over batch points; callers divide by n once
// (gradients are linear, so per-chunk sums reduce deterministically).
// ---------------------------------------------------------------------------

// Per point: sum over observed channels of (pred - target)^2.
template <typename T>
T mse_sum(const MatX<T>& pred, const MatX<T>& target, const std::vector<int>& observed,
          MatX<T>& d_pred) {
  d_pred = MatX<T>::Zero(pred.rows(), pred.cols());
  T loss = T(0);
  for (int c : observed) {
    for (int p = 0; p < pred.cols(); ++p) {
      const T e = pred(c, p) - target(c, p);
      loss += e * e;
      d_pred(c, p) = T(2) * e;
    }
  }
  return loss;
}

// Per point: -log p[label]; adjoint formed directly on the logits.
template <typename T>
T cross_entropy_sum(const MatX<T>& probs, const std::vector<std::uint8_t>& labels, T weight,
                    MatX<T>& d_logits) {
  const int K = static_cast<int>(probs.rows());
  d_logits = weight * probs;
  T loss = T(0);
  for (int p = 0; p < probs.cols(); ++p) {
    const int k = labels[p];
    if (k < 0 || k >= K) throw ShapeError("cross_entropy_sum: label out of range");
    loss -= std::log(probs(k, p));
    d_logits(k, p) -= weight;
  }
  return weight * loss;
}

// ---------------------------------------------------------------------------
// Chunked batch runner: fixed chunk structure (independent of thread count)
// with in-order reduction, so results are bit-identical however it runs.
// ---------------------------------------------------------------------------

template <typename T>
struct BatchTargets {
  const MatX<T>* image = nullptr;              // C x n
  std::vector<int> observed_channels;          // channels entering the MSE
  const std::vector<std::uint8_t>* labels = nullptr;  // optional, n entries
  T seg_weight = T(1);
};

template <typename T>
struct BatchLoss {
  T mse = T(0);
  T ce = T(0);
  T total = T(0);
};

inline int chunk_count_for(int n) {
  constexpr int kChunk = 512;
  int chunks = (n + kChunk - 1) / kChunk;
  return std::min(std::max(chunks, 1), 16);
}

template <typename T>
BatchLoss<T> run_batch(const View<T>& view, const MatX<T>& coords, const BatchTargets<T>& targets,
                       const GradRequest& req, Gradients<T>* grads) {
  const int n = static_cast<int>(coords.cols());
  if (n == 0) throw DegenerateInputError("run_batch: empty batch");
  const int chunks = chunk_count_for(n);
  const int chunk_size = (n + chunks - 1) / chunks;

  std::vector<BatchLoss<T>> losses(chunks);
  std::vector<Gradients<T>> partials;
  if (grads && req.any()) {
    partials.reserve(chunks);
    for (int i = 0; i < chunks; ++i) partials.push_back(Gradients<T>::zeros(view));
  }

#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
  for (int ci = 0; ci < chunks; ++ci) {
    const int lo = ci * chunk_size;
    const int hi = std::min(n, lo + chunk_size);
    if (lo >= hi) continue;
    const MatX<T> sub = coords.middleCols(lo, hi - lo);
    Tape<T> tape = forward(view, sub);

    MatX<T> d_img = MatX<T>::Zero(view.cfg->image_channels, tape.n);
    MatX<T> d_logits = MatX<T>::Zero(view.cfg->tissue_classes, tape.n);
    BatchLoss<T>& bl = losses[ci];
    if (targets.image) {
      const MatX<T> timg = targets.image->middleCols(lo, hi - lo);
      bl.mse = mse_sum(tape.img, timg, targets.observed_channels, d_img);
    }
    if (targets.labels) {
      std::vector<std::uint8_t> sub_labels(targets.labels->begin() + lo,
                                           targets.labels->begin() + hi);
      bl.ce = cross_entropy_sum(tape.probs, sub_labels, targets.seg_weight, d_logits);
    }
    bl.total = bl.mse + bl.ce;
    if (grads && req.any()) backward(view, tape, d_img, d_logits, req, partials[ci]);
  }

  BatchLoss<T> out;
  for (int ci = 0; ci < chunks; ++ci) {
    out.mse += losses[ci].mse;
    out.ce += losses[ci].ce;
  }
  const T inv_n = T(1) / T(n);
  out.mse *= inv_n;
  out.ce *= inv_n;
  out.total = out.mse + out.ce;
  if (grads && req.any()) {
    for (int ci = 0; ci < chunks; ++ci) grads->add(partials[ci]);
    grads->scale(inv_n);
  }
  return out;
}

// Loss-only evaluation (no gradients).
template <typename T>
BatchLoss<T> run_batch(const View<T>& view, const MatX<T>& coords,
                       const BatchTargets<T>& targets) {
  return run_batch(view, coords, targets, GradRequest{}, static_cast<Gradients<T>*>(nullptr));
}

// Forward-only evaluation over arbitrarily many coordinates.
template <typename T>
void infer(const View<T>& view, const MatX<T>& coords, MatX<T>* intensities, MatX<T>* probs) {
  const int n = static_cast<int>(coords.cols());
  if (intensities) intensities->resize(view.cfg->image_channels, n);
  if (probs) probs->resize(view.cfg->tissue_classes, n);
  const int chunks = std::max(1, (n + 4095) / 4096);
  const int chunk_size = (n + chunks - 1) / chunks;
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
  for (int ci = 0; ci < chunks; ++ci) {
    const int lo = ci * chunk_size;
    const int hi = std::min(n, lo + chunk_size);
    if (lo >= hi) continue;
    Tape<T> tape = forward(view, MatX<T>(coords.middleCols(lo, hi - lo)));
    if (intensities) intensities->middleCols(lo, hi - lo) = tape.img;
    if (probs) probs->middleCols(lo, hi - lo) = tape.probs;
  }
}

}  // namespace inatlas::engine
