#include "inatlas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "inatlas/errors.hpp"

namespace inatlas::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kWindow);
  const int half = kWindow / 2;
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - half;
    k[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable Gaussian blur with border truncation + weight renormalization.
// The truncated 3D window factorizes per axis, so per-axis renormalization
// equals renormalizing the full 3D window.
void blur_axis(const std::vector<double>& in, std::vector<double>& out, const Dims& dims,
               int axis, const std::vector<double>& kernel) {
  const int half = kWindow / 2;
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  const int extent[3] = {nx, ny, nz};
  const std::size_t stride[3] = {1, static_cast<std::size_t>(nx),
                                 static_cast<std::size_t>(nx) * ny};
  out.assign(in.size(), 0.0);
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        const int pos[3] = {x, y, z};
        const std::size_t base = x + stride[1] * y + stride[2] * z;
        double acc = 0.0, wsum = 0.0;
        for (int t = -half; t <= half; ++t) {
          const int q = pos[axis] + t;
          if (q < 0 || q >= extent[axis]) continue;
          const double w = kernel[t + half];
          acc += w * in[base + static_cast<std::ptrdiff_t>(t) * stride[axis]];
          wsum += w;
        }
        out[base] = acc / wsum;
      }
}

std::vector<double> blur(const std::vector<double>& in, const Dims& dims) {
  static const std::vector<double> kernel = gaussian_kernel();
  std::vector<double> a, b;
  blur_axis(in, a, dims, 0, kernel);
  blur_axis(a, b, dims, 1, kernel);
  blur_axis(b, a, dims, 2, kernel);
  return a;
}

}  // namespace

double psnr(const Volume& a, const Volume& b, const Mask& m, int channel) {
  if (a.dims != b.dims || a.dims != m.dims) throw ShapeError("psnr: dims mismatch");
  const std::size_t nvox = a.voxel_count();
  const std::size_t off = static_cast<std::size_t>(channel) * nvox;
  double mse = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < nvox; ++i) {
    if (!m.inside[i]) continue;
    const double e = static_cast<double>(a.data[off + i]) - b.data[off + i];
    mse += e * e;
    ++count;
  }
  if (count == 0) throw DegenerateInputError("psnr: empty mask");
  mse /= static_cast<double>(count);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim3d(const Volume& a, const Volume& b, const Mask& m, int channel) {
  if (a.dims != b.dims || a.dims != m.dims) throw ShapeError("ssim3d: dims mismatch");
  const std::size_t nvox = a.voxel_count();
  const std::size_t off = static_cast<std::size_t>(channel) * nvox;
  std::vector<double> va(nvox), vb(nvox), vaa(nvox), vbb(nvox), vab(nvox);
  for (std::size_t i = 0; i < nvox; ++i) {
    const double x = a.data[off + i];
    const double y = b.data[off + i];
    va[i] = x;
    vb[i] = y;
    vaa[i] = x * x;
    vbb[i] = y * y;
    vab[i] = x * y;
  }
  const auto mu_a = blur(va, a.dims);
  const auto mu_b = blur(vb, a.dims);
  const auto m_aa = blur(vaa, a.dims);
  const auto m_bb = blur(vbb, a.dims);
  const auto m_ab = blur(vab, a.dims);

  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < nvox; ++i) {
    if (!m.inside[i]) continue;
    const double ma = mu_a[i], mb = mu_b[i];
    const double var_a = m_aa[i] - ma * ma;
    const double var_b = m_bb[i] - mb * mb;
    const double cov = m_ab[i] - ma * mb;
    const double s = ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
                     ((ma * ma + mb * mb + kC1) * (var_a + var_b + kC2));
    sum += s;
    ++count;
  }
  if (count == 0) throw DegenerateInputError("ssim3d: empty mask");
  return sum / static_cast<double>(count);
}

double dice(const LabelMap& a, const LabelMap& b, int k) {
  if (a.dims != b.dims) throw ShapeError("dice: dims mismatch");
  std::size_t na = 0, nb = 0, inter = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const bool in_a = a.labels[i] == k;
    const bool in_b = b.labels[i] == k;
    na += in_a;
    nb += in_b;
    inter += in_a && in_b;
  }
  if (na == 0 && nb == 0) return 1.0;
  if (na == 0 || nb == 0) return 0.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double mean_foreground_dice(const LabelMap& a, const LabelMap& b, int num_classes) {
  double sum = 0.0;
  for (int k = 1; k < num_classes; ++k) sum += dice(a, b, k);
  return sum / (num_classes - 1);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ShapeError("pearson: bad input lengths");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateInputError("pearson: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace inatlas::metrics
