#include <doctest.h>

#include <cmath>
#include <limits>

#include "inatlas/metrics.hpp"
#include "inatlas/rng.hpp"

using namespace inatlas;

namespace {

Mask full_mask(Dims d) {
  Mask m(d);
  std::fill(m.inside.begin(), m.inside.end(), 1);
  return m;
}

Volume random_volume(Dims d, std::uint64_t seed) {
  Volume v(d, 1);
  Rng rng(seed);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform(0, 1));
  return v;
}

// Straight-line SSIM reference: explicit 11^3 window per voxel, truncated
// and renormalized at the border.
double ssim_reference(const Volume& a, const Volume& b, const Mask& m) {
  const int half = 5;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  const auto& d = a.dims;
  double total = 0.0;
  std::size_t count = 0;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        if (!m.at(x, y, z)) continue;
        double wsum = 0, ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
        for (int dz = -half; dz <= half; ++dz)
          for (int dy = -half; dy <= half; ++dy)
            for (int dx = -half; dx <= half; ++dx) {
              const int px = x + dx, py = y + dy, pz = z + dz;
              if (px < 0 || py < 0 || pz < 0 || px >= d[0] || py >= d[1] || pz >= d[2]) continue;
              const double w = std::exp(-(dx * dx + dy * dy + dz * dz) / (2 * sigma * sigma));
              const double va = a.at(0, px, py, pz);
              const double vb = b.at(0, px, py, pz);
              wsum += w;
              ma += w * va;
              mb += w * vb;
              maa += w * va * va;
              mbb += w * vb * vb;
              mab += w * va * vb;
            }
        ma /= wsum;
        mb /= wsum;
        maa /= wsum;
        mbb /= wsum;
        mab /= wsum;
        const double var_a = maa - ma * ma, var_b = mbb - mb * mb, cov = mab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

}  // namespace

TEST_CASE("psnr: identical volumes give the +inf sentinel") {
  const Volume a = random_volume({8, 8, 8}, 1);
  CHECK(std::isinf(metrics::psnr(a, a, full_mask(a.dims))));
}

TEST_CASE("psnr: constant offset 0.1 gives 20 dB and is symmetric") {
  Volume a({8, 8, 8}, 1), b({8, 8, 8}, 1);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    a.data[i] = 0.3f;
    b.data[i] = 0.4f;
  }
  const Mask m = full_mask(a.dims);
  CHECK(metrics::psnr(a, b, m) == doctest::Approx(20.0).epsilon(1e-5));
  CHECK(metrics::psnr(a, b, m) == doctest::Approx(metrics::psnr(b, a, m)));
}

TEST_CASE("psnr decreases monotonically with added noise") {
  const Volume a = random_volume({10, 10, 10}, 3);
  const Mask m = full_mask(a.dims);
  double last = std::numeric_limits<double>::infinity();
  Rng rng(9);
  for (double sigma : {0.01, 0.03, 0.1}) {
    Volume b = a;
    for (auto& x : b.data) x += static_cast<float>(rng.normal(0, sigma));
    const double p = metrics::psnr(a, b, m);
    CHECK(p < last);
    last = p;
  }
}

TEST_CASE("ssim: self-similarity is exactly 1") {
  const Volume a = random_volume({12, 12, 12}, 5);
  CHECK(metrics::ssim3d(a, a, full_mask(a.dims)) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ssim: inverted textured input scores low") {
  Volume a({16, 16, 16}, 1);
  for (int z = 0; z < 16; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        a.at(0, x, y, z) = 0.5f + 0.45f * static_cast<float>(std::sin(x * 1.1) * std::cos(y * 0.9) *
                                                             std::sin(z * 1.3));
  Volume b = a;
  for (auto& v : b.data) v = 1.0f - v;
  CHECK(metrics::ssim3d(a, b, full_mask(a.dims)) < 0.2);
}

TEST_CASE("ssim matches the independent windowed reference within 1e-6") {
  const Volume a = random_volume({16, 16, 16}, 21);
  Volume b = random_volume({16, 16, 16}, 22);
  // Correlate b with a so the score is not trivially near zero.
  for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = 0.7f * a.data[i] + 0.3f * b.data[i];
  Mask m(a.dims);
  Rng rng(4);
  for (auto& v : m.inside) v = rng.uniform() < 0.5 ? 1 : 0;
  m.inside[0] = 1;
  const double got = metrics::ssim3d(a, b, m);
  const double want = ssim_reference(a, b, m);
  CHECK(std::abs(got - want) < 1e-6);
}

TEST_CASE("dice: identity, arithmetic, disjoint, empty conventions") {
  LabelMap a({10, 10, 2}, 3), b({10, 10, 2}, 3);
  CHECK(metrics::dice(a, b, 0) == doctest::Approx(1.0));  // both full of class 0
  CHECK(metrics::dice(a, b, 1) == doctest::Approx(1.0));  // both empty -> 1
  // |A| = |B| = 100 with overlap 50.
  for (int i = 0; i < 100; ++i) a.labels[i] = 1;
  for (int i = 50; i < 150; ++i) b.labels[i] = 1;
  CHECK(metrics::dice(a, b, 1) == doctest::Approx(0.5));
  // Exactly one empty -> 0.
  std::fill(b.labels.begin(), b.labels.end(), 0);
  CHECK(metrics::dice(a, b, 1) == doctest::Approx(0.0));
  CHECK(metrics::dice(a, a, 1) == doctest::Approx(1.0));
}

TEST_CASE("pearson: perfect anti-correlation") {
  CHECK(metrics::pearson({1, 2, 3, 4}, {8, 6, 4, 2}) == doctest::Approx(-1.0));
}
