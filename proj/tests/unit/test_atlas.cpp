#include <doctest.h>

#include <cmath>

#include "inatlas/atlas.hpp"
#include "inatlas/errors.hpp"
#include "inatlas/rng.hpp"

using namespace inatlas;

TEST_CASE("single subject gets weight 1") {
  const auto w = atlas::kernel_weights(0.3, {0.9}, 0.1);
  REQUIRE(w.size() == 1);
  CHECK(w[0] == doctest::Approx(1.0));
}

TEST_CASE("equidistant subjects split the weight evenly") {
  const auto w = atlas::kernel_weights(0.0, {-0.4, 0.4}, 0.25);
  CHECK(w[0] == doctest::Approx(0.5));
  CHECK(w[1] == doctest::Approx(0.5));
}

TEST_CASE("ages {30,31,32} wk at t=31, sigma=0.5 wk: frozen Gaussian values") {
  // In weeks directly: w_side/w_center = exp(-1 / (2*0.25)) = exp(-2).
  // Normalized: side weight = exp(-2) / (1 + 2 exp(-2)) = 0.106507,
  // center = 1 / (1 + 2 exp(-2)) = 0.786986. The same values must appear
  // after the [-1,1] age normalization used by the model.
  const double span = 2.0;  // weeks, ages 30..32
  const double sigma_norm = 0.5 * 2.0 / span;
  const auto w = atlas::kernel_weights(0.0, {-1.0, 0.0, 1.0}, sigma_norm);
  CHECK(w[0] == doctest::Approx(0.1065).epsilon(1e-3));
  CHECK(w[1] == doctest::Approx(0.7870).epsilon(1e-3));
  CHECK(w[2] == doctest::Approx(0.1065).epsilon(1e-3));
}

TEST_CASE("weights are nonnegative, sum to 1 within 1e-12, shift invariant") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> ages(12);
    for (auto& a : ages) a = rng.uniform(-1, 1);
    const double t = rng.uniform(-1, 1);
    const double sigma = rng.uniform(0.02, 0.5);
    const auto w = atlas::kernel_weights(t, ages, sigma);
    double sum = 0;
    for (double v : w) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);

    const double shift = rng.uniform(-3, 3);
    std::vector<double> shifted = ages;
    for (auto& a : shifted) a += shift;
    const auto w2 = atlas::kernel_weights(t + shift, shifted, sigma);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i] == doctest::Approx(w2[i]).epsilon(1e-9));
  }
}

TEST_CASE("kernel mass within +-1 week equals 2*Phi(2)-1 for dense uniform ages") {
  // sigma = 0.5 wk; ages densely uniform. The +-1 wk band is +-2 sigma, so
  // its share of the total weight approaches 2*Phi(2)-1 = 0.954499.
  const int n = 4001;
  const double age_lo = 21.0, age_hi = 38.0;
  std::vector<double> ages(n);
  for (int i = 0; i < n; ++i) ages[i] = age_lo + (age_hi - age_lo) * i / (n - 1);
  const double span = age_hi - age_lo;
  auto norm = [&](double wk) { return 2.0 * (wk - age_lo) / span - 1.0; };
  const double t_wk = 29.5;
  const auto w = atlas::kernel_weights(norm(t_wk), [&] {
        std::vector<double> a(n);
        for (int i = 0; i < n; ++i) a[i] = norm(ages[i]);
        return a;
      }(), 0.5 * 2.0 / span);
  double mass = 0.0;
  for (int i = 0; i < n; ++i)
    if (std::abs(ages[i] - t_wk) <= 1.0) mass += w[i];
  CHECK(mass == doctest::Approx(0.954499).epsilon(0.005 / 0.9545));
}

TEST_CASE("all-zero kernel is degenerate") {
  CHECK_THROWS_AS((void)atlas::kernel_weights(100.0, {-1.0, 0.0, 1.0}, 1e-3),
                  DegenerateInputError);
}

TEST_CASE("grid frame maps the longest edge to [-1,1]") {
  const CoordTransform t = atlas::grid_frame({48, 48, 48}, {1, 1, 1});
  const Vec3 lo = t.to_normalized({0, 0, 0});
  const Vec3 hi = t.to_normalized({48, 48, 48});
  CHECK(lo[0] == doctest::Approx(-1.0));
  CHECK(hi[2] == doctest::Approx(1.0));

  // Same world box at half the spacing normalizes identically.
  const CoordTransform t2 = atlas::grid_frame({96, 96, 96}, {0.5, 0.5, 0.5});
  CHECK(t2.scale == doctest::Approx(t.scale));
  CHECK(t2.world_center[0] == doctest::Approx(t.world_center[0]));
}

TEST_CASE("grid_for_resolution reproduces the reference box") {
  const Dims d = atlas::grid_for_resolution({48, 48, 48}, {1, 1, 1}, 0.5);
  CHECK(d == Dims{96, 96, 96});
  CHECK_THROWS_AS((void)atlas::grid_for_resolution({48, 48, 48}, {1, 1, 1}, 0.0), ConfigError);
}
