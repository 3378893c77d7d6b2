#include <doctest.h>

#include <cmath>

#include "inatlas/errors.hpp"
#include "inatlas/metrics.hpp"
#include "inatlas/phantom.hpp"

using namespace inatlas;
using namespace inatlas::phantom;

namespace {

PhantomSpec base_spec() {
  PhantomSpec s;
  s.grid = 48;
  s.age_weeks = 30.0;
  s.lv_fraction = 0.05;
  s.seed = 2024;
  return s;
}

}  // namespace

TEST_CASE("generation is deterministic") {
  const Subject a = generate_subject(base_spec());
  const Subject b = generate_subject(base_spec());
  CHECK(a.labels.labels == b.labels.labels);
  CHECK(a.volumes.data == b.volumes.data);
}

TEST_CASE("voxel-counted LV fraction tracks the requested fraction") {
  const Subject s = generate_subject(base_spec());
  const double lv = measure_tissue_volume(s, kLateralVentricle);
  double brain = 0.0;
  for (int k = 1; k < kNumClasses; ++k) brain += measure_tissue_volume(s, k);
  const double measured = lv / brain;
  CHECK(std::abs(measured - 0.05) / 0.05 < 0.10);
}

TEST_CASE("brain volume grows with age") {
  PhantomSpec young = base_spec(), old = base_spec();
  young.age_weeks = 21.0;
  old.age_weeks = 38.0;
  auto vol = [](const Subject& s) {
    double v = 0.0;
    for (int k = 1; k < kNumClasses; ++k) v += measure_tissue_volume(s, k);
    return v;
  };
  CHECK(vol(generate_subject(old)) > vol(generate_subject(young)));
}

TEST_CASE("LV volume is monotone in lv_fraction") {
  PhantomSpec lo = base_spec(), hi = base_spec();
  lo.lv_fraction = 0.03;
  hi.lv_fraction = 0.08;
  const double v_lo = measure_tissue_volume(generate_subject(lo), kLateralVentricle);
  const double v_hi = measure_tissue_volume(generate_subject(hi), kLateralVentricle);
  CHECK(v_hi > v_lo * 1.5);
}

TEST_CASE("bridge WM present iff corpus callosum present") {
  PhantomSpec with = base_spec(), without = base_spec();
  without.cc_present = false;
  const Subject a = generate_subject(with);
  const Subject b = generate_subject(without);
  CHECK(bridge_wm_voxel_count(a.labels) > 50);
  CHECK(bridge_wm_voxel_count(b.labels) == 0);
  CHECK(a.conditions.at("cc_acc") == -1.0);
  CHECK(b.conditions.at("cc_acc") == 1.0);
}

TEST_CASE("class 4 appears iff lv_fraction positive") {
  PhantomSpec none = base_spec();
  none.lv_fraction = 0.0;
  const Subject s0 = generate_subject(none);
  CHECK(measure_tissue_volume(s0, kLateralVentricle) == 0.0);
  const Subject s1 = generate_subject(base_spec());
  CHECK(measure_tissue_volume(s1, kLateralVentricle) > 0.0);
}

TEST_CASE("tissue mean intensities sit near the configured levels") {
  const Subject s = generate_subject(base_spec());
  const auto means = tissue_mean_intensities(s.volumes, s.labels, 0);
  CHECK(std::abs(means.at(kCsf) - 0.85) < 0.01);
  CHECK(std::abs(means.at(kCorticalGm) - 0.45) < 0.01);
  CHECK(std::abs(means.at(kWhiteMatter) - 0.65) < 0.01);
}

TEST_CASE("modality 2 inverts tissue contrast") {
  const Subject s = generate_subject(base_spec());
  const auto m0 = tissue_mean_intensities(s.volumes, s.labels, 0);
  const auto m1 = tissue_mean_intensities(s.volumes, s.labels, 1);
  std::vector<double> a, b;
  for (const auto& [k, v] : m0) {
    a.push_back(v);
    b.push_back(m1.at(k));
  }
  CHECK(metrics::pearson(a, b) < -0.5);
}

TEST_CASE("volumes, labels, and mask share dims; mask is the foreground") {
  const Subject s = generate_subject(base_spec());
  CHECK(s.volumes.dims == s.labels.dims);
  CHECK(s.volumes.dims == s.mask.dims);
  for (std::size_t i = 0; i < s.mask.inside.size(); ++i)
    CHECK((s.labels.labels[i] != kBackground) == (s.mask.inside[i] != 0));
}

TEST_CASE("mask invariants: non-empty, intensities in [0,1]") {
  const Subject s = generate_subject(base_spec());
  CHECK(s.mask.count() > 1000);
  for (float v : s.volumes.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("out-of-range parameters are rejected") {
  PhantomSpec s = base_spec();
  s.lv_fraction = 0.3;
  CHECK_THROWS_AS((void)generate_subject(s), DegenerateInputError);
  s = base_spec();
  s.age_weeks = 50.0;
  CHECK_THROWS_AS((void)generate_subject(s), DegenerateInputError);
}

TEST_CASE("cohort generation: ages in range, deterministic, conditions honored") {
  CohortDistribution dist;
  dist.cc_true_probability = 1.0;
  const auto a = generate_cohort(24, 21.0, 38.0, dist, 7);
  const auto b = generate_cohort(24, 21.0, 38.0, dist, 7);
  REQUIRE(a.size() == 24);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].scan_age_weeks >= 21.0);
    CHECK(a[i].scan_age_weeks <= 38.0);
    CHECK(a[i].conditions.at("cc_acc") == -1.0);
    CHECK(a[i].labels.labels == b[i].labels.labels);
    CHECK(a[i].volumes.data == b[i].volumes.data);
    CHECK(a[i].id == b[i].id);
  }
}

TEST_CASE("measure_tissue_volume arithmetic") {
  Subject s;
  s.labels = LabelMap({2, 2, 2}, 2, {1, 1, 1});
  std::fill(s.labels.labels.begin(), s.labels.labels.end(), 1);
  CHECK(measure_tissue_volume(s, 1) == doctest::Approx(8.0));
  CHECK(measure_tissue_volume(s, 0) == 0.0);
  CHECK_THROWS_AS((void)measure_tissue_volume(s, 7), LookupError);
}
