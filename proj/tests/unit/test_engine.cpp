#include <doctest.h>

#include <cmath>

#include "inatlas/adam.hpp"
#include "inatlas/engine.hpp"
#include "inatlas/grad_check.hpp"
#include "inatlas/model.hpp"
#include "inatlas/rng.hpp"

using namespace inatlas;
using engine::BatchTargets;
using engine::GradRequest;
using engine::Gradients;
using engine::View;
using Mat = model::MatX<double>;

namespace {

struct Setup {
  model::ModelConfig cfg;
  model::ModelParams<double> params{model::ModelConfig{}};
  model::LatentGrid<double> latent;
  model::RigidParams<double> rigid;
  Mat coords, targets;
  std::vector<std::uint8_t> labels;

  View<double> view() { return {&cfg, &params, &latent, &rigid}; }
};

Setup make_setup(std::uint64_t seed, int n = 8) {
  Setup s;
  s.cfg.hidden_layers = 2;
  s.cfg.hidden_width = 8;
  s.cfg.modulated_layers = {1, 2};
  s.cfg.latent_channels = 4;
  s.cfg.latent_grid = {3, 2, 2};
  s.cfg.condition_names = {"c0", "c1"};
  s.cfg.image_channels = 2;
  s.cfg.tissue_classes = 4;

  Rng rng(seed);
  s.params = model::init_model<double>(s.cfg, rng.next_u64());
  for (std::size_t slot = 0; slot < s.params.layout.m.size(); ++slot) {
    auto m = model::seg_map(s.params.values, s.params.layout.m[slot]);
    for (int c = 0; c < m.cols(); ++c)
      for (int r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-0.05, 0.05);
  }
  s.latent.z.resize(s.cfg.latent_size());
  for (auto& v : s.latent.z) v = rng.normal(0.0, 0.4);
  s.latent.xi = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
  for (int i = 0; i < 3; ++i) {
    s.rigid.axis_angle[i] = rng.uniform(-0.1, 0.1);
    s.rigid.translation[i] = rng.uniform(-0.05, 0.05);
  }
  s.coords.resize(3, n);
  s.targets.resize(s.cfg.image_channels, n);
  s.labels.resize(n);
  for (int p = 0; p < n; ++p) {
    for (int a = 0; a < 3; ++a) s.coords(a, p) = rng.uniform(-0.7, 0.7);
    for (int c = 0; c < s.cfg.image_channels; ++c) s.targets(c, p) = rng.uniform(0, 1);
    s.labels[p] = static_cast<std::uint8_t>(rng.uniform_index(s.cfg.tissue_classes));
  }
  return s;
}

BatchTargets<double> targets_of(Setup& s) {
  BatchTargets<double> t;
  t.image = &s.targets;
  t.observed_channels = {0, 1};
  t.labels = &s.labels;
  t.seg_weight = 1.0;
  return t;
}

}  // namespace

TEST_CASE("full-model gradients match central finite differences") {
  // 4 random configurations; the acceptance suite runs the full 10.
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto cfg = engine::random_check_config(seed);
    const auto res = engine::grad_check(cfg, seed);
    INFO("seed ", seed, " worst group ", res.worst_group);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradients stay correct at the exp-map branch point") {
  const auto cfg = engine::random_check_config(11);
  const auto res = engine::grad_check(cfg, 11, 1e-4, /*rigid_near_zero=*/true);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("quadratic head gradients are exact under finite differences") {
  // The loss is quadratic in the image head parameters, so central
  // differences are exact up to rounding.
  Setup s = make_setup(5);
  auto t = targets_of(s);
  t.labels = nullptr;  // MSE only
  Gradients<double> grads = Gradients<double>::zeros(s.view());
  engine::run_batch(s.view(), s.coords, t, GradRequest{}, &grads);

  const auto& seg = s.params.layout.w_img;
  const double h = 1e-4;
  for (std::size_t k = 0; k < 6; ++k) {
    const std::size_t idx = seg.offset + (k * 7) % seg.size();
    const double keep = s.params.values[idx];
    s.params.values[idx] = keep + h;
    const double hi = engine::run_batch(s.view(), s.coords, t).total;
    s.params.values[idx] = keep - h;
    const double lo = engine::run_batch(s.view(), s.coords, t).total;
    s.params.values[idx] = keep;
    const double fd = (hi - lo) / (2 * h);
    CHECK(std::abs(fd - grads.network[idx]) / std::max(1.0, std::abs(fd)) < 1e-10);
  }
}

TEST_CASE("parameters off the loss path get exactly zero gradient") {
  Setup s = make_setup(6);
  auto t = targets_of(s);

  SUBCASE("MSE-only leaves the segmentation head untouched") {
    t.labels = nullptr;
    Gradients<double> grads = Gradients<double>::zeros(s.view());
    engine::run_batch(s.view(), s.coords, t, GradRequest{}, &grads);
    const auto& seg = s.params.layout.w_seg;
    for (std::size_t i = 0; i < seg.size(); ++i) CHECK(grads.network[seg.offset + i] == 0.0);
    const auto& segb = s.params.layout.b_seg;
    for (std::size_t i = 0; i < segb.size(); ++i) CHECK(grads.network[segb.offset + i] == 0.0);
  }

  SUBCASE("unobserved channel rows of the image head stay zero") {
    t.labels = nullptr;
    t.observed_channels = {0};
    Gradients<double> grads = Gradients<double>::zeros(s.view());
    engine::run_batch(s.view(), s.coords, t, GradRequest{}, &grads);
    auto w = model::seg_map(grads.network, s.params.layout.w_img);
    auto b = model::seg_map(grads.network, s.params.layout.b_img);
    for (int c = 0; c < w.cols(); ++c) CHECK(w(1, c) == 0.0);
    CHECK(b(1, 0) == 0.0);
    bool any_nonzero = false;
    for (int c = 0; c < w.cols(); ++c) any_nonzero = any_nonzero || w(0, c) != 0.0;
    CHECK(any_nonzero);
  }
}

TEST_CASE("gradient accumulation is insensitive to batch order") {
  Setup s = make_setup(7, 32);
  auto t = targets_of(s);
  Gradients<double> g1 = Gradients<double>::zeros(s.view());
  engine::run_batch(s.view(), s.coords, t, GradRequest{}, &g1);

  // Reverse the batch.
  Mat coords2 = s.coords.rowwise().reverse();
  Mat targets2 = s.targets.rowwise().reverse();
  std::vector<std::uint8_t> labels2(s.labels.rbegin(), s.labels.rend());
  BatchTargets<double> t2;
  t2.image = &targets2;
  t2.observed_channels = {0, 1};
  t2.labels = &labels2;
  t2.seg_weight = 1.0;
  Gradients<double> g2 = Gradients<double>::zeros(s.view());
  engine::run_batch(s.view(), coords2, t2, GradRequest{}, &g2);

  for (std::size_t i = 0; i < g1.network.size(); ++i) {
    const double denom = std::max({std::abs(g1.network[i]), std::abs(g2.network[i]), 1e-12});
    CHECK(std::abs(g1.network[i] - g2.network[i]) / denom < 1e-10);
  }
  for (int i = 0; i < 6; ++i) {
    const double denom = std::max({std::abs(g1.rigid[i]), std::abs(g2.rigid[i]), 1e-12});
    CHECK(std::abs(g1.rigid[i] - g2.rigid[i]) / denom < 1e-10);
  }
}

TEST_CASE("mse primitive: x^2 at x=3 has gradient 6") {
  Mat pred(1, 1), target(1, 1), d(1, 1);
  pred(0, 0) = 3.0;
  target(0, 0) = 0.0;
  const double loss = engine::mse_sum(pred, target, {0}, d);
  CHECK(loss == doctest::Approx(9.0));
  CHECK(d(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("cross entropy of a uniform softmax is log K") {
  const int K = 5;
  Mat probs(K, 3), d;
  probs.setConstant(1.0 / K);
  std::vector<std::uint8_t> labels = {0, 2, 4};
  const double loss = engine::cross_entropy_sum(probs, labels, 1.0, d);
  CHECK(loss / 3.0 == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("adam: zero gradient is the identity") {
  std::vector<double> params = {1.0, -2.0, 3.5};
  const std::vector<double> zero(3, 0.0);
  engine::AdamState<double> st;
  const auto before = params;
  engine::adam_step(params, zero, st, 1e-3, "g");
  CHECK(params == before);
}

TEST_CASE("adam: first step moves by ~lr in the gradient direction") {
  std::vector<double> params = {0.0, 0.0};
  const std::vector<double> grads = {2.5, -0.3};
  engine::AdamState<double> st;
  engine::adam_step(params, grads, st, 1e-2, "g");
  // Closed form: bias corrections cancel, step = lr * g / (|g| + eps).
  CHECK(params[0] == doctest::Approx(-1e-2).epsilon(1e-6));
  CHECK(params[1] == doctest::Approx(1e-2).epsilon(1e-6));
}

TEST_CASE("adam: per-group learning rates scale steps 5x") {
  std::vector<double> a = {0.0}, b = {0.0};
  const std::vector<double> g = {1.0};
  engine::AdamState<double> sa, sb;
  engine::adam_step(a, g, sa, 1e-4, "slow");
  engine::adam_step(b, g, sb, 5e-4, "fast");
  CHECK(b[0] / a[0] == doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("adam rejects non-finite gradients with the group name") {
  std::vector<double> params = {1.0};
  const std::vector<double> bad = {std::nan("")};
  engine::AdamState<double> st;
  try {
    engine::adam_step(params, bad, st, 1e-3, "latent");
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("latent") != std::string::npos);
  }
}

TEST_CASE("lr 0 leaves parameters bit-identical while others move") {
  Setup s = make_setup(21);
  auto t = targets_of(s);
  Gradients<double> grads = Gradients<double>::zeros(s.view());
  engine::run_batch(s.view(), s.coords, t, GradRequest{}, &grads);

  const auto theta_before = s.params.values;
  engine::AdamState<double> net_st, z_st;
  engine::adam_step(s.params.values, grads.network, net_st, 0.0, "network");
  const auto z_before = s.latent.z;
  engine::adam_step(s.latent.z, grads.z, z_st, 5e-4, "latent");
  CHECK(s.params.values == theta_before);
  CHECK(s.latent.z != z_before);
}

TEST_CASE("forward raises a numeric error naming the layer on non-finite input") {
  Setup s = make_setup(30);
  s.coords(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS((void)engine::forward(s.view(), s.coords),
                       doctest::Contains("layer 1"), NumericError);
}
