#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "inatlas/adapt.hpp"
#include "inatlas/atlas.hpp"
#include "inatlas/checkpoint.hpp"
#include "inatlas/latent_analysis.hpp"
#include "inatlas/metrics.hpp"
#include "inatlas/phantom.hpp"
#include "inatlas/recipes.hpp"
#include "inatlas/train.hpp"

using namespace inatlas;
namespace fs = std::filesystem;

namespace {

model::ModelConfig tiny_model_config() {
  model::ModelConfig cfg;
  cfg.hidden_layers = 2;
  cfg.hidden_width = 48;
  cfg.modulated_layers = {1, 2};
  cfg.latent_channels = 8;
  cfg.latent_grid = {2, 2, 2};
  return cfg;
}

train::TrainConfig tiny_train_config(int epochs = 2) {
  train::TrainConfig t;
  t.batch_coords = 2048;
  t.epochs = epochs;
  t.seed = 7;
  return t;
}

std::vector<phantom::Subject> tiny_cohort(int n, std::uint64_t seed) {
  phantom::CohortDistribution dist;
  dist.grid = 40;
  return phantom::generate_cohort(n, 22.0, 30.0, dist, seed);
}

struct Fixture {
  std::vector<phantom::Subject> phantoms;
  train::TrainedModel<float> model{tiny_model_config()};
};

const Fixture& fixture() {
  static Fixture f = [] {
    Fixture fx;
    fx.phantoms = tiny_cohort(4, 11);
    fx.model = train::train<float>(recipes::to_training_subjects(fx.phantoms),
                                   tiny_model_config(), tiny_train_config());
    return fx;
  }();
  return f;
}

std::vector<char> file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("training decreases the loss and is bit-deterministic") {
  const auto& fx = fixture();
  REQUIRE(fx.model.log.size() > 10);
  const auto smooth = train::smoothed_total_loss(fx.model.log);
  CHECK(smooth.back() < smooth.front());

  const auto again = train::train<float>(recipes::to_training_subjects(fx.phantoms),
                                         tiny_model_config(), tiny_train_config());
  CHECK(again.params.values == fx.model.params.values);
  for (std::size_t i = 0; i < again.subjects.size(); ++i) {
    CHECK(again.subjects[i].latent.z == fx.model.subjects[i].latent.z);
    CHECK(again.subjects[i].rigid.axis_angle == fx.model.subjects[i].rigid.axis_angle);
  }
}

TEST_CASE("loss decreases over the first 10 steps on a fixed batch for >= 95% of seeds") {
  model::ModelConfig cfg;
  cfg.hidden_layers = 2;
  cfg.hidden_width = 16;
  cfg.modulated_layers = {1, 2};
  cfg.latent_channels = 4;
  cfg.latent_grid = {2, 2, 2};
  cfg.image_channels = 2;
  cfg.tissue_classes = 5;

  int ok = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(1000 + trial);
    auto params = model::init_model<float>(cfg, rng.next_u64());
    Rng lrng(2000 + trial);
    auto latent = model::init_latent<float>(cfg, lrng, false);
    model::RigidParams<float> rigid;

    const int n = 256;
    model::MatX<float> coords(3, n), targets(2, n);
    std::vector<std::uint8_t> labels(n);
    for (int p = 0; p < n; ++p) {
      for (int a = 0; a < 3; ++a) coords(a, p) = static_cast<float>(rng.uniform(-0.9, 0.9));
      for (int c = 0; c < 2; ++c) targets(c, p) = static_cast<float>(rng.uniform(0, 1));
      labels[p] = static_cast<std::uint8_t>(rng.uniform_index(5));
    }

    engine::AdamState<float> s_net, s_z, s_r;
    bool monotone = true;
    double prev = 1e300;
    for (int step = 0; step < 10; ++step) {
      engine::View<float> view{&cfg, &params, &latent, &rigid};
      engine::Gradients<float> grads = engine::Gradients<float>::zeros(view);
      engine::GradRequest req;
      req.condition = false;
      const auto loss = train::loss_step(cfg, params, latent, rigid, coords, targets, labels, 1.0,
                                         req, &grads);
      if (static_cast<double>(loss.total) >= prev) monotone = false;
      prev = loss.total;
      engine::adam_step(params.values, grads.network, s_net, 1e-4, "network");
      engine::adam_step(latent.z, grads.z, s_z, 5e-4, "latent");
      std::array<float, 6> rp{rigid.axis_angle[0],  rigid.axis_angle[1],  rigid.axis_angle[2],
                              rigid.translation[0], rigid.translation[1], rigid.translation[2]};
      engine::adam_step(rp, grads.rigid, s_r, 7.5e-3, "rigid");
      for (int a = 0; a < 3; ++a) {
        rigid.axis_angle[a] = rp[a];
        rigid.translation[a] = rp[3 + a];
      }
    }
    ok += monotone;
  }
  CHECK(ok >= 19);
}

TEST_CASE("network lr 0 leaves theta bit-identical while latents move") {
  auto subjects = recipes::to_training_subjects(tiny_cohort(2, 21));
  auto tcfg = tiny_train_config(1);
  tcfg.lr_network = 1e-30;  // validate() requires positive; effectively frozen
  // Instead compare against explicit zero through the adam identity: a real
  // zero rate is exercised at the unit level; here we check group isolation
  // through one manual step.
  model::ModelConfig cfg = tiny_model_config();
  cfg.image_channels = 2;
  cfg.tissue_classes = 5;
  auto params = model::init_model<float>(cfg, 3);
  // Fresh models start with M = 0, which makes the first latent gradient
  // exactly zero; nudge the modulation so all groups receive signal.
  {
    Rng mrng(77);
    for (std::size_t s = 0; s < params.layout.m.size(); ++s) {
      auto mm = model::seg_map(params.values, params.layout.m[s]);
      for (int c = 0; c < mm.cols(); ++c)
        for (int r = 0; r < mm.rows(); ++r) mm(r, c) = static_cast<float>(mrng.uniform(-0.1, 0.1));
    }
  }
  Rng lrng(4);
  auto latent = model::init_latent<float>(cfg, lrng, false);
  model::RigidParams<float> rigid;

  model::MatX<float> coords(3, 64), targets(2, 64);
  std::vector<std::uint8_t> labels(64);
  Rng rng(5);
  for (int p = 0; p < 64; ++p) {
    for (int a = 0; a < 3; ++a) coords(a, p) = static_cast<float>(rng.uniform(-0.9, 0.9));
    targets(0, p) = static_cast<float>(rng.uniform(0, 1));
    targets(1, p) = static_cast<float>(rng.uniform(0, 1));
    labels[p] = static_cast<std::uint8_t>(rng.uniform_index(5));
  }
  engine::View<float> view{&cfg, &params, &latent, &rigid};
  engine::Gradients<float> grads = engine::Gradients<float>::zeros(view);
  engine::GradRequest req;
  req.condition = false;
  train::loss_step(cfg, params, latent, rigid, coords, targets, labels, 1.0, req, &grads);

  const auto theta_before = params.values;
  const auto z_before = latent.z;
  engine::AdamState<float> s_net, s_z, s_r;
  engine::adam_step(params.values, grads.network, s_net, 0.0, "network");
  engine::adam_step(latent.z, grads.z, s_z, 5e-4, "latent");
  std::array<float, 6> rp{};
  std::array<float, 6> rg;
  std::copy(grads.rigid.begin(), grads.rigid.end(), rg.begin());
  engine::adam_step(rp, rg, s_r, 7.5e-3, "rigid");
  CHECK(params.values == theta_before);
  CHECK(latent.z != z_before);
  bool rigid_moved = false;
  for (float v : rp) rigid_moved = rigid_moved || v != 0.0f;
  CHECK(rigid_moved);
}

TEST_CASE("checkpoints round-trip bit-exactly and reload for inference") {
  const auto& fx = fixture();
  const auto path = (fs::temp_directory_path() / "model.ckpt").string();
  checkpoint::save(fx.model, path);
  const auto any = checkpoint::load(path);
  const auto& loaded = std::get<train::TrainedModel<float>>(any);
  CHECK(loaded.params.values == fx.model.params.values);
  REQUIRE(loaded.subjects.size() == fx.model.subjects.size());
  for (std::size_t i = 0; i < loaded.subjects.size(); ++i) {
    CHECK(loaded.subjects[i].id == fx.model.subjects[i].id);
    CHECK(loaded.subjects[i].latent.z == fx.model.subjects[i].latent.z);
  }
  CHECK(loaded.age_min_weeks == fx.model.age_min_weeks);

  // Saving the loaded model reproduces the file byte for byte.
  const auto path2 = (fs::temp_directory_path() / "model2.ckpt").string();
  checkpoint::save(loaded, path2);
  CHECK(file_bytes(path) == file_bytes(path2));
}

TEST_CASE("atlas generation mutates nothing and collapses to the subject at tiny sigma") {
  const auto& fx = fixture();
  const auto before = (fs::temp_directory_path() / "purity_a.ckpt").string();
  const auto after = (fs::temp_directory_path() / "purity_b.ckpt").string();
  checkpoint::save(fx.model, before);

  atlas::AtlasRequest req;
  req.t_weeks = fx.model.subjects[0].scan_age_weeks;
  req.sigma_weeks = 0.5;
  req.grid_dims = fx.model.ref_dims;
  req.grid_spacing = fx.model.ref_spacing;
  const auto a = atlas::generate_atlas(fx.model, req);
  checkpoint::save(fx.model, after);
  CHECK(file_bytes(before) == file_bytes(after));

  // Probabilities sum to one everywhere.
  const std::size_t nvox = a.probabilities.voxel_count();
  for (std::size_t v = 0; v < nvox; v += 97) {
    double sum = 0;
    for (int k = 0; k < a.probabilities.channels; ++k)
      sum += a.probabilities.data[k * nvox + v];
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }

  // Sigma collapse: kernel at sigma -> 0 reproduces the subject's latent.
  const auto& st = fx.model.subjects[0];
  const double sigma_wk = 1e-3 * (fx.model.age_max_weeks - fx.model.age_min_weeks) / 2.0;
  const auto collapsed = atlas::regress_latent(fx.model, st.scan_age_weeks, sigma_wk);
  for (std::size_t i = 0; i < collapsed.z.size(); ++i)
    CHECK(collapsed.z[i] == st.latent.z[i]);
  atlas::AtlasRequest creq = req;
  creq.sigma_weeks = sigma_wk;
  creq.frame = st.transform;
  const auto collapsed_atlas = atlas::generate_atlas(fx.model, creq);
  const auto direct =
      atlas::evaluate_latent_on_grid(fx.model, st.latent, req.grid_dims, req.grid_spacing,
                                     st.transform);
  double max_diff = 0;
  for (std::size_t i = 0; i < collapsed_atlas.intensities.data.size(); ++i)
    max_diff = std::max(max_diff, std::abs(static_cast<double>(collapsed_atlas.intensities.data[i]) -
                                           direct.intensities.data[i]));
  CHECK(max_diff < 1e-3);
}

TEST_CASE("fresh (untrained) model output is subject-independent") {
  auto cfg = tiny_model_config();
  cfg.image_channels = 2;
  cfg.tissue_classes = 5;
  train::TrainedModel<float> m(cfg);
  m.params = model::init_model<float>(cfg, 99);
  m.ref_dims = {16, 16, 16};
  m.ref_spacing = {1, 1, 1};
  for (int i = 0; i < 2; ++i) {
    train::SubjectState<float> st;
    st.id = "s" + std::to_string(i);
    Rng r(100 + i);
    st.latent = model::init_latent<float>(cfg, r, false);
    st.scan_age_weeks = 25.0 + i;
    m.subjects.push_back(std::move(st));
  }
  m.age_min_weeks = 25.0;
  m.age_max_weeks = 26.0;
  const auto a0 = atlas::evaluate_latent_on_grid(m, m.subjects[0].latent, m.ref_dims, m.ref_spacing);
  const auto a1 = atlas::evaluate_latent_on_grid(m, m.subjects[1].latent, m.ref_dims, m.ref_spacing);
  for (std::size_t i = 0; i < a0.intensities.data.size(); ++i)
    CHECK(a0.intensities.data[i] == a1.intensities.data[i]);
}

TEST_CASE("adaptation: frozen theta, holdout isolation, determinism, best-state restore") {
  const auto& fx = fixture();
  const auto holdout_phantom = tiny_cohort(1, 555)[0];

  adapt::AdaptConfig acfg;
  acfg.epochs = 3;
  acfg.batch_coords = 1024;
  acfg.seed = 99;

  const auto theta_before = fx.model.params.values;
  std::set<std::size_t> fitted;
  const auto result = adapt::adapt(fx.model, holdout_phantom.volumes, holdout_phantom.mask, acfg,
                                   [&](const std::vector<std::size_t>& batch) {
                                     fitted.insert(batch.begin(), batch.end());
                                   });
  CHECK(fx.model.params.values == theta_before);

  // Recover the holdout set the same way adapt derives it.
  auto shuffled = masked_voxel_indices(holdout_phantom.mask);
  Rng hrng = Rng::derive(acfg.seed, "adapt.holdout");
  for (std::size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[hrng.uniform_index(i)]);
  const std::size_t n_holdout = static_cast<std::size_t>(0.10 * shuffled.size());
  for (std::size_t i = 0; i < n_holdout; ++i) CHECK(fitted.count(shuffled[i]) == 0);

  const auto result2 =
      adapt::adapt(fx.model, holdout_phantom.volumes, holdout_phantom.mask, acfg);
  CHECK(result.latent.z == result2.latent.z);
  CHECK(result.rigid.axis_angle == result2.rigid.axis_angle);
  CHECK(result.holdout_trace == result2.holdout_trace);
  CHECK(!result.holdout_trace.empty());

  // Probabilities of the derived segmentation sum to one inside the mask.
  const auto seg = adapt::predict_segmentation(fx.model, result, holdout_phantom.mask);
  const std::size_t nvox = holdout_phantom.mask.voxel_count();
  for (std::size_t v = 0; v < nvox; v += 211) {
    if (!holdout_phantom.mask.inside[v]) continue;
    double sum = 0;
    for (int k = 0; k < seg.probabilities.channels; ++k) sum += seg.probabilities.data[k * nvox + v];
    CHECK(std::abs(sum - 1.0) < 1e-6);
    int arg = 0;
    for (int k = 0; k < seg.probabilities.channels; ++k)
      if (seg.probabilities.data[k * nvox + v] > seg.probabilities.data[arg * nvox + v]) arg = k;
    CHECK(seg.labels.labels[v] == arg);
  }

  // Translating an observed channel reproduces the fit output bit-exactly.
  const auto recon = train::evaluate_on_voxels(fx.model, result.latent, &result.rigid,
                                               holdout_phantom.mask, result.transform,
                                               masked_voxel_indices(holdout_phantom.mask));
  const auto translated = adapt::translate_modality(fx.model, result, holdout_phantom.mask, 0);
  for (std::size_t i = 0; i < nvox; ++i)
    CHECK(translated.data[i] == recon.intensities.data[i]);
}

TEST_CASE("interpolation endpoints match direct latent evaluation bit-exactly") {
  const auto& fx = fixture();
  const auto seq = analysis::interpolate_latents(fx.model, fx.model.subjects[0].id,
                                                 fx.model.subjects[1].id, 3);
  REQUIRE(seq.size() == 3);
  const auto direct = atlas::evaluate_latent_on_grid(fx.model, fx.model.subjects[0].latent,
                                                     fx.model.ref_dims, fx.model.ref_spacing);
  CHECK(seq.front().intensities.data == direct.intensities.data);

  // Last step reproduces subject b exactly ((1-f) collapses to 0).
  const auto direct_b = atlas::evaluate_latent_on_grid(fx.model, fx.model.subjects[1].latent,
                                                       fx.model.ref_dims, fx.model.ref_spacing);
  CHECK(seq.back().intensities.data == direct_b.intensities.data);

  // Equal endpoints: mid steps equal the endpoints up to interpolation
  // round-off in the mixed latent.
  const auto same = analysis::interpolate_latents(fx.model, fx.model.subjects[0].id,
                                                  fx.model.subjects[0].id, 4);
  for (const auto& a : same)
    for (std::size_t i = 0; i < a.intensities.data.size(); i += 31)
      CHECK(a.intensities.data[i] ==
            doctest::Approx(same.front().intensities.data[i]).epsilon(1e-4));
}

TEST_CASE("single-subject overfit reaches > 30 dB PSNR") {
  phantom::CohortDistribution dist;
  dist.grid = 40;
  auto cohort =
      recipes::to_training_subjects(phantom::generate_cohort(1, 24.0, 28.0, dist, 777));
  model::ModelConfig cfg;
  cfg.hidden_layers = 3;
  cfg.hidden_width = 128;
  cfg.modulated_layers = {1, 3};
  cfg.latent_channels = 32;
  cfg.latent_grid = {3, 3, 3};
  train::TrainConfig tcfg;
  tcfg.lr_network = 1e-3;
  tcfg.lr_latent = 5e-3;
  tcfg.batch_coords = 4096;
  tcfg.epochs = 150;
  tcfg.seed = 31;
  const auto m = train::train<float>(cohort, cfg, tcfg);
  const auto recon = train::reconstruct_subject(m, cohort[0].id, cohort[0].mask);
  const Volume gt = normalize_intensities(cohort[0].image, cohort[0].mask);
  const double psnr = metrics::psnr(recon.intensities, gt, cohort[0].mask, 0);
  MESSAGE("overfit psnr ", psnr);
  CHECK(psnr > 30.0);
}
