#include "inatlas/recipes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "inatlas/atlas.hpp"
#include "inatlas/errors.hpp"
#include "inatlas/latent_analysis.hpp"
#include "inatlas/metrics.hpp"
#include "inatlas/so3.hpp"

namespace inatlas::recipes {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::vector<train::TrainingSubject> to_training_subjects(
    const std::vector<phantom::Subject>& cohort) {
  std::vector<train::TrainingSubject> out;
  out.reserve(cohort.size());
  for (const auto& s : cohort) {
    train::TrainingSubject t;
    t.id = s.id;
    t.image = s.volumes;
    t.labels = s.labels;
    t.mask = s.mask;
    t.scan_age_weeks = s.scan_age_weeks;
    t.conditions = s.conditions;
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

adapt::AdaptConfig adapt_config_of(const config::RunConfig& cfg, std::uint64_t seed) {
  adapt::AdaptConfig a = cfg.adapt;
  a.seed = seed;
  return a;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Ground-truth intensities in the model's target space (masked min-max).
Volume normalized_image(const phantom::Subject& s) { return normalize_intensities(s.volumes, s.mask); }

model::ModelConfig model_config_with_conditions(const config::RunConfig& cfg,
                                                std::vector<std::string> conditions) {
  model::ModelConfig m = cfg.model;
  m.condition_names = std::move(conditions);
  return m;
}

}  // namespace

SegEvalResult run_seg_eval(const config::RunConfig& cfg) {
  const auto dist = cfg.cohort.distribution();
  auto train_phantoms = phantom::generate_cohort(
      cfg.cohort.size, cfg.cohort.age_min, cfg.cohort.age_max, dist,
      Rng::derive(cfg.seed, "cohort.train").next_u64(), "train");
  auto holdout_phantoms = phantom::generate_cohort(
      cfg.cohort.holdout_size, cfg.cohort.age_min, cfg.cohort.age_max, dist,
      Rng::derive(cfg.seed, "cohort.holdout").next_u64(), "test");

  model::ModelConfig mcfg = model_config_with_conditions(cfg, {});
  SegEvalResult result{Model(mcfg)};
  result.model =
      train::train<float>(to_training_subjects(train_phantoms), mcfg, cfg.train);
  result.train_phantoms = train_phantoms;
  result.holdout_phantoms = holdout_phantoms;

  for (const auto& s : train_phantoms) {
    const auto recon = train::reconstruct_subject(result.model, s.id, s.mask);
    const Volume gt = normalized_image(s);
    SubjectRow row;
    row.id = s.id;
    row.scan_age_weeks = s.scan_age_weeks;
    row.psnr = metrics::psnr(recon.intensities, gt, s.mask, 0);
    row.ssim = metrics::ssim3d(recon.intensities, gt, s.mask, 0);
    row.wm_dice = metrics::dice(recon.labels, s.labels, phantom::kWhiteMatter);
    row.fg_dice = metrics::mean_foreground_dice(recon.labels, s.labels, phantom::kNumClasses);
    result.train_rows.push_back(row);
  }

  std::vector<double> age_errors;
  for (std::size_t i = 0; i < holdout_phantoms.size(); ++i) {
    const auto& s = holdout_phantoms[i];
    const auto acfg =
        adapt_config_of(cfg, Rng::derive(cfg.seed, "adapt.holdout_subject", i).next_u64());
    const auto ar = adapt::adapt(result.model, s.volumes, s.mask, acfg);
    const auto seg = adapt::predict_segmentation(result.model, ar, s.mask);
    SubjectRow row;
    row.id = s.id;
    row.scan_age_weeks = s.scan_age_weeks;
    row.psnr = ar.fit_psnr;
    row.ssim = ar.fit_ssim;
    row.wm_dice = metrics::dice(seg.labels, s.labels, phantom::kWhiteMatter);
    row.fg_dice = metrics::mean_foreground_dice(seg.labels, s.labels, phantom::kNumClasses);
    row.predicted_age_weeks =
        analysis::predict_scan_age(result.model, analysis::latent_vector(ar.latent));
    age_errors.push_back(std::abs(row.predicted_age_weeks - s.scan_age_weeks));
    result.holdout_rows.push_back(row);
  }

  {
    std::vector<double> wm, fg;
    for (const auto& r : result.train_rows) wm.push_back(r.wm_dice);
    for (const auto& r : result.holdout_rows) fg.push_back(r.fg_dice);
    result.mean_recon_wm_dice = mean_of(wm);
    result.mean_adapt_fg_dice = mean_of(fg);
  }
  result.scan_age_mae = mean_of(age_errors);

  const auto emb = analysis::pca_latents(result.model);
  std::vector<double> pc1, ages;
  for (std::size_t i = 0; i < result.model.subjects.size(); ++i) {
    pc1.push_back(emb.scores(static_cast<int>(i), 0));
    ages.push_back(result.model.subjects[i].scan_age_weeks);
  }
  result.pc1_age_pearson = metrics::pearson(pc1, ages);
  return result;
}

BirthAgeResult run_birth_age(const config::RunConfig& cfg) {
  config::RunConfig c = cfg;
  c.cohort.birth_age_enabled = true;
  c.cohort.lv_min = c.cohort.lv_max = 0.04;  // isolate the birth-age signal
  const auto dist = c.cohort.distribution();
  auto train_phantoms = phantom::generate_cohort(
      c.cohort.size, c.cohort.age_min, c.cohort.age_max, dist,
      Rng::derive(c.seed, "cohort.train").next_u64(), "train");
  auto holdout_phantoms = phantom::generate_cohort(
      c.cohort.holdout_size, c.cohort.age_min, c.cohort.age_max, dist,
      Rng::derive(c.seed, "cohort.holdout").next_u64(), "test");

  model::ModelConfig mcfg = model_config_with_conditions(c, {"birth_age_weeks"});
  BirthAgeResult result{Model(mcfg)};
  result.model = train::train<float>(to_training_subjects(train_phantoms), mcfg, c.train);

  std::vector<double> errors;
  for (std::size_t i = 0; i < holdout_phantoms.size(); ++i) {
    const auto& s = holdout_phantoms[i];
    const auto acfg =
        adapt_config_of(c, Rng::derive(c.seed, "adapt.holdout_subject", i).next_u64());
    const auto ar = adapt::adapt(result.model, s.volumes, s.mask, acfg);
    const auto est = adapt::estimate_conditions(result.model, ar);
    const double err = std::abs(est.at("birth_age_weeks") - s.conditions.at("birth_age_weeks"));
    result.errors_weeks.push_back({s.id, err});
    errors.push_back(err);
  }
  result.mae_weeks = mean_of(errors);
  return result;
}

LvConditioningResult run_lv_conditioning(const config::RunConfig& cfg) {
  config::RunConfig c = cfg;
  c.cohort.lv_min = 0.01;
  c.cohort.lv_max = 0.08;
  const auto dist = c.cohort.distribution();
  auto train_phantoms = phantom::generate_cohort(
      c.cohort.size, c.cohort.age_min, c.cohort.age_max, dist,
      Rng::derive(c.seed, "cohort.train").next_u64(), "train");
  auto holdout_phantoms = phantom::generate_cohort(
      c.cohort.holdout_size, c.cohort.age_min, c.cohort.age_max, dist,
      Rng::derive(c.seed, "cohort.holdout").next_u64(), "test");

  model::ModelConfig mcfg = model_config_with_conditions(c, {"lv_fraction"});
  LvConditioningResult result{Model(mcfg)};
  result.model = train::train<float>(to_training_subjects(train_phantoms), mcfg, c.train);

  result.sweep_xi = {-1.0, -0.5, 0.0, 0.5, 1.0};
  const double lo = c.cohort.age_min + 2.0, hi = c.cohort.age_max - 2.0;
  for (int i = 0; i < 5; ++i) result.sweep_ages.push_back(lo + (hi - lo) * i / 4.0);

  result.monotone_everywhere = true;
  const double voxel_mm3 =
      result.model.ref_spacing[0] * result.model.ref_spacing[1] * result.model.ref_spacing[2];
  for (double age : result.sweep_ages) {
    std::vector<double> volumes;
    for (double xi : result.sweep_xi) {
      atlas::AtlasRequest req;
      req.t_weeks = age;
      req.sigma_weeks = c.atlas.sigma_weeks;
      req.condition_override["lv_fraction"] = xi;
      req.grid_dims = result.model.ref_dims;
      req.grid_spacing = result.model.ref_spacing;
      const auto a = atlas::generate_atlas(result.model, req);
      std::size_t count = 0;
      for (auto v : a.labels.labels) count += (v == phantom::kLateralVentricle);
      volumes.push_back(static_cast<double>(count) * voxel_mm3);
    }
    for (std::size_t i = 1; i < volumes.size(); ++i)
      if (!(volumes[i] > volumes[i - 1])) result.monotone_everywhere = false;
    result.lv_volumes_mm3.push_back(volumes);
  }

  const auto& rec = result.model.condition_record("lv_fraction");
  std::vector<double> xi_errors;
  for (std::size_t i = 0; i < holdout_phantoms.size(); ++i) {
    const auto& s = holdout_phantoms[i];
    const auto acfg =
        adapt_config_of(c, Rng::derive(c.seed, "adapt.holdout_subject", i).next_u64());
    const auto ar = adapt::adapt(result.model, s.volumes, s.mask, acfg);
    const double xi_true = rec.to_normalized(s.conditions.at("lv_fraction"));
    xi_errors.push_back(std::abs(static_cast<double>(ar.latent.xi[0]) - xi_true));
  }
  result.xi_recovery_mean_abs_error = mean_of(xi_errors);

  // Severe enlargement outside the training range.
  {
    phantom::PhantomSpec spec;
    spec.grid = c.cohort.grid;
    spec.spacing_mm = c.cohort.spacing_mm;
    spec.noise_sigma = c.cohort.noise_sigma;
    spec.modality_count = c.cohort.modality_count;
    spec.age_weeks = 0.5 * (c.cohort.age_min + c.cohort.age_max);
    spec.lv_fraction = 0.12;
    spec.seed = Rng::derive(c.seed, "severe_lv").next_u64();
    const auto severe = phantom::generate_subject(spec);
    const auto acfg = adapt_config_of(c, Rng::derive(c.seed, "adapt.severe").next_u64());
    const auto ar = adapt::adapt(result.model, severe.volumes, severe.mask, acfg);
    const auto seg = adapt::predict_segmentation(result.model, ar, severe.mask);
    result.severe_lv_dice = metrics::dice(seg.labels, severe.labels, phantom::kLateralVentricle);
  }
  return result;
}

AccConditioningResult run_acc_conditioning(const config::RunConfig& cfg) {
  config::RunConfig c = cfg;
  c.cohort.cc_probability = 0.5;
  const auto dist = c.cohort.distribution();
  auto train_phantoms = phantom::generate_cohort(
      c.cohort.size, c.cohort.age_min, c.cohort.age_max, dist,
      Rng::derive(c.seed, "cohort.train").next_u64(), "train");

  model::ModelConfig mcfg = model_config_with_conditions(c, {"cc_acc"});
  AccConditioningResult result{Model(mcfg)};
  result.model = train::train<float>(to_training_subjects(train_phantoms), mcfg, c.train);

  const double age = 0.5 * (c.cohort.age_min + c.cohort.age_max);
  auto bridge_count = [&](double xi) {
    atlas::AtlasRequest req;
    req.t_weeks = age;
    req.sigma_weeks = c.atlas.sigma_weeks;
    req.condition_override["cc_acc"] = xi;
    req.grid_dims = result.model.ref_dims;
    req.grid_spacing = result.model.ref_spacing;
    const auto a = atlas::generate_atlas(result.model, req);
    return phantom::bridge_wm_voxel_count(a.labels);
  };
  result.bridge_wm_present = bridge_count(-1.0);
  result.bridge_wm_absent = bridge_count(1.0);
  result.ratio = result.bridge_wm_absent == 0
                     ? std::numeric_limits<double>::infinity()
                     : static_cast<double>(result.bridge_wm_present) /
                           static_cast<double>(result.bridge_wm_absent);
  return result;
}

ModalityTranslationResult run_modality_translation(const config::RunConfig& cfg,
                                                   SegEvalResult* reuse) {
  SegEvalResult local{Model(model_config_with_conditions(cfg, {}))};
  if (!reuse) {
    local = run_seg_eval(cfg);
    reuse = &local;
  }
  const Model& model = reuse->model;
  if (model.cfg.image_channels < 2)
    throw ConfigError("modality translation requires a two-channel model");

  ModalityTranslationResult result;
  std::vector<double> psnrs, ssims;
  for (std::size_t i = 0; i < reuse->holdout_phantoms.size(); ++i) {
    const auto& s = reuse->holdout_phantoms[i];
    auto acfg = adapt_config_of(cfg, Rng::derive(cfg.seed, "adapt.translate", i).next_u64());
    acfg.observed_channels = {0};
    const auto ar = adapt::adapt(model, s.volumes, s.mask, acfg);
    const Volume translated = adapt::translate_modality(model, ar, s.mask, 1);
    const Volume gt = normalized_image(s);
    Volume gt_ch1(gt.dims, 1, gt.spacing);
    std::copy_n(gt.data.begin() + gt.voxel_count(), gt.voxel_count(), gt_ch1.data.begin());

    SubjectRow row;
    row.id = s.id;
    row.scan_age_weeks = s.scan_age_weeks;
    row.psnr = metrics::psnr(translated, gt_ch1, s.mask, 0);
    row.ssim = metrics::ssim3d(translated, gt_ch1, s.mask, 0);
    result.rows.push_back(row);
    psnrs.push_back(row.psnr);
    ssims.push_back(row.ssim);

    if (i == 0) {
      // Contrast inversion check: translated tissue means against observed.
      const auto m_obs = phantom::tissue_mean_intensities(gt, s.labels, 0);
      const auto m_tr = phantom::tissue_mean_intensities(translated, s.labels, 0);
      std::vector<double> a, b;
      for (const auto& [tissue, mean] : m_obs) {
        a.push_back(mean);
        b.push_back(m_tr.at(tissue));
      }
      result.tissue_contrast_pearson = metrics::pearson(a, b);
    }
  }
  result.mean_psnr = mean_of(psnrs);
  result.mean_ssim = mean_of(ssims);
  return result;
}

AblationLatentShapeResult run_ablation_latent_shape(const config::RunConfig& cfg, int n_seeds) {
  AblationLatentShapeResult result;
  for (int si = 0; si < n_seeds; ++si) {
    config::RunConfig c = cfg;
    c.seed = Rng::derive(cfg.seed, "ablation.latent_shape", si).next_u64();
    c.model.latent_grid = {3, 3, 3};
    result.per_seed_spatial.push_back(run_seg_eval(c).mean_adapt_fg_dice);
    c.model.latent_grid = {1, 1, 1};
    result.per_seed_1d.push_back(run_seg_eval(c).mean_adapt_fg_dice);
  }
  result.dice_spatial = mean_of(result.per_seed_spatial);
  result.dice_1d = mean_of(result.per_seed_1d);
  return result;
}

AblationRigidResult run_ablation_rigid(const config::RunConfig& cfg, int n_seeds) {
  AblationRigidResult result;
  const double deg = 3.14159265358979323846 / 180.0;
  // Symmetric injected rotations about single axes keep the shared frame's
  // gauge pinned near identity.
  const std::vector<Vec3> rotations = {
      {0, 0, 0},        {0, 0, 0},        {10 * deg, 0, 0}, {-10 * deg, 0, 0},
      {0, 8 * deg, 0},  {0, -8 * deg, 0}, {0, 0, 6 * deg},  {0, 0, -6 * deg}};

  for (int si = 0; si < n_seeds; ++si) {
    const std::uint64_t seed = Rng::derive(cfg.seed, "ablation.rigid", si).next_u64();
    Rng rng = Rng::derive(seed, "anatomy");
    std::vector<phantom::Subject> cohort;
    for (std::size_t i = 0; i < rotations.size(); ++i) {
      phantom::PhantomSpec spec;
      spec.grid = cfg.cohort.grid;
      spec.spacing_mm = cfg.cohort.spacing_mm;
      spec.noise_sigma = cfg.cohort.noise_sigma;
      spec.modality_count = cfg.cohort.modality_count;
      spec.age_weeks = 0.5 * (cfg.cohort.age_min + cfg.cohort.age_max);
      spec.lv_fraction = 0.04;
      spec.pose_rotation = rotations[i];
      spec.seed = Rng::derive(seed, "subject", i).next_u64();
      auto s = phantom::generate_subject(spec);
      char buf[16];
      std::snprintf(buf, sizeof(buf), "rot_%02zu", i);
      s.id = buf;
      cohort.push_back(std::move(s));
    }

    config::RunConfig c = cfg;
    c.seed = seed;
    model::ModelConfig mcfg = model_config_with_conditions(c, {});
    const auto model = train::train<float>(to_training_subjects(cohort), mcfg, c.train);

    for (std::size_t i = 0; i < rotations.size(); ++i) {
      const auto& st = model.subjects[i];
      const so3::Mat3 learned =
          so3::exp_map({static_cast<double>(st.rigid.axis_angle[0]),
                        static_cast<double>(st.rigid.axis_angle[1]),
                        static_cast<double>(st.rigid.axis_angle[2])});
      // The alignment should invert the injected pose.
      const so3::Mat3 expected = so3::transpose(
          so3::exp_map({rotations[i][0], rotations[i][1], rotations[i][2]}));
      const double err = so3::geodesic_angle(learned, expected) / deg;
      result.per_subject_error_deg.push_back(err);
    }
  }
  result.max_rotation_error_deg =
      *std::max_element(result.per_subject_error_deg.begin(), result.per_subject_error_deg.end());
  result.mean_rotation_error_deg = mean_of(result.per_subject_error_deg);
  return result;
}

AblationConditioningResult run_ablation_conditioning(const config::RunConfig& cfg, int n_seeds) {
  AblationConditioningResult result;
  for (int si = 0; si < n_seeds; ++si) {
    config::RunConfig c = cfg;
    c.seed = Rng::derive(cfg.seed, "ablation.conditioning", si).next_u64();
    c.cohort.birth_age_enabled = true;
    c.cohort.lv_min = c.cohort.lv_max = 0.04;
    const auto dist = c.cohort.distribution();
    auto train_phantoms = phantom::generate_cohort(
        c.cohort.size, c.cohort.age_min, c.cohort.age_max, dist,
        Rng::derive(c.seed, "cohort.train").next_u64(), "train");
    auto holdout_phantoms = phantom::generate_cohort(
        c.cohort.holdout_size, c.cohort.age_min, c.cohort.age_max, dist,
        Rng::derive(c.seed, "cohort.holdout").next_u64(), "test");
    const auto train_subjects = to_training_subjects(train_phantoms);

    // Explicit: birth age as a learned condition dimension.
    {
      model::ModelConfig mcfg = model_config_with_conditions(c, {"birth_age_weeks"});
      const auto model = train::train<float>(train_subjects, mcfg, c.train);
      std::vector<double> errors;
      for (std::size_t i = 0; i < holdout_phantoms.size(); ++i) {
        const auto& s = holdout_phantoms[i];
        const auto acfg =
            adapt_config_of(c, Rng::derive(c.seed, "adapt.explicit", i).next_u64());
        const auto ar = adapt::adapt(model, s.volumes, s.mask, acfg);
        const auto est = adapt::estimate_conditions(model, ar);
        errors.push_back(std::abs(est.at("birth_age_weeks") - s.conditions.at("birth_age_weeks")));
      }
      result.per_seed_explicit.push_back(mean_of(errors));
    }
    // Implicit: same variable regressed from the unconditioned latent space.
    {
      model::ModelConfig mcfg = model_config_with_conditions(c, {});
      const auto model = train::train<float>(train_subjects, mcfg, c.train);
      std::vector<double> ba_values;
      for (const auto& s : model.subjects) ba_values.push_back(s.conditions.at("birth_age_weeks"));
      const Eigen::MatrixXd refs = analysis::flattened_latents(model);
      std::vector<double> errors;
      for (std::size_t i = 0; i < holdout_phantoms.size(); ++i) {
        const auto& s = holdout_phantoms[i];
        const auto acfg =
            adapt_config_of(c, Rng::derive(c.seed, "adapt.implicit", i).next_u64());
        const auto ar = adapt::adapt(model, s.volumes, s.mask, acfg);
        const double est = analysis::soft_neighbor_regress(
            refs, ba_values, analysis::latent_vector(ar.latent));
        errors.push_back(std::abs(est - s.conditions.at("birth_age_weeks")));
      }
      result.per_seed_implicit.push_back(mean_of(errors));
    }
  }
  result.mae_explicit_weeks = mean_of(result.per_seed_explicit);
  result.mae_implicit_weeks = mean_of(result.per_seed_implicit);
  return result;
}

// ---------------------------------------------------------------------------
// CLI entry point
// ---------------------------------------------------------------------------

const std::vector<std::string>& recipe_names() {
  static const std::vector<std::string> names = {
      "seg-eval",         "birth-age",           "lv-conditioning",
      "acc-conditioning", "modality-translation", "ablation-latent-shape",
      "ablation-rigid",   "ablation-conditioning"};
  return names;
}

namespace {

struct RecipeOutput {
  std::vector<std::string> files;
  std::vector<std::pair<std::string, bool>> checks;  // strict gate per threshold

  void note(const std::string& name, bool ok) { checks.push_back({name, ok}); }
};

void write_summary(const std::string& path, const std::string& header,
                   const std::vector<std::string>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("run_recipe: cannot open " + path);
  f << header << "\n";
  for (const auto& r : rows) f << r << "\n";
}

std::string fmt_row(std::initializer_list<double> values, const std::string& prefix = "") {
  std::string row = prefix;
  char buf[48];
  for (double v : values) {
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    row += std::string(row.empty() ? "" : ",") + buf;
  }
  return row;
}

}  // namespace

int run_recipe(const std::string& name, const config::RunConfig& cfg, const std::string& out_dir,
               bool strict) {
  fs::create_directories(out_dir);
  const std::string summary_path = (fs::path(out_dir) / "summary.csv").string();
  RecipeOutput out;

  {
    std::ofstream f(fs::path(out_dir) / "config.ini");
    f << config::to_text(cfg);
    out.files.push_back((fs::path(out_dir) / "config.ini").string());
  }

  if (name == "seg-eval") {
    const auto r = run_seg_eval(cfg);
    std::vector<std::string> rows;
    for (const auto& row : r.train_rows)
      rows.push_back("recon," + row.id + "," +
                     fmt_row({row.scan_age_weeks, row.psnr, row.ssim, row.wm_dice, row.fg_dice}));
    for (const auto& row : r.holdout_rows)
      rows.push_back("adapt," + row.id + "," +
                     fmt_row({row.scan_age_weeks, row.psnr, row.ssim, row.wm_dice, row.fg_dice,
                              row.predicted_age_weeks}));
    rows.push_back("aggregate,all," + fmt_row({r.mean_recon_wm_dice, r.mean_adapt_fg_dice,
                                               r.pc1_age_pearson, r.scan_age_mae}));
    write_summary(summary_path, "mode,id,values", rows);
    out.note("mean adapt foreground dice > 0.85", r.mean_adapt_fg_dice > 0.85);
    out.note("mean recon WM dice > 0.90", r.mean_recon_wm_dice > 0.90);
    out.note("|pearson(PC1, age)| > 0.8", std::abs(r.pc1_age_pearson) > 0.8);
    out.note("scan-age MAE < 1.0 wk", r.scan_age_mae < 1.0);
  } else if (name == "birth-age") {
    const auto r = run_birth_age(cfg);
    std::vector<std::string> rows;
    for (const auto& [id, err] : r.errors_weeks) rows.push_back(id + "," + fmt_row({err}));
    rows.push_back("mae," + fmt_row({r.mae_weeks}));
    write_summary(summary_path, "id,birth_age_abs_error_weeks", rows);
    out.note("birth-age MAE finite", std::isfinite(r.mae_weeks));
  } else if (name == "lv-conditioning") {
    const auto r = run_lv_conditioning(cfg);
    std::vector<std::string> rows;
    for (std::size_t a = 0; a < r.sweep_ages.size(); ++a)
      for (std::size_t x = 0; x < r.sweep_xi.size(); ++x)
        rows.push_back(fmt_row({r.sweep_ages[a], r.sweep_xi[x], r.lv_volumes_mm3[a][x]}));
    rows.push_back("recovery," + fmt_row({r.xi_recovery_mean_abs_error}));
    rows.push_back("severe_lv_dice," + fmt_row({r.severe_lv_dice}));
    write_summary(summary_path, "age_or_tag,xi,lv_volume_mm3", rows);
    out.note("LV volume strictly increasing in xi", r.monotone_everywhere);
    out.note("xi recovery mean(|err|) <= 0.15", r.xi_recovery_mean_abs_error <= 0.15);
    out.note("severe-LV dice > 0.80", r.severe_lv_dice > 0.80);
  } else if (name == "acc-conditioning") {
    const auto r = run_acc_conditioning(cfg);
    write_summary(summary_path, "xi,bridge_wm_voxels",
                  {fmt_row({-1.0, static_cast<double>(r.bridge_wm_present)}),
                   fmt_row({1.0, static_cast<double>(r.bridge_wm_absent)})});
    out.note("bridge WM ratio > 10x", r.ratio > 10.0);
  } else if (name == "modality-translation") {
    const auto r = run_modality_translation(cfg);
    std::vector<std::string> rows;
    for (const auto& row : r.rows)
      rows.push_back(row.id + "," + fmt_row({row.psnr, row.ssim}));
    rows.push_back("mean," + fmt_row({r.mean_psnr, r.mean_ssim}));
    write_summary(summary_path, "id,psnr_db,ssim", rows);
    out.note("translated PSNR > 25 dB", r.mean_psnr > 25.0);
    out.note("translated SSIM > 0.85", r.mean_ssim > 0.85);
  } else if (name == "ablation-latent-shape") {
    const auto r = run_ablation_latent_shape(cfg, 5);
    write_summary(summary_path, "variant,mean_adapt_fg_dice",
                  {"spatial_3x3x3," + fmt_row({r.dice_spatial}), "latent_1d," + fmt_row({r.dice_1d})});
    out.note("spatial dice >= 1d dice - 0.02", r.dice_spatial >= r.dice_1d - 0.02);
  } else if (name == "ablation-rigid") {
    const auto r = run_ablation_rigid(cfg, 5);
    write_summary(summary_path, "metric,degrees",
                  {"max_error," + fmt_row({r.max_rotation_error_deg}),
                   "mean_error," + fmt_row({r.mean_rotation_error_deg})});
    out.note("rotations recovered within 2 deg", r.max_rotation_error_deg <= 2.0);
  } else if (name == "ablation-conditioning") {
    const auto r = run_ablation_conditioning(cfg, 5);
    write_summary(summary_path, "variant,birth_age_mae_weeks",
                  {"explicit," + fmt_row({r.mae_explicit_weeks}),
                   "implicit," + fmt_row({r.mae_implicit_weeks})});
    out.note("explicit MAE < implicit MAE", r.mae_explicit_weeks < r.mae_implicit_weeks);
  } else {
    throw ConfigError("unknown recipe \"" + name + "\"");
  }
  out.files.push_back(summary_path);

  bool all_ok = true;
  json manifest;
  manifest["recipe"] = name;
  manifest["seed"] = cfg.seed;
  manifest["scale"] = cfg.scale;
  manifest["files"] = out.files;
  json checks = json::array();
  for (const auto& [check, ok] : out.checks) {
    checks.push_back({{"check", check}, {"pass", ok}});
    all_ok = all_ok && ok;
  }
  manifest["checks"] = checks;
  {
    std::ofstream f(fs::path(out_dir) / "manifest.json");
    f << manifest.dump(2) << "\n";
  }

  for (const auto& [check, ok] : out.checks)
    std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", check.c_str());
  return strict && !all_ok ? 1 : 0;
}

}  // namespace inatlas::recipes
