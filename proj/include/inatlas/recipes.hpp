#pragma once

#include <map>
#include <string>
#include <vector>

#include "inatlas/adapt.hpp"
#include "inatlas/config.hpp"
#include "inatlas/phantom.hpp"
#include "inatlas/train.hpp"

namespace inatlas::recipes {

using Model = train::TrainedModel<float>;

std::vector<train::TrainingSubject> to_training_subjects(
    const std::vector<phantom::Subject>& cohort);

struct SubjectRow {
  std::string id;
  double scan_age_weeks = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double wm_dice = 0.0;
  double fg_dice = 0.0;
  double predicted_age_weeks = 0.0;
};

struct SegEvalResult {
  Model model;
  std::vector<SubjectRow> train_rows;    // reconstruction metrics
  std::vector<SubjectRow> holdout_rows;  // adaptation metrics
  double mean_recon_wm_dice = 0.0;
  double mean_adapt_fg_dice = 0.0;
  double pc1_age_pearson = 0.0;
  double scan_age_mae = 0.0;
  std::vector<phantom::Subject> train_phantoms;
  std::vector<phantom::Subject> holdout_phantoms;
};

SegEvalResult run_seg_eval(const config::RunConfig& cfg);

struct BirthAgeResult {
  Model model;
  std::vector<std::pair<std::string, double>> errors_weeks;  // per holdout
  double mae_weeks = 0.0;
};

BirthAgeResult run_birth_age(const config::RunConfig& cfg);

struct LvConditioningResult {
  Model model;
  std::vector<double> sweep_ages;
  std::vector<double> sweep_xi;
  std::vector<std::vector<double>> lv_volumes_mm3;  // [age][xi]
  bool monotone_everywhere = false;
  double xi_recovery_mean_abs_error = 0.0;
  double severe_lv_dice = 0.0;  // adaptation to lv outside the training range
};

LvConditioningResult run_lv_conditioning(const config::RunConfig& cfg);

struct AccConditioningResult {
  Model model;
  std::size_t bridge_wm_present = 0;  // atlas at xi = -1
  std::size_t bridge_wm_absent = 0;   // atlas at xi = +1
  double ratio = 0.0;
};

AccConditioningResult run_acc_conditioning(const config::RunConfig& cfg);

struct ModalityTranslationResult {
  std::vector<SubjectRow> rows;  // psnr/ssim of the translated channel
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double tissue_contrast_pearson = 0.0;  // translated vs observed tissue means
};

// Adapts on modality 0 only and predicts modality 1. Reuses a seg-eval
// result when provided (same model family, no conditioning).
ModalityTranslationResult run_modality_translation(const config::RunConfig& cfg,
                                                   SegEvalResult* reuse = nullptr);

struct AblationLatentShapeResult {
  double dice_spatial = 0.0;  // mean over seeds, latent grid 3^3
  double dice_1d = 0.0;       // latent grid 1^3
  std::vector<double> per_seed_spatial, per_seed_1d;
};

AblationLatentShapeResult run_ablation_latent_shape(const config::RunConfig& cfg, int n_seeds);

struct AblationRigidResult {
  double max_rotation_error_deg = 0.0;   // worst subject over all seeds
  double mean_rotation_error_deg = 0.0;
  std::vector<double> per_subject_error_deg;
};

AblationRigidResult run_ablation_rigid(const config::RunConfig& cfg, int n_seeds);

struct AblationConditioningResult {
  double mae_explicit_weeks = 0.0;  // mean over seeds
  double mae_implicit_weeks = 0.0;
  std::vector<double> per_seed_explicit, per_seed_implicit;
};

AblationConditioningResult run_ablation_conditioning(const config::RunConfig& cfg, int n_seeds);

// Named pipeline entry point used by the CLI: executes the recipe, writes a
// config snapshot, summary CSV, and output manifest under out_dir, and
// returns a non-zero status when --strict thresholds fail.
int run_recipe(const std::string& name, const config::RunConfig& cfg, const std::string& out_dir,
               bool strict);

const std::vector<std::string>& recipe_names();

}  // namespace inatlas::recipes
