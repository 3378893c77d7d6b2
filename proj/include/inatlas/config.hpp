#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "inatlas/adapt.hpp"
#include "inatlas/model.hpp"
#include "inatlas/phantom.hpp"
#include "inatlas/train.hpp"

namespace inatlas::config {

// Cohort generation parameters for the built-in phantom experiments.
struct CohortParams {
  int size = 24;
  int holdout_size = 8;
  double age_min = 21.0;
  double age_max = 38.0;
  double lv_min = 0.02;
  double lv_max = 0.08;
  double cc_probability = 1.0;
  bool birth_age_enabled = false;
  double birth_age_min = 25.0;
  double birth_age_max = 38.0;
  int grid = 48;
  double spacing_mm = 1.0;
  double noise_sigma = 0.02;
  int modality_count = 2;
  double max_rotation_deg = 0.0;
  double max_translation_mm = 0.0;

  phantom::CohortDistribution distribution() const {
    phantom::CohortDistribution d;
    d.lv_min = lv_min;
    d.lv_max = lv_max;
    d.cc_true_probability = cc_probability;
    if (birth_age_enabled) d.birth_age_range = {birth_age_min, birth_age_max};
    const double rad = max_rotation_deg * 3.14159265358979323846 / 180.0;
    d.max_abs_rotation = {rad, rad, rad};
    d.max_abs_translation_mm = max_translation_mm;
    d.grid = grid;
    d.spacing_mm = spacing_mm;
    d.noise_sigma = noise_sigma;
    d.modality_count = modality_count;
    return d;
  }
};

struct AtlasParams {
  double sigma_weeks = 0.5;
  double resolution_mm = 1.0;
};

struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  adapt::AdaptConfig adapt;
  CohortParams cohort;
  AtlasParams atlas;
  std::uint64_t seed = 42;
  std::string scale = "desk";
};

// Scale profiles. "desk" is sized for CI-class machines; "paper" mirrors the
// published hyperparameters (5x1024 network, 256-channel latents, 25k-sample
// batches, single epoch).
RunConfig default_config(const std::string& scale);

// Parses the nested key-value config text (INI-style sections) over the
// profile defaults. Unknown keys, duplicate keys, and syntax errors are
// rejected with the offending key or line number.
RunConfig parse_config(const std::string& text, const std::string& scale = "desk");

RunConfig load_config_file(const std::string& path, const std::string& scale = "desk");

// The resolved configuration as config-file text (reproducibility snapshot).
std::string to_text(const RunConfig& cfg);

}  // namespace inatlas::config
