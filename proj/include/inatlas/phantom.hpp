#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "inatlas/volume.hpp"

namespace inatlas::phantom {

// Tissue classes of the synthetic developing-brain cohort.
enum Tissue : std::uint8_t {
  kBackground = 0,
  kCsf = 1,
  kCorticalGm = 2,
  kWhiteMatter = 3,
  kLateralVentricle = 4,
};
constexpr int kNumClasses = 5;

constexpr double kMinAgeWeeks = 21.0;
constexpr double kMaxAgeWeeks = 38.0;

// Interhemispheric fissure / callosal bridge geometry, in millimeters of
// world offset from the grid center. Shared with the atlas-side analysis so
// generated and model-predicted label maps are measured identically.
constexpr double kFissureHalfWidthMm = 1.5;
constexpr double kBridgeHalfDepthMm = 4.5;   // y extent
constexpr double kBridgeHalfHeightMm = 4.0;  // z extent
constexpr double kVentricleMidlineMarginMm = 2.0;

struct PhantomSpec {
  int grid = 48;
  double spacing_mm = 1.0;
  double age_weeks = 30.0;
  double lv_fraction = 0.04;
  bool cc_present = true;
  std::optional<double> birth_age_weeks;  // preterm analog, [25, 38]
  double noise_sigma = 0.02;
  int modality_count = 2;
  std::uint64_t seed = 0;
  Vec3 pose_rotation{0.0, 0.0, 0.0};     // axis-angle, radians
  Vec3 pose_translation{0.0, 0.0, 0.0};  // millimeters
};

struct Subject {
  std::string id;
  Volume volumes;
  LabelMap labels;
  Mask mask;
  double scan_age_weeks = 0.0;
  std::map<std::string, double> conditions;
};

// Condition distribution for cohort generation. "cc_acc" follows the signed
// convention used for conditioning: -1 = bridge present, +1 = absent.
struct CohortDistribution {
  double lv_min = 0.02;
  double lv_max = 0.08;
  double cc_true_probability = 1.0;
  std::optional<std::pair<double, double>> birth_age_range;
  Vec3 max_abs_rotation{0.0, 0.0, 0.0};     // per-axis bound, radians
  double max_abs_translation_mm = 0.0;
  int grid = 48;
  double spacing_mm = 1.0;
  double noise_sigma = 0.02;
  int modality_count = 2;
};

Subject generate_subject(const PhantomSpec& spec);

std::vector<Subject> generate_cohort(int n, double age_lo, double age_hi,
                                     const CohortDistribution& dist, std::uint64_t seed,
                                     const std::string& id_prefix = "subj");

double measure_tissue_volume(const Subject& s, int label);

// WM voxels inside the callosal-bridge box that connect the hemispheres
// across the midline slab. Works on any label map sharing the phantom's
// centered world frame.
std::size_t bridge_wm_voxel_count(const LabelMap& labels);

// Per-tissue mean intensity of one channel (foreground classes only).
std::map<int, double> tissue_mean_intensities(const Volume& v, const LabelMap& labels, int channel);

// Cohort manifest, one JSON record per line.
struct ManifestEntry {
  std::string id;
  std::string volume_path;
  std::string labels_path;
  std::string mask_path;
  double scan_age_weeks = 0.0;
  std::map<std::string, double> conditions;
};

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);
std::vector<ManifestEntry> read_manifest(const std::string& path);

// Writes NIfTI volume/labels/mask per subject plus the manifest; returns entries.
std::vector<ManifestEntry> export_cohort(const std::vector<Subject>& cohort,
                                         const std::string& out_dir,
                                         const std::string& manifest_path);

}  // namespace inatlas::phantom
