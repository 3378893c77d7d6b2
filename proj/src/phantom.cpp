#include "inatlas/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "inatlas/errors.hpp"
#include "inatlas/nifti.hpp"
#include "inatlas/rng.hpp"
#include "inatlas/so3.hpp"

namespace inatlas::phantom {

namespace {

using json = nlohmann::json;

// Anatomy model. All boundaries live in elliptic radius units rho, where
// rho = 1 is the outer CSF surface. The cortical ribbon's boundaries are
// perturbed by an age-dependent sum of sinusoids (folding proxy).
struct Geometry {
  double rx, ry, rz;        // outer ellipsoid radii, mm
  double csf_inner = 0.86;  // outer boundary of the cortical ribbon
  double ribbon_rho;        // ribbon thickness in rho units
  double fold_amp;
  double fold_freq;
  double lv_center_x;       // mirrored LV centers at (+/- lv_center_x, 0, 0)
  double lv_ax, lv_ay, lv_az;  // base LV half-axes, mm (before scaling)
};

Geometry make_geometry(const PhantomSpec& spec) {
  const double g =
      std::clamp((spec.age_weeks - kMinAgeWeeks) / (kMaxAgeWeeks - kMinAgeWeeks), 0.0, 1.0);
  double ba01 = 1.0;  // term-equivalent by default
  if (spec.birth_age_weeks) ba01 = std::clamp((*spec.birth_age_weeks - 25.0) / 13.0, 0.0, 1.0);

  // Age must stay legible after the per-subject isotropic coordinate
  // normalization removes absolute size, so the age-dependent cues are all
  // relative: CSF shell fraction, aspect ratio, folding amplitude and
  // frequency.
  Geometry geo;
  geo.rx = 11.0 + 8.0 * g;
  geo.ry = 9.0 + 5.5 * g;
  geo.rz = 10.0 + 6.5 * g;
  geo.csf_inner = 0.84 + 0.06 * g;
  const double r_geo = std::cbrt(geo.rx * geo.ry * geo.rz);
  const double thickness_mm = (1.8 + 1.2 * g) * (0.75 + 0.25 * ba01);
  geo.ribbon_rho = thickness_mm / r_geo;
  // Folding amplitude and frequency grow with age; preterm birth flattens it.
  geo.fold_amp = (0.02 + 0.18 * g) * (0.5 + 0.5 * ba01);
  geo.fold_freq = 2.0 + 5.0 * g;
  geo.lv_center_x = 0.30 * geo.rx;
  geo.lv_ax = 0.30 * geo.rx;
  geo.lv_ay = 0.26 * geo.ry;
  geo.lv_az = 0.30 * geo.rz;
  return geo;
}

double folding(const Geometry& geo, double ux, double uy, double uz) {
  const double pi = 3.14159265358979323846;
  return geo.fold_amp * std::sin(geo.fold_freq * pi * ux) * std::sin(geo.fold_freq * pi * uy) *
         std::sin(geo.fold_freq * pi * uz + 0.7);
}

struct Frame {
  Vec3 center;       // world center of the grid, mm
  so3::Mat3 inv_rot;  // subject -> canonical
  Vec3 translation;
};

// Canonical-frame offset of a subject-space world point.
Vec3 canonical_offset(const Frame& f, double wx, double wy, double wz) {
  const so3::Vec3d shifted{wx - f.center[0] - f.translation[0],
                           wy - f.center[1] - f.translation[1],
                           wz - f.center[2] - f.translation[2]};
  const so3::Vec3d c = so3::apply(f.inv_rot, shifted);
  return {c[0], c[1], c[2]};
}

Tissue classify(const Geometry& geo, const Vec3& v, double lv_scale, bool cc_present) {
  const double ux = v[0] / geo.rx, uy = v[1] / geo.ry, uz = v[2] / geo.rz;
  const double rho = std::sqrt(ux * ux + uy * uy + uz * uz);
  if (rho > 1.0) return kBackground;
  const double rho_f = rho + folding(geo, ux, uy, uz);
  if (rho_f > geo.csf_inner) return kCsf;
  if (rho_f > geo.csf_inner - geo.ribbon_rho) return kCorticalGm;

  // Interior: WM by default, carved by ventricles, fissure, and bridge.
  const bool in_slab = std::abs(v[0]) < kFissureHalfWidthMm;
  if (lv_scale > 0.0 && std::abs(v[0]) > kVentricleMidlineMarginMm) {
    for (double side : {-1.0, 1.0}) {
      const double dx = (v[0] - side * geo.lv_center_x) / (lv_scale * geo.lv_ax);
      const double dy = v[1] / (lv_scale * geo.lv_ay);
      const double dz = v[2] / (lv_scale * geo.lv_az);
      if (dx * dx + dy * dy + dz * dz <= 1.0) return kLateralVentricle;
    }
  }
  if (in_slab) {
    const bool in_bridge =
        std::abs(v[1]) < kBridgeHalfDepthMm && std::abs(v[2]) < kBridgeHalfHeightMm;
    if (in_bridge && cc_present) return kWhiteMatter;
    return kCsf;  // interhemispheric fissure
  }
  return kWhiteMatter;
}

std::size_t count_tissue(const LabelMap& labels, Tissue t) {
  std::size_t n = 0;
  for (auto v : labels.labels) n += (v == t);
  return n;
}

LabelMap rasterize(const PhantomSpec& spec, const Geometry& geo, const Frame& frame,
                   double lv_scale) {
  const int n = spec.grid;
  LabelMap labels({n, n, n}, kNumClasses,
                  {spec.spacing_mm, spec.spacing_mm, spec.spacing_mm});
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const Vec3 w = voxel_center_world(labels.dims, labels.spacing, x, y, z);
        const Vec3 v = canonical_offset(frame, w[0], w[1], w[2]);
        labels.at(x, y, z) = classify(geo, v, lv_scale, spec.cc_present);
      }
  return labels;
}

}  // namespace

Subject generate_subject(const PhantomSpec& spec) {
  if (spec.grid < 16) throw DegenerateInputError("phantom: grid too small");
  if (spec.age_weeks < kMinAgeWeeks - 1e-9 || spec.age_weeks > kMaxAgeWeeks + 1e-9)
    throw DegenerateInputError("phantom: age_weeks outside cohort range");
  if (spec.lv_fraction < 0.0 || spec.lv_fraction > 0.15)
    throw DegenerateInputError("phantom: lv_fraction outside [0, 0.15]");

  Geometry geo = make_geometry(spec);
  Frame frame;
  const double half = 0.5 * spec.grid * spec.spacing_mm;
  frame.center = {half, half, half};
  frame.inv_rot = so3::transpose(so3::exp_map({spec.pose_rotation[0], spec.pose_rotation[1],
                                               spec.pose_rotation[2]}));
  frame.translation = spec.pose_translation;

  double ba_lv_boost = 1.0;
  if (spec.birth_age_weeks) {
    const double ba01 = std::clamp((*spec.birth_age_weeks - 25.0) / 13.0, 0.0, 1.0);
    ba_lv_boost = 1.0 + 0.8 * (1.0 - ba01);
  }
  const double lv_target_fraction = std::min(0.2, spec.lv_fraction * ba_lv_boost);

  // Scale the ventricle ellipsoids until the voxel-counted LV fraction hits
  // the target; the count is monotone in the scale, so a few cube-root
  // corrections converge.
  double lv_scale = lv_target_fraction > 0.0 ? 1.0 : 0.0;
  LabelMap labels = rasterize(spec, geo, frame, lv_scale);
  if (lv_target_fraction > 0.0) {
    const double brain =
        static_cast<double>(labels.voxel_count() - count_tissue(labels, kBackground));
    const double target = lv_target_fraction * brain;
    for (int iter = 0; iter < 6; ++iter) {
      const double measured = static_cast<double>(count_tissue(labels, kLateralVentricle));
      if (measured > 0.0 && std::abs(measured - target) / target < 0.02) break;
      const double ratio = target / std::max(measured, 1.0);
      lv_scale *= std::cbrt(std::clamp(ratio, 0.1, 10.0));
      labels = rasterize(spec, geo, frame, lv_scale);
    }
    const double measured = static_cast<double>(count_tissue(labels, kLateralVentricle));
    if (std::abs(measured - target) / target > 0.25)
      throw DegenerateInputError("phantom: lv_fraction " + std::to_string(spec.lv_fraction) +
                                 " geometrically unattainable on grid " +
                                 std::to_string(spec.grid));
  }

  Subject s;
  s.labels = std::move(labels);
  s.scan_age_weeks = spec.age_weeks;
  s.mask = Mask(s.labels.dims, s.labels.spacing);
  for (std::size_t i = 0; i < s.labels.labels.size(); ++i)
    s.mask.inside[i] = s.labels.labels[i] != kBackground ? 1 : 0;

  // Two modalities with inverted tissue contrast plus Gaussian noise.
  static const double kLevels[2][kNumClasses] = {
      {0.00, 0.85, 0.45, 0.65, 0.92},
      {0.00, 0.15, 0.55, 0.35, 0.08},
  };
  const int C = spec.modality_count;
  if (C < 1 || C > 2) throw DegenerateInputError("phantom: modality_count must be 1 or 2");
  s.volumes = Volume(s.labels.dims, C, s.labels.spacing);
  Rng noise = Rng::derive(spec.seed, "phantom.noise");
  const std::size_t nvox = s.labels.voxel_count();
  for (std::size_t i = 0; i < nvox; ++i) {
    const int t = s.labels.labels[i];
    for (int c = 0; c < C; ++c) {
      double v = kLevels[c][t];
      if (t != kBackground) v += noise.normal(0.0, spec.noise_sigma);
      s.volumes.data[static_cast<std::size_t>(c) * nvox + i] =
          static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }

  s.conditions["lv_fraction"] = spec.lv_fraction;
  s.conditions["cc_acc"] = spec.cc_present ? -1.0 : 1.0;
  if (spec.birth_age_weeks) s.conditions["birth_age_weeks"] = *spec.birth_age_weeks;
  return s;
}

std::vector<Subject> generate_cohort(int n, double age_lo, double age_hi,
                                     const CohortDistribution& dist, std::uint64_t seed,
                                     const std::string& id_prefix) {
  if (n < 1) throw DegenerateInputError("generate_cohort: n must be >= 1");
  Rng rng = Rng::derive(seed, "phantom.cohort");
  std::vector<Subject> cohort;
  cohort.reserve(n);
  for (int i = 0; i < n; ++i) {
    PhantomSpec spec;
    spec.grid = dist.grid;
    spec.spacing_mm = dist.spacing_mm;
    spec.noise_sigma = dist.noise_sigma;
    spec.modality_count = dist.modality_count;
    spec.age_weeks = rng.uniform(age_lo, age_hi);
    spec.lv_fraction =
        dist.lv_min == dist.lv_max ? dist.lv_min : rng.uniform(dist.lv_min, dist.lv_max);
    spec.cc_present = rng.bernoulli(dist.cc_true_probability);
    if (dist.birth_age_range)
      spec.birth_age_weeks = rng.uniform(dist.birth_age_range->first, dist.birth_age_range->second);
    for (int a = 0; a < 3; ++a)
      if (dist.max_abs_rotation[a] > 0.0)
        spec.pose_rotation[a] = rng.uniform(-dist.max_abs_rotation[a], dist.max_abs_rotation[a]);
    if (dist.max_abs_translation_mm > 0.0)
      for (int a = 0; a < 3; ++a)
        spec.pose_translation[a] =
            rng.uniform(-dist.max_abs_translation_mm, dist.max_abs_translation_mm);
    spec.seed = Rng::derive(seed, "phantom.subject", static_cast<std::uint64_t>(i)).next_u64();

    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%03d", id_prefix.c_str(), i);
    Subject s = generate_subject(spec);
    s.id = buf;
    cohort.push_back(std::move(s));
  }
  return cohort;
}

double measure_tissue_volume(const Subject& s, int label) {
  if (label < 0 || label >= s.labels.num_classes)
    throw LookupError("measure_tissue_volume: label out of range");
  std::size_t n = 0;
  for (auto v : s.labels.labels) n += (v == label);
  const auto& sp = s.labels.spacing;
  return static_cast<double>(n) * sp[0] * sp[1] * sp[2];
}

std::size_t bridge_wm_voxel_count(const LabelMap& labels) {
  const auto& sp = labels.spacing;
  const Vec3 center{0.5 * labels.dims[0] * sp[0], 0.5 * labels.dims[1] * sp[1],
                    0.5 * labels.dims[2] * sp[2]};
  std::size_t count = 0;
  for (int z = 0; z < labels.dims[2]; ++z)
    for (int y = 0; y < labels.dims[1]; ++y)
      for (int x = 0; x < labels.dims[0]; ++x) {
        const Vec3 w = voxel_center_world(labels.dims, sp, x, y, z);
        if (std::abs(w[0] - center[0]) < kFissureHalfWidthMm &&
            std::abs(w[1] - center[1]) < kBridgeHalfDepthMm &&
            std::abs(w[2] - center[2]) < kBridgeHalfHeightMm &&
            labels.at(x, y, z) == kWhiteMatter)
          ++count;
      }
  return count;
}

std::map<int, double> tissue_mean_intensities(const Volume& v, const LabelMap& labels,
                                              int channel) {
  if (v.dims != labels.dims) throw ShapeError("tissue_mean_intensities: dims mismatch");
  std::map<int, double> sums;
  std::map<int, std::size_t> counts;
  const std::size_t nvox = v.voxel_count();
  for (std::size_t i = 0; i < nvox; ++i) {
    const int t = labels.labels[i];
    if (t == kBackground) continue;
    sums[t] += v.data[static_cast<std::size_t>(channel) * nvox + i];
    counts[t] += 1;
  }
  std::map<int, double> means;
  for (auto& [t, sum] : sums) means[t] = sum / static_cast<double>(counts[t]);
  return means;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("write_manifest: cannot open " + path);
  for (const auto& e : entries) {
    json j;
    j["id"] = e.id;
    j["volume"] = e.volume_path;
    j["labels"] = e.labels_path;
    j["mask"] = e.mask_path;
    j["scan_age_weeks"] = e.scan_age_weeks;
    j["lv_fraction"] = e.conditions.count("lv_fraction") ? e.conditions.at("lv_fraction") : 0.0;
    j["cc_present"] =
        e.conditions.count("cc_acc") ? (e.conditions.at("cc_acc") < 0.0) : true;
    if (e.conditions.count("birth_age_weeks"))
      j["birth_age_weeks"] = e.conditions.at("birth_age_weeks");
    f << j.dump() << "\n";
  }
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("read_manifest: cannot open " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("read_manifest: " + path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.volume_path = j.at("volume").get<std::string>();
    e.labels_path = j.at("labels").get<std::string>();
    e.mask_path = j.at("mask").get<std::string>();
    e.scan_age_weeks = j.at("scan_age_weeks").get<double>();
    if (j.contains("lv_fraction")) e.conditions["lv_fraction"] = j["lv_fraction"].get<double>();
    if (j.contains("cc_present"))
      e.conditions["cc_acc"] = j["cc_present"].get<bool>() ? -1.0 : 1.0;
    if (j.contains("birth_age_weeks"))
      e.conditions["birth_age_weeks"] = j["birth_age_weeks"].get<double>();
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> export_cohort(const std::vector<Subject>& cohort,
                                         const std::string& out_dir,
                                         const std::string& manifest_path) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<ManifestEntry> entries;
  for (const auto& s : cohort) {
    ManifestEntry e;
    e.id = s.id;
    e.volume_path = (fs::path(out_dir) / (s.id + "_image.nii")).string();
    e.labels_path = (fs::path(out_dir) / (s.id + "_labels.nii")).string();
    e.mask_path = (fs::path(out_dir) / (s.id + "_mask.nii")).string();
    e.scan_age_weeks = s.scan_age_weeks;
    e.conditions = s.conditions;
    nifti::write(s.volumes, e.volume_path);
    nifti::write(s.labels, e.labels_path);
    nifti::write(s.mask, e.mask_path);
    entries.push_back(std::move(e));
  }
  write_manifest(entries, manifest_path);
  return entries;
}

}  // namespace inatlas::phantom
