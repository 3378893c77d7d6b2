// Command-line front end: phantom cohort generation, training, atlas
// inference, test-time adaptation, evaluation, and the built-in experiment
// recipes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "inatlas/adapt.hpp"
#include "inatlas/atlas.hpp"
#include "inatlas/checkpoint.hpp"
#include "inatlas/config.hpp"
#include "inatlas/errors.hpp"
#include "inatlas/latent_analysis.hpp"
#include "inatlas/metrics.hpp"
#include "inatlas/nifti.hpp"
#include "inatlas/pgm.hpp"
#include "inatlas/phantom.hpp"
#include "inatlas/recipes.hpp"
#include "inatlas/train.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace inatlas;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 42;
  std::string scale = "desk";
  std::string config_path;
  int threads = 0;
};

config::RunConfig resolve_config(const GlobalOpts& g, bool seed_given) {
  config::RunConfig cfg = g.config_path.empty() ? config::default_config(g.scale)
                                                : config::load_config_file(g.config_path, g.scale);
  if (seed_given || g.config_path.empty()) cfg.seed = g.seed;
  cfg.train.seed = cfg.seed;
  return cfg;
}

std::vector<train::TrainingSubject> load_cohort(const std::string& manifest_path) {
  std::vector<train::TrainingSubject> cohort;
  for (const auto& e : phantom::read_manifest(manifest_path)) {
    train::TrainingSubject s;
    s.id = e.id;
    s.image = nifti::read_volume(e.volume_path);
    s.labels = nifti::read_labels(e.labels_path);
    s.mask = nifti::read_mask(e.mask_path);
    s.scan_age_weeks = e.scan_age_weeks;
    s.conditions = e.conditions;
    cohort.push_back(std::move(s));
  }
  return cohort;
}

int cmd_make_phantoms(const GlobalOpts& g, bool seed_given, const std::string& out_dir) {
  const auto cfg = resolve_config(g, seed_given);
  const auto dist = cfg.cohort.distribution();
  const auto cohort = phantom::generate_cohort(cfg.cohort.size, cfg.cohort.age_min,
                                               cfg.cohort.age_max, dist,
                                               Rng::derive(cfg.seed, "cohort.train").next_u64());
  fs::create_directories(out_dir);
  const std::string manifest = (fs::path(out_dir) / "manifest.jsonl").string();
  phantom::export_cohort(cohort, out_dir, manifest);
  std::ofstream snap(fs::path(out_dir) / "config.ini");
  snap << config::to_text(cfg);
  std::printf("wrote %zu subjects and %s\n", cohort.size(), manifest.c_str());
  return 0;
}

int cmd_train(const GlobalOpts& g, bool seed_given, const std::string& manifest,
              const std::string& out_path, const std::string& log_path) {
  const auto cfg = resolve_config(g, seed_given);
  const auto cohort = load_cohort(manifest);

  if (cfg.train.double_precision) {
    const auto model = train::train<double>(cohort, cfg.model, cfg.train);
    checkpoint::save(model, out_path);
    if (!log_path.empty()) train::write_training_log(model.log, log_path);
  } else {
    const auto model = train::train<float>(cohort, cfg.model, cfg.train);
    checkpoint::save(model, out_path);
    if (!log_path.empty()) train::write_training_log(model.log, log_path);
  }
  std::printf("checkpoint written to %s\n", out_path.c_str());
  return 0;
}

std::map<std::string, double> parse_cond_flags(const std::vector<std::string>& flags) {
  std::map<std::string, double> out;
  for (const auto& f : flags) {
    const auto eq = f.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--cond expects name=value, got \"" + f + "\"");
    out[f.substr(0, eq)] = std::stod(f.substr(eq + 1));
  }
  return out;
}

template <typename T>
int infer_atlas_typed(const train::TrainedModel<T>& model, double age, double sigma,
                      const std::map<std::string, double>& conds, double resolution,
                      const std::string& out_dir) {
  atlas::AtlasRequest req;
  req.t_weeks = age;
  req.sigma_weeks = sigma;
  req.condition_override = conds;
  req.grid_dims = atlas::grid_for_resolution(model.ref_dims, model.ref_spacing, resolution);
  req.grid_spacing = {resolution, resolution, resolution};
  const auto a = atlas::generate_atlas(model, req);

  fs::create_directories(out_dir);
  const std::size_t nvox = a.intensities.voxel_count();
  for (int c = 0; c < a.intensities.channels; ++c) {
    Volume mod(a.intensities.dims, 1, a.intensities.spacing);
    std::copy_n(a.intensities.data.begin() + static_cast<std::size_t>(c) * nvox, nvox,
                mod.data.begin());
    nifti::write(mod, (fs::path(out_dir) / ("intensity_mod" + std::to_string(c) + ".nii")).string());
  }
  nifti::write(a.probabilities, (fs::path(out_dir) / "probabilities.nii").string());
  nifti::write(a.labels, (fs::path(out_dir) / "labels.nii").string());

  json meta;
  meta["t_weeks"] = a.metadata.t_weeks;
  meta["sigma_weeks"] = a.metadata.sigma_weeks;
  meta["xi"] = a.metadata.xi;
  meta["grid_dims"] = a.metadata.grid_dims;
  meta["grid_spacing"] = a.metadata.grid_spacing;
  std::ofstream mf(fs::path(out_dir) / "metadata.json");
  mf << meta.dump(2) << "\n";
  std::printf("atlas written to %s\n", out_dir.c_str());
  return 0;
}

template <typename T>
int adapt_typed(const train::TrainedModel<T>& model, const config::RunConfig& cfg,
                std::uint64_t seed, const std::string& image_path, const std::string& mask_path,
                const std::vector<int>& observe, const std::string& out_dir) {
  const Volume image = nifti::read_volume(image_path);
  const Mask mask = nifti::read_mask(mask_path);
  adapt::AdaptConfig acfg = cfg.adapt;
  acfg.seed = seed;
  if (!observe.empty()) acfg.observed_channels = observe;
  const auto result = adapt::adapt(model, image, mask, acfg);

  fs::create_directories(out_dir);
  const auto seg = adapt::predict_segmentation(model, result, mask);
  nifti::write(seg.probabilities, (fs::path(out_dir) / "probabilities.nii").string());
  nifti::write(seg.labels, (fs::path(out_dir) / "labels.nii").string());
  for (int c = 0; c < model.cfg.image_channels; ++c) {
    const Volume t = adapt::translate_modality(model, result, mask, c);
    nifti::write(t, (fs::path(out_dir) / ("modality" + std::to_string(c) + ".nii")).string());
  }

  json rec;
  rec["fit_psnr_db"] = result.fit_psnr;
  rec["fit_ssim"] = result.fit_ssim;
  rec["stopped_epoch"] = result.stopped_epoch;
  rec["holdout_trace"] = result.holdout_trace;
  rec["observed_channels"] = result.observed_channels;
  rec["predicted_scan_age_weeks"] =
      analysis::predict_scan_age(model, analysis::latent_vector(result.latent));
  if (model.cfg.condition_dims() > 0) {
    json est;
    for (const auto& [k, v] : adapt::estimate_conditions(model, result)) est[k] = v;
    rec["estimated_conditions"] = est;
  }
  std::ofstream rf(fs::path(out_dir) / "result.json");
  rf << rec.dump(2) << "\n";
  std::printf("adaptation written to %s (psnr %.2f dB)\n", out_dir.c_str(), result.fit_psnr);
  return 0;
}

template <typename T>
int evaluate_typed(const train::TrainedModel<T>& model, const config::RunConfig& cfg,
                   std::uint64_t seed, const std::string& manifest, const std::string& out_csv) {
  std::ofstream f(out_csv);
  if (!f) throw IoError("evaluate: cannot open " + out_csv);
  f << "id,mode,psnr_db,ssim,wm_dice,mean_fg_dice,scan_age_weeks,predicted_age_weeks\n";
  char buf[256];
  std::size_t idx = 0;
  for (const auto& e : phantom::read_manifest(manifest)) {
    const Volume image = nifti::read_volume(e.volume_path);
    const LabelMap labels = nifti::read_labels(e.labels_path);
    const Mask mask = nifti::read_mask(e.mask_path);
    const Volume gt = normalize_intensities(image, mask);

    bool in_training = true;
    try {
      model.find_subject(e.id);
    } catch (const LookupError&) {
      in_training = false;
    }

    double psnr, ssim, wm, fg, pred_age;
    if (in_training) {
      const auto recon = train::reconstruct_subject(model, e.id, mask);
      psnr = metrics::psnr(recon.intensities, gt, mask, 0);
      ssim = metrics::ssim3d(recon.intensities, gt, mask, 0);
      wm = metrics::dice(recon.labels, labels, phantom::kWhiteMatter);
      fg = metrics::mean_foreground_dice(recon.labels, labels, labels.num_classes);
      const auto& st = model.subjects[model.find_subject(e.id)];
      pred_age = analysis::predict_scan_age(model, analysis::latent_vector(st.latent));
    } else {
      adapt::AdaptConfig acfg = cfg.adapt;
      acfg.seed = Rng::derive(seed, "evaluate.adapt", idx).next_u64();
      const auto ar = adapt::adapt(model, image, mask, acfg);
      const auto seg = adapt::predict_segmentation(model, ar, mask);
      psnr = ar.fit_psnr;
      ssim = ar.fit_ssim;
      wm = metrics::dice(seg.labels, labels, phantom::kWhiteMatter);
      fg = metrics::mean_foreground_dice(seg.labels, labels, labels.num_classes);
      pred_age = analysis::predict_scan_age(model, analysis::latent_vector(ar.latent));
    }
    std::snprintf(buf, sizeof(buf), "%s,%s,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n", e.id.c_str(),
                  in_training ? "recon" : "adapt", psnr, ssim, wm, fg, e.scan_age_weeks, pred_age);
    f << buf;
    ++idx;
  }
  std::printf("report written to %s\n", out_csv.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional implicit neural atlas toolkit"};
  app.require_subcommand(1);

  GlobalOpts g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Root seed for all derived random streams");
  app.add_option("--scale", g.scale, "Profile: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--config", g.config_path, "Config file (nested key = value sections)");
  app.add_option("--threads", g.threads, "Worker threads (0 = hardware default)");

  std::string out_dir = "out";
  std::string manifest, checkpoint_path, image_path, mask_path, log_path, volume_path, out_csv;
  double age = 30.0, sigma = 0.5, resolution = 1.0;
  std::vector<std::string> cond_flags;
  std::vector<int> observe;
  int channel = 0;
  bool strict = false;
  std::string recipe;

  auto* mk = app.add_subcommand("make-phantoms", "Generate a synthetic cohort with manifest");
  mk->add_option("--out", out_dir, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train on a cohort manifest");
  tr->add_option("--cohort", manifest, "Cohort manifest (JSON lines)")->required();
  tr->add_option("--out", checkpoint_path, "Checkpoint output path")->required();
  tr->add_option("--log", log_path, "Training log CSV path");

  auto* ia = app.add_subcommand("infer-atlas", "Generate an atlas from a checkpoint");
  ia->add_option("--checkpoint", checkpoint_path)->required();
  ia->add_option("--age", age, "Target age in weeks")->required();
  ia->add_option("--sigma", sigma, "Kernel width in weeks");
  ia->add_option("--cond", cond_flags, "Condition override name=value (normalized units)");
  ia->add_option("--resolution", resolution, "Output resolution in mm");
  ia->add_option("--out", out_dir, "Output directory")->required();

  auto* ad = app.add_subcommand("adapt", "Adapt to a new subject (intensities only)");
  ad->add_option("--checkpoint", checkpoint_path)->required();
  ad->add_option("--image", image_path)->required();
  ad->add_option("--mask", mask_path)->required();
  ad->add_option("--observe", observe, "Observed channel indices");
  ad->add_option("--out", out_dir, "Output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "Metric report for a cohort against a checkpoint");
  ev->add_option("--checkpoint", checkpoint_path)->required();
  ev->add_option("--cohort", manifest)->required();
  ev->add_option("--out", out_csv, "Report CSV path")->required();

  auto* ex = app.add_subcommand("export-slices", "Write mid-slice PGM images of a volume");
  ex->add_option("--volume", volume_path)->required();
  ex->add_option("--channel", channel);
  ex->add_option("--out", out_dir, "Output prefix")->required();

  auto* rn = app.add_subcommand("run", "Run a named experiment recipe");
  rn->add_option("recipe", recipe, "One of the built-in pipelines")
      ->required()
      ->check(CLI::IsMember(recipes::recipe_names()));
  rn->add_option("--out", out_dir, "Output directory");
  rn->add_flag("--strict", strict, "Exit non-zero when a threshold fails");

  CLI11_PARSE(app, argc, argv);

#if defined(_OPENMP)
  if (g.threads > 0) omp_set_num_threads(g.threads);
#endif

  try {
    const bool seed_given = seed_opt->count() > 0;
    if (*mk) return cmd_make_phantoms(g, seed_given, out_dir);
    if (*tr) return cmd_train(g, seed_given, manifest, checkpoint_path, log_path);
    if (*ia) {
      const auto any = checkpoint::load(checkpoint_path);
      const auto conds = parse_cond_flags(cond_flags);
      return std::visit(
          [&](const auto& m) { return infer_atlas_typed(m, age, sigma, conds, resolution, out_dir); },
          any);
    }
    if (*ad) {
      const auto cfg = resolve_config(g, seed_given);
      const auto any = checkpoint::load(checkpoint_path);
      return std::visit(
          [&](const auto& m) {
            return adapt_typed(m, cfg, cfg.seed, image_path, mask_path, observe, out_dir);
          },
          any);
    }
    if (*ev) {
      const auto cfg = resolve_config(g, seed_given);
      const auto any = checkpoint::load(checkpoint_path);
      return std::visit(
          [&](const auto& m) { return evaluate_typed(m, cfg, cfg.seed, manifest, out_csv); }, any);
    }
    if (*ex) {
      pgm::export_mid_slices(nifti::read_volume(volume_path), channel, out_dir);
      return 0;
    }
    if (*rn) {
      const auto cfg = resolve_config(g, seed_given);
      return recipes::run_recipe(recipe, cfg, out_dir, strict);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
