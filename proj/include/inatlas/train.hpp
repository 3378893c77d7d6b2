#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "inatlas/adam.hpp"
#include "inatlas/engine.hpp"
#include "inatlas/errors.hpp"
#include "inatlas/model.hpp"
#include "inatlas/volume.hpp"

namespace inatlas::train {

struct TrainConfig {
  double lr_network = 1e-4;
  double lr_latent = 5e-4;
  double lr_rigid = 7.5e-3;
  int batch_coords = 25000;
  int epochs = 1;
  double seg_loss_weight = 1.0;
  std::uint64_t seed = 0;
  bool double_precision = false;

  void validate() const {
    if (lr_network <= 0 || lr_latent <= 0 || lr_rigid <= 0)
      throw ConfigError("TrainConfig: learning rates must be positive");
    if (batch_coords < 1) throw ConfigError("TrainConfig: batch_coords must be >= 1");
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
  }
};

// Physical-unit mapping of one explicit condition, recorded at training time
// so adapted condition estimates are reportable in weeks / volume fractions.
struct ConditionRecord {
  std::string name;
  double phys_min = -1.0;
  double phys_max = 1.0;

  double to_normalized(double phys) const {
    return 2.0 * (phys - phys_min) / (phys_max - phys_min) - 1.0;
  }
  double to_physical(double normalized) const {
    return (normalized + 1.0) * 0.5 * (phys_max - phys_min) + phys_min;
  }
};

struct LossRecord {
  long iteration = 0;
  std::string subject;
  double mse = 0.0;
  double ce = 0.0;
  double total = 0.0;
};

// A cohort member as fed to training; the image is normalized internally.
struct TrainingSubject {
  std::string id;
  Volume image;
  LabelMap labels;
  Mask mask;
  double scan_age_weeks = 0.0;
  std::map<std::string, double> conditions;  // physical values
};

template <typename T>
struct SubjectState {
  std::string id;
  model::LatentGrid<T> latent;
  model::RigidParams<T> rigid;
  double scan_age_weeks = 0.0;
  std::map<std::string, double> conditions;
  CoordTransform transform;
  Dims dims{0, 0, 0};
  Spacing spacing{1, 1, 1};
};

template <typename T>
struct TrainedModel {
  model::ModelConfig cfg;
  model::ModelParams<T> params;
  std::vector<SubjectState<T>> subjects;
  std::vector<ConditionRecord> condition_records;
  double age_min_weeks = 0.0;
  double age_max_weeks = 0.0;
  Dims ref_dims{0, 0, 0};       // default atlas grid
  Spacing ref_spacing{1, 1, 1};
  std::vector<LossRecord> log;  // not serialized into checkpoints

  explicit TrainedModel(const model::ModelConfig& c) : cfg(c), params(c) {}

  int find_subject(const std::string& id) const {
    for (std::size_t i = 0; i < subjects.size(); ++i)
      if (subjects[i].id == id) return static_cast<int>(i);
    throw LookupError("unknown subject id: " + id);
  }

  double normalize_age(double weeks) const {
    if (age_max_weeks <= age_min_weeks) return 0.0;
    return 2.0 * (weeks - age_min_weeks) / (age_max_weeks - age_min_weeks) - 1.0;
  }
  double denormalize_age(double t) const {
    if (age_max_weeks <= age_min_weeks) return age_min_weeks;
    return (t + 1.0) * 0.5 * (age_max_weeks - age_min_weeks) + age_min_weeks;
  }
  double normalized_sigma(double sigma_weeks) const {
    if (age_max_weeks <= age_min_weeks) return sigma_weeks;
    return sigma_weeks * 2.0 / (age_max_weeks - age_min_weeks);
  }

  const ConditionRecord& condition_record(const std::string& name) const {
    for (const auto& r : condition_records)
      if (r.name == name) return r;
    throw LookupError("unknown condition: " + name);
  }
};

namespace detail {

// Normalized targets for one subject: intensity matrix gathered per batch.
template <typename T>
struct SubjectData {
  Volume normalized;  // C channels, masked min-max normalized
  std::vector<std::uint8_t> all_labels;
  std::vector<std::size_t> masked;  // linear voxel indices
};

template <typename T>
void gather_targets(const SubjectData<T>& data, const CoordinateBatch& batch, int channels,
                    engine::MatX<T>& image_targets, std::vector<std::uint8_t>& labels) {
  const std::size_t n = batch.size();
  const std::size_t nvox = data.normalized.voxel_count();
  image_targets.resize(channels, static_cast<int>(n));
  labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t vi = batch.voxel_indices[i];
    for (int c = 0; c < channels; ++c)
      image_targets(c, static_cast<int>(i)) =
          static_cast<T>(data.normalized.data[static_cast<std::size_t>(c) * nvox + vi]);
    labels[i] = data.all_labels[vi];
  }
}

template <typename T>
engine::MatX<T> coords_matrix(const CoordinateBatch& batch) {
  engine::MatX<T> m(3, static_cast<int>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (int a = 0; a < 3; ++a)
      m(a, static_cast<int>(i)) = static_cast<T>(batch.coords[3 * i + a]);
  return m;
}

}  // namespace detail

// One optimization step's loss and gradients for a subject batch (Eq. 1
// summands: per-coordinate MSE summed over channels plus weighted CE, both
// averaged over the batch).
template <typename T>
engine::BatchLoss<T> loss_step(const model::ModelConfig& cfg, const model::ModelParams<T>& params,
                               const model::LatentGrid<T>& latent,
                               const model::RigidParams<T>& rigid, const engine::MatX<T>& coords,
                               const engine::MatX<T>& image_targets,
                               const std::vector<std::uint8_t>& labels, double seg_loss_weight,
                               const engine::GradRequest& req, engine::Gradients<T>* grads) {
  engine::View<T> view{&cfg, &params, &latent, &rigid};
  engine::BatchTargets<T> targets;
  targets.image = &image_targets;
  targets.observed_channels.resize(cfg.image_channels);
  for (int c = 0; c < cfg.image_channels; ++c) targets.observed_channels[c] = c;
  targets.labels = &labels;
  targets.seg_weight = static_cast<T>(seg_loss_weight);
  return engine::run_batch(view, coords, targets, req, grads);
}

template <typename T>
TrainedModel<T> train(const std::vector<TrainingSubject>& cohort, model::ModelConfig cfg,
                      const TrainConfig& tcfg) {
  tcfg.validate();
  if (cohort.empty()) throw ConfigError("train: empty cohort");
  const int C = cohort.front().image.channels;
  const int K = cohort.front().labels.num_classes;
  for (const auto& s : cohort) {
    if (s.image.channels != C)
      throw ConfigError("train: inconsistent channel count for subject " + s.id);
    if (s.labels.num_classes != K)
      throw ConfigError("train: inconsistent class count for subject " + s.id);
    if (s.image.dims != s.labels.dims || s.image.dims != s.mask.dims)
      throw ShapeError("train: image/labels/mask dims mismatch for subject " + s.id);
  }
  cfg.image_channels = C;
  cfg.tissue_classes = K;
  cfg.validate();

  TrainedModel<T> model(cfg);
  model.params = model::init_model<T>(cfg, tcfg.seed);
  model.ref_dims = cohort.front().image.dims;
  model.ref_spacing = cohort.front().image.spacing;

  // Condition normalization records from the cohort's physical values.
  for (const auto& name : cfg.condition_names) {
    ConditionRecord rec;
    rec.name = name;
    double lo = 0, hi = 0;
    bool first = true;
    for (const auto& s : cohort) {
      auto it = s.conditions.find(name);
      if (it == s.conditions.end())
        throw ConfigError("train: subject " + s.id + " lacks condition " + name);
      lo = first ? it->second : std::min(lo, it->second);
      hi = first ? it->second : std::max(hi, it->second);
      first = false;
    }
    if (hi - lo < 1e-12) {
      // Constant condition: fall back to the signed convention so values in
      // [-1,1] pass through unchanged.
      rec.phys_min = -1.0;
      rec.phys_max = 1.0;
    } else {
      rec.phys_min = lo;
      rec.phys_max = hi;
    }
    model.condition_records.push_back(rec);
  }

  model.age_min_weeks = cohort.front().scan_age_weeks;
  model.age_max_weeks = cohort.front().scan_age_weeks;
  for (const auto& s : cohort) {
    model.age_min_weeks = std::min(model.age_min_weeks, s.scan_age_weeks);
    model.age_max_weeks = std::max(model.age_max_weeks, s.scan_age_weeks);
  }

  std::vector<detail::SubjectData<T>> data(cohort.size());
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& s = cohort[i];
    SubjectState<T> st;
    st.id = s.id;
    Rng lrng = Rng::derive(tcfg.seed, "train.latent_init", i);
    st.latent = model::init_latent<T>(cfg, lrng, false);
    for (int q = 0; q < cfg.condition_dims(); ++q) {
      const auto& rec = model.condition_records[q];
      st.latent.xi[q] = static_cast<T>(rec.to_normalized(s.conditions.at(rec.name)));
    }
    st.scan_age_weeks = s.scan_age_weeks;
    st.conditions = s.conditions;
    st.transform = normalize_coordinates(s.mask, s.mask.spacing);
    st.dims = s.image.dims;
    st.spacing = s.image.spacing;
    model.subjects.push_back(std::move(st));

    data[i].normalized = normalize_intensities(s.image, s.mask);
    data[i].all_labels.assign(s.labels.labels.begin(), s.labels.labels.end());
    data[i].masked = masked_voxel_indices(s.mask);
    if (data[i].masked.empty()) throw DegenerateInputError("train: empty mask for subject " + s.id);
  }

  engine::AdamState<T> net_state;
  std::vector<engine::AdamState<T>> z_states(cohort.size());
  std::vector<engine::AdamState<T>> rigid_states(cohort.size());

  Rng shuffle_rng = Rng::derive(tcfg.seed, "train.shuffle");
  Rng coord_rng = Rng::derive(tcfg.seed, "train.coords");

  std::vector<std::size_t> order(cohort.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  long iteration = 0;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
      const std::size_t si = order[oi];
      auto& st = model.subjects[si];
      const std::size_t masked = data[si].masked.size();
      const int batches =
          static_cast<int>((masked + tcfg.batch_coords - 1) / tcfg.batch_coords);
      for (int b = 0; b < batches; ++b) {
        CoordinateBatch batch = sample_coordinates(cohort[si].mask, tcfg.batch_coords, coord_rng,
                                                   st.transform, st.id);
        engine::MatX<T> coords = detail::coords_matrix<T>(batch);
        engine::MatX<T> image_targets;
        std::vector<std::uint8_t> labels;
        detail::gather_targets(data[si], batch, C, image_targets, labels);

        engine::View<T> view{&cfg, &model.params, &st.latent, &st.rigid};
        engine::Gradients<T> grads = engine::Gradients<T>::zeros(view);
        engine::GradRequest req;
        req.condition = false;  // explicit conditions are fixed inputs in training
        const auto loss = loss_step(cfg, model.params, st.latent, st.rigid, coords, image_targets,
                                    labels, tcfg.seg_loss_weight, req, &grads);
        if (!std::isfinite(static_cast<double>(loss.total)))
          throw NumericError("train: non-finite loss at iteration " + std::to_string(iteration));

        engine::adam_step(model.params.values, grads.network, net_state, tcfg.lr_network,
                          "network");
        engine::adam_step(st.latent.z, grads.z, z_states[si], tcfg.lr_latent, "latent");
        std::array<T, 6> rigid_params{st.rigid.axis_angle[0],  st.rigid.axis_angle[1],
                                      st.rigid.axis_angle[2],  st.rigid.translation[0],
                                      st.rigid.translation[1], st.rigid.translation[2]};
        engine::adam_step(rigid_params, grads.rigid, rigid_states[si], tcfg.lr_rigid, "rigid");
        for (int a = 0; a < 3; ++a) {
          st.rigid.axis_angle[a] = rigid_params[a];
          st.rigid.translation[a] = rigid_params[3 + a];
        }

        model.log.push_back({iteration, st.id, static_cast<double>(loss.mse),
                             static_cast<double>(loss.ce), static_cast<double>(loss.total)});
        ++iteration;
      }
    }
  }
  return model;
}

template <typename T>
struct Reconstruction {
  Volume intensities;   // C channels, zero outside the mask
  Volume probabilities; // K channels
  LabelMap labels;      // argmax, ties to the lowest class index
};

// Evaluates the model on one voxel set with a given latent/rigid pair.
template <typename T>
Reconstruction<T> evaluate_on_voxels(const TrainedModel<T>& model,
                                     const model::LatentGrid<T>& latent,
                                     const model::RigidParams<T>* rigid, const Mask& mask,
                                     const CoordTransform& transform,
                                     const std::vector<std::size_t>& voxels) {
  const auto& cfg = model.cfg;
  engine::MatX<T> coords(3, static_cast<int>(voxels.size()));
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    const Vec3 p = normalized_voxel_coord(mask, transform, voxels[i]);
    for (int a = 0; a < 3; ++a) coords(a, static_cast<int>(i)) = static_cast<T>(p[a]);
  }
  engine::View<T> view{&cfg, &model.params, &latent, rigid};
  engine::MatX<T> img, probs;
  engine::infer(view, coords, &img, &probs);

  Reconstruction<T> out;
  out.intensities = Volume(mask.dims, cfg.image_channels, mask.spacing);
  out.probabilities = Volume(mask.dims, cfg.tissue_classes, mask.spacing);
  out.labels = LabelMap(mask.dims, cfg.tissue_classes, mask.spacing);
  const std::size_t nvox = mask.voxel_count();
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    const std::size_t vi = voxels[i];
    for (int c = 0; c < cfg.image_channels; ++c)
      out.intensities.data[static_cast<std::size_t>(c) * nvox + vi] =
          static_cast<float>(img(c, static_cast<int>(i)));
    int best = 0;
    for (int k = 0; k < cfg.tissue_classes; ++k) {
      out.probabilities.data[static_cast<std::size_t>(k) * nvox + vi] =
          static_cast<float>(probs(k, static_cast<int>(i)));
      if (probs(k, static_cast<int>(i)) > probs(best, static_cast<int>(i))) best = k;
    }
    out.labels.labels[vi] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// Forward pass over a training subject's own masked grid with its optimized
// latent code and rigid alignment.
template <typename T>
Reconstruction<T> reconstruct_subject(const TrainedModel<T>& model, const std::string& id,
                                      const Mask& mask, bool apply_rigid = true) {
  const int si = model.find_subject(id);
  const auto& st = model.subjects[si];
  if (mask.dims != st.dims) throw ShapeError("reconstruct_subject: mask dims mismatch");
  return evaluate_on_voxels(model, st.latent, apply_rigid ? &st.rigid : nullptr, mask,
                            st.transform, masked_voxel_indices(mask));
}

void write_training_log(const std::vector<LossRecord>& log, const std::string& path);

// Exponentially smoothed total-loss trace (alpha applied to the new sample).
std::vector<double> smoothed_total_loss(const std::vector<LossRecord>& log, double alpha = 0.05);

}  // namespace inatlas::train
