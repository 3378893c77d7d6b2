#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "inatlas/atlas.hpp"
#include "inatlas/errors.hpp"
#include "inatlas/train.hpp"

namespace inatlas::analysis {

struct LatentEmbedding {
  Eigen::MatrixXd scores;      // subjects x components
  Eigen::MatrixXd components;  // latent dims x components
  std::vector<double> explained_variance_ratio;
  std::vector<std::string> subject_ids;
};

template <typename T>
Eigen::MatrixXd flattened_latents(const train::TrainedModel<T>& m) {
  const int n = static_cast<int>(m.subjects.size());
  const int p = m.cfg.latent_size();
  Eigen::MatrixXd x(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) x(i, j) = static_cast<double>(m.subjects[i].latent.z[j]);
  return x;
}

// PCA of the flattened latent codes (conditions excluded), deterministic
// sign convention: the largest-magnitude loading of each component is made
// positive.
template <typename T>
LatentEmbedding pca_latents(const train::TrainedModel<T>& m) {
  if (m.subjects.size() < 2)
    throw DegenerateInputError("pca_latents: need at least 2 subjects");
  Eigen::MatrixXd x = flattened_latents(m);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const int k = static_cast<int>(s.size());

  LatentEmbedding emb;
  emb.scores = svd.matrixU() * s.asDiagonal();
  emb.components = svd.matrixV();
  double total = 0.0;
  for (int i = 0; i < k; ++i) total += s(i) * s(i);
  for (int i = 0; i < k; ++i)
    emb.explained_variance_ratio.push_back(total > 0 ? s(i) * s(i) / total : 0.0);
  for (const auto& sub : m.subjects) emb.subject_ids.push_back(sub.id);

  for (int c = 0; c < emb.components.cols(); ++c) {
    int arg = 0;
    emb.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (emb.components(arg, c) < 0) {
      emb.components.col(c) = -emb.components.col(c);
      emb.scores.col(c) = -emb.scores.col(c);
    }
  }
  return emb;
}

// Fixed-metric soft-neighbor regression over reference latents: weights
// proportional to exp(-|q - z_i|^2 / h^2). The bandwidth h is the median
// nearest-neighbor distance among the references: with the median of ALL
// pairwise distances, half the references keep weight >= exp(-1) regardless
// of the latent geometry, which flattens the regression toward the cohort
// mean and biases edge-of-range queries by several weeks.
inline double soft_neighbor_regress(const Eigen::MatrixXd& references,
                                    const std::vector<double>& values,
                                    const Eigen::VectorXd& query) {
  const int n = static_cast<int>(references.rows());
  if (n < 1 || static_cast<int>(values.size()) != n)
    throw DegenerateInputError("soft_neighbor_regress: reference/value mismatch");
  if (n == 1) return values[0];

  std::vector<double> nn(n, std::numeric_limits<double>::infinity());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double d = (references.row(i) - references.row(j)).norm();
      nn[i] = std::min(nn[i], d);
      nn[j] = std::min(nn[j], d);
    }
  std::nth_element(nn.begin(), nn.begin() + nn.size() / 2, nn.end());
  double h = nn[nn.size() / 2];
  if (h <= 0.0) h = 1.0;

  double wsum = 0.0, acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d2 = (references.row(i).transpose() - query).squaredNorm();
    const double w = std::exp(-d2 / (h * h));
    wsum += w;
    acc += w * values[i];
  }
  if (wsum <= 0.0) {
    // Far query: fall back to the nearest reference.
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const double d = (references.row(i).transpose() - query).norm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    return values[best];
  }
  return acc / wsum;
}

template <typename T>
double predict_scan_age(const train::TrainedModel<T>& m, const Eigen::VectorXd& query_latent) {
  if (m.subjects.size() < 2)
    throw DegenerateInputError("predict_scan_age: need at least 2 subjects");
  std::vector<double> ages;
  for (const auto& s : m.subjects) ages.push_back(s.scan_age_weeks);
  return soft_neighbor_regress(flattened_latents(m), ages, query_latent);
}

template <typename T>
Eigen::VectorXd latent_vector(const model::LatentGrid<T>& g) {
  Eigen::VectorXd v(g.z.size());
  for (std::size_t i = 0; i < g.z.size(); ++i) v(i) = static_cast<double>(g.z[i]);
  return v;
}

// Linear interpolation between two subjects' latent codes (and conditions)
// evaluated on the reference grid at uniform fractions.
template <typename T>
std::vector<atlas::Atlas<T>> interpolate_latents(const train::TrainedModel<T>& m,
                                                 const std::string& id_a, const std::string& id_b,
                                                 int steps) {
  if (steps < 2) throw ConfigError("interpolate_latents: steps must be >= 2");
  const auto& a = m.subjects[m.find_subject(id_a)].latent;
  const auto& b = m.subjects[m.find_subject(id_b)].latent;
  std::vector<atlas::Atlas<T>> out;
  out.reserve(steps);
  for (int s = 0; s < steps; ++s) {
    const T f = static_cast<T>(s) / static_cast<T>(steps - 1);
    model::LatentGrid<T> mix;
    mix.z.resize(a.z.size());
    mix.xi.resize(a.xi.size());
    for (std::size_t i = 0; i < a.z.size(); ++i) mix.z[i] = (T(1) - f) * a.z[i] + f * b.z[i];
    for (std::size_t i = 0; i < a.xi.size(); ++i) mix.xi[i] = (T(1) - f) * a.xi[i] + f * b.xi[i];
    out.push_back(atlas::evaluate_latent_on_grid(m, mix, m.ref_dims, m.ref_spacing));
  }
  return out;
}

}  // namespace inatlas::analysis
