#include <doctest.h>

#include <cmath>

#include "inatlas/latent_analysis.hpp"
#include "inatlas/metrics.hpp"
#include "inatlas/rng.hpp"

using namespace inatlas;

namespace {

// A hand-built model whose latents we control (no training involved).
train::TrainedModel<float> synthetic_model(int n_subjects, int latent_dims,
                                           const std::function<void(int, std::vector<float>&)>&
                                               fill,
                                           const std::vector<double>& ages) {
  model::ModelConfig cfg;
  cfg.hidden_layers = 1;
  cfg.hidden_width = 4;
  cfg.modulated_layers = {1};
  cfg.latent_channels = latent_dims;
  cfg.latent_grid = {1, 1, 1};
  cfg.image_channels = 1;
  cfg.tissue_classes = 2;
  train::TrainedModel<float> m(cfg);
  for (int i = 0; i < n_subjects; ++i) {
    train::SubjectState<float> s;
    s.id = "s" + std::to_string(i);
    s.latent.z.assign(latent_dims, 0.0f);
    fill(i, s.latent.z);
    s.scan_age_weeks = ages[i];
    m.subjects.push_back(std::move(s));
  }
  m.age_min_weeks = *std::min_element(ages.begin(), ages.end());
  m.age_max_weeks = *std::max_element(ages.begin(), ages.end());
  return m;
}

}  // namespace

TEST_CASE("latents on a line give PC1 explained variance > 0.999") {
  Rng rng(3);
  std::vector<float> direction(16);
  for (auto& v : direction) v = static_cast<float>(rng.normal(0, 1));
  std::vector<double> ages(10);
  for (int i = 0; i < 10; ++i) ages[i] = 21.0 + i;
  const auto m = synthetic_model(
      10, 16,
      [&](int i, std::vector<float>& z) {
        for (std::size_t d = 0; d < z.size(); ++d) z[d] = static_cast<float>(i) * direction[d];
      },
      ages);
  const auto emb = analysis::pca_latents(m);
  CHECK(emb.explained_variance_ratio[0] > 0.999);
  // Scores along the line correlate perfectly with the index/age.
  std::vector<double> pc1, idx;
  for (int i = 0; i < 10; ++i) {
    pc1.push_back(emb.scores(i, 0));
    idx.push_back(i);
  }
  CHECK(std::abs(metrics::pearson(pc1, idx)) > 0.999);
}

TEST_CASE("pca scores are reproducible and reorder-invariant up to sign") {
  Rng rng(5);
  std::vector<double> ages(8);
  for (int i = 0; i < 8; ++i) ages[i] = 22.0 + i;
  auto filler = [&](int i, std::vector<float>& z) {
    Rng r(100 + i);
    for (auto& v : z) v = static_cast<float>(r.normal(0, 1));
  };
  const auto m1 = synthetic_model(8, 12, filler, ages);
  const auto e1 = analysis::pca_latents(m1);
  const auto e1b = analysis::pca_latents(m1);
  CHECK((e1.scores - e1b.scores).cwiseAbs().maxCoeff() < 1e-8);

  // Reversed subject order: per-subject scores must match after mapping.
  std::vector<double> rev_ages(ages.rbegin(), ages.rend());
  auto rev_filler = [&](int i, std::vector<float>& z) { filler(7 - i, z); };
  const auto m2 = synthetic_model(8, 12, rev_filler, rev_ages);
  const auto e2 = analysis::pca_latents(m2);
  for (int i = 0; i < 8; ++i)
    CHECK(std::abs(e1.scores(i, 0) - e2.scores(7 - i, 0)) < 1e-6);
}

TEST_CASE("pca rejects fewer than 2 subjects") {
  const auto m = synthetic_model(1, 4, [](int, std::vector<float>&) {}, {30.0});
  CHECK_THROWS_AS((void)analysis::pca_latents(m), DegenerateInputError);
}

TEST_CASE("soft-neighbor regression: equidistant query, self query, reorder invariance") {
  Eigen::MatrixXd refs(2, 3);
  refs << 1, 0, 0, -1, 0, 0;
  const std::vector<double> vals = {25.0, 35.0};
  Eigen::VectorXd mid(3);
  mid << 0, 0, 0;
  CHECK(analysis::soft_neighbor_regress(refs, vals, mid) == doctest::Approx(30.0));

  // A self query concentrates the mass on its own reference.
  Eigen::MatrixXd line(6, 1);
  line << 0.0, 0.8, 10.0, 10.8, 20.0, 20.8;
  const std::vector<double> ages = {20, 21, 30, 31, 40, 41};
  Eigen::VectorXd q(1);
  q << 0.0;
  const double est = analysis::soft_neighbor_regress(line, ages, q);
  CHECK(std::abs(est - 20.0) < 0.5);

  // Reordering the references leaves the prediction unchanged.
  Eigen::MatrixXd perm(6, 1);
  perm << 20.8, 20.0, 10.8, 10.0, 0.8, 0.0;
  const std::vector<double> perm_ages = {41, 40, 31, 30, 21, 20};
  CHECK(analysis::soft_neighbor_regress(perm, perm_ages, q) == doctest::Approx(est).epsilon(1e-12));
}
