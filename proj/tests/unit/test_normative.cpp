#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "normap/error.hpp"
#include "normap/normative.hpp"
#include "normap/synthesis.hpp"
#include "oracles.hpp"

using namespace normap;

namespace {

// 20^3 cube, 4mm grid, every center carrying the same hand-written fit.
struct HandModel {
  BrainMask mask;
  GridModel model;
};

HandModel hand_model(const VoxelFit& fit) {
  Geometry g{{20, 20, 20}, {1, 1, 1}};
  HandModel h{BrainMask(g, std::vector<std::uint8_t>(g.dims.voxel_count(), 1)), {}};
  h.model.grid = build_grid(h.mask, 4.0);
  h.model.design.age_center = 70.0;
  h.model.design.age_min = 60.0;
  h.model.design.age_max = 85.0;
  h.model.fits.assign(h.model.grid.count(), fit);
  h.model.rbf.epsilon_mm = 8.0 / 3.0;
  h.model.training.input_digest = "abc";
  return h;
}

VoxelFit make_fit(Coefficients b, double sigma, double gamma) {
  VoxelFit f;
  f.beta = b;
  f.sigma = sigma;
  f.gamma = gamma;
  f.converged = true;
  return f;
}

SyntheticSpec small_spec(std::size_t normals, std::size_t patients) {
  SyntheticSpec s;
  s.geometry = {{24, 24, 24}, {1, 1, 1}};
  s.mask_center_mm = {11.5, 11.5, 11.5};
  s.mask_radius_mm = 10.0;
  s.bump.center_mm = {9, 9, 9};
  s.bump.radius_mm = 4.0;
  s.bump.taper_mm = 3.0;
  s.n_normals = normals;
  s.n_patients = patients;
  s.seed = 7;
  return s;
}

struct Trained {
  Cohort cohort;
  BrainMask mask;
  GridModel model;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained out;
    out.cohort = generate_cohort(small_spec(500, 0), 4);
    out.mask = build_mask(out.cohort.truth.mask_template);
    out.model = fit_grid(out.cohort.images, out.cohort.covariates, build_grid(out.mask, 6.0), {4, 0});
    return out;
  }();
  return t;
}

}  // namespace

TEST(VoxelU, Examples) {
  const auto fit = make_fit({2.0, 0.1, 0.3, 0.0}, 0.5, 0.0);
  DesignInfo d;
  d.age_center = 70.0;
  const CovariateRecord c{"s", 75.0, 1, Group::CN};
  const double mean = fit.mean(d.row(c));
  EXPECT_NEAR(mean, 2.8, 1e-14);
  EXPECT_NEAR(voxel_u(mean, fit, c, d), 0.5, 1e-15);

  const auto skewed = make_fit({2.0, 0.1, 0.3, 0.0}, 0.5, 0.6);
  const double y = sn_quantile(0.9, cp_to_dp(skewed.cp(d.row(c))));
  EXPECT_NEAR(voxel_u(y, skewed, c, d), 0.9, 1e-9);
  EXPECT_EQ(voxel_u(1e6, skewed, c, d), 1.0 - kUClamp);
  EXPECT_EQ(voxel_u(-1e6, skewed, c, d), kUClamp);
}

TEST(VoxelU, TrainingCohortIsUniform) {
  const auto& t = trained();
  const std::size_t j = t.model.grid.count() / 2;
  std::vector<double> u;
  for (std::size_t i = 0; i < t.cohort.images.size(); ++i) {
    u.push_back(voxel_u(t.cohort.images[i][t.model.grid.centers[j]], t.model.fits[j],
                        t.cohort.covariates[i], t.model.design));
  }
  EXPECT_LT(oracle::ks_distance(u, [](double x) { return x; }), 0.08);
}

TEST(ZMap, MeanImageUnderSymmetricModelIsZero) {
  const auto h = hand_model(make_fit({1.0, 0.02, -0.1, 0.005}, 0.3, 0.0));
  const CovariateRecord c{"s1", 66.0, 1, Group::CN};
  const NormativeMapper mapper(h.model, h.mask);
  const auto mean_img = mapper.predict_mean(66.0, 1);
  const auto z = mapper.zmap(mean_img, c);
  for (double v : z.center_values) EXPECT_NEAR(v, 0.0, 1e-12);
  for (double v : z.values) EXPECT_NEAR(v, 0.0, 1e-10);
  EXPECT_EQ(z.subject_id, "s1");
  EXPECT_EQ(z.model_id, "abc");
  EXPECT_EQ(z.values.size(), h.mask.count());
}

TEST(ZMap, TransformConsistencyAndMonotone) {
  const auto h = hand_model(make_fit({1.0, 0.0, 0.0, 0.0}, 0.3, 0.5));
  std::mt19937_64 gen(1);
  std::normal_distribution<double> g(1.0, 0.3);
  VolumetricImage img(h.mask.geometry());
  for (auto& v : img.data()) v = g(gen);
  const CovariateRecord c{"s", 70.0, 0, Group::CN};
  const auto z = center_z(img, c, h.model);
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double u = voxel_u(img[h.model.grid.centers[j]], h.model.fits[j], c, h.model.design);
    EXPECT_NEAR(std_normal_cdf(z[j]), u, 1e-9);
  }
  auto bumped = img;
  bumped[h.model.grid.centers[3]] += 0.01;
  const auto z2 = center_z(bumped, c, h.model);
  EXPECT_GT(z2[3], z[3]);
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (j != 3) EXPECT_EQ(z2[j], z[j]);
  }
}

TEST(ZMap, ShiftInsideRegionRaisesCenters) {
  const auto& t = trained();
  const NormativeMapper mapper(t.model, t.mask);
  auto img = t.cohort.images[0];
  const auto before = mapper.zmap(img, t.cohort.covariates[0]);
  const auto& geo = img.geometry();
  std::vector<std::size_t> touched;
  for (std::size_t j = 0; j < t.model.grid.count(); ++j) {
    if (squared_distance(geo.position(t.model.grid.centers[j]), {12, 12, 12}) <= 36.0) touched.push_back(j);
  }
  ASSERT_FALSE(touched.empty());
  for (std::size_t v = 0; v < img.size(); ++v) {
    if (squared_distance(geo.position(v), {12, 12, 12}) <= 36.0) img[v] += 3.0;
  }
  const auto after = mapper.zmap(img, t.cohort.covariates[0]);
  for (auto j : touched) EXPECT_GT(after.center_values[j], before.center_values[j]);
}

TEST(ZMap, GeometryMismatch) {
  const auto h = hand_model(make_fit({1, 0, 0, 0}, 1, 0));
  const VolumetricImage wrong(Geometry{{20, 20, 21}, {1, 1, 1}});
  EXPECT_THROW(center_z(wrong, {"s", 70, 0, Group::CN}, h.model), GeometryError);
}

TEST(ZMap, Calibration) {
  const auto& t = trained();
  const NormativeMapper mapper(t.model, t.mask);
  const std::size_t nc = t.model.grid.count();
  std::vector<std::vector<double>> per_center(nc);
  std::size_t exceed = 0, total = 0;
  for (std::size_t i = 0; i < t.cohort.images.size(); ++i) {
    const auto z = center_z(t.cohort.images[i], t.cohort.covariates[i], t.model);
    for (std::size_t j = 0; j < nc; ++j) {
      per_center[j].push_back(z[j]);
      exceed += std::abs(z[j]) > 1.96;
      ++total;
    }
  }
  for (const auto& col : per_center) {
    const auto m = oracle::sample_moments(col);
    EXPECT_GE(m.mean, -0.15);
    EXPECT_LE(m.mean, 0.15);
    EXPECT_GE(m.sd, 0.85);
    EXPECT_LE(m.sd, 1.15);
  }
  // Fraction of |z| > 1.96 pooled over normative subjects and centers.
  EXPECT_NEAR(static_cast<double>(exceed) / static_cast<double>(total), 0.05, 0.03);
}

TEST(ZMap, DiagnosticModeAgreesAtCenters) {
  const auto& t = trained();
  const NormativeMapper mapper(t.model, t.mask);
  const auto a = mapper.zmap(t.cohort.images[3], t.cohort.covariates[3], ZMapMode::GridThenInterpolate);
  const auto b = mapper.zmap(t.cohort.images[3], t.cohort.covariates[3], ZMapMode::InterpolateParameters);
  ASSERT_EQ(a.values.size(), b.values.size());
  const auto& vox = t.mask.voxels();
  for (std::size_t j = 0; j < t.model.grid.count(); ++j) {
    const auto pos = std::lower_bound(vox.begin(), vox.end(), t.model.grid.centers[j]) - vox.begin();
    EXPECT_NEAR(a.values[static_cast<std::size_t>(pos)], b.values[static_cast<std::size_t>(pos)], 1e-6);
  }
}

TEST(TailMean, Examples) {
  const std::vector<double> z{0, -1, 2, -3, 4};
  std::size_t n = 0;
  EXPECT_DOUBLE_EQ(tail_mean(z, 0.6, Tail::Both, &n), 3.5);
  EXPECT_EQ(n, 2u);
  EXPECT_DOUBLE_EQ(tail_mean(z, 0.0, Tail::Both), 2.0);
  EXPECT_DOUBLE_EQ(tail_mean(z, 0.9999, Tail::Both, &n), 4.0);
  EXPECT_EQ(n, 1u);
  EXPECT_DOUBLE_EQ(tail_mean(z, 0.6, Tail::Upper), 3.0);
  EXPECT_DOUBLE_EQ(tail_mean(z, 0.6, Tail::Lower), 2.0);
  const std::vector<double> twos{2, -2, 2, -2, -2, 2};
  for (double q : {0.0, 0.3, 0.5, 0.99}) EXPECT_DOUBLE_EQ(tail_mean(twos, q, Tail::Both), 2.0);
  EXPECT_THROW(tail_mean(z, 1.0, Tail::Both), DomainError);
  EXPECT_THROW(tail_mean(z, -0.1, Tail::Both), DomainError);
  EXPECT_THROW(tail_mean(std::vector<double>{}, 0.5, Tail::Both), DomainError);
  EXPECT_EQ(parse_tail("upper"), Tail::Upper);
  EXPECT_THROW(parse_tail("top"), ParseError);
}

TEST(TailMean, NondecreasingInQ) {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> g;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> z(1 + rep * 37);
    for (auto& v : z) v = g(gen);
    double prev = -1.0;
    for (double q = 0.0; q < 1.0; q += 0.01) {
      const double u = tail_mean(z, q, Tail::Both);
      EXPECT_GE(u, prev);
      prev = u;
    }
  }
}

TEST(Scoring, CohortOrderAndSummary) {
  std::vector<ZMap> maps(3);
  maps[0].subject_id = "b";
  maps[0].covariates.group = Group::AD;
  maps[0].values = {1, -5, 2};
  maps[1].subject_id = "a";
  maps[1].covariates.group = Group::CN;
  maps[1].values = {0.5, 0.25};
  maps[2].subject_id = "c";
  maps[2].covariates.group = Group::CN;
  maps[2].values = {-1.5};
  const auto s = score_cohort(maps, 0.0);
  ASSERT_EQ(s.scores.size(), 3u);
  EXPECT_EQ(s.scores[0].subject_id, "a");
  EXPECT_DOUBLE_EQ(s.scores[0].value, 0.375);
  EXPECT_DOUBLE_EQ(s.scores[1].value, 8.0 / 3.0);
  ASSERT_EQ(s.groups.size(), 2u);
  EXPECT_EQ(s.groups[0].group, Group::CN);
  EXPECT_EQ(s.groups[0].n, 2u);
  EXPECT_DOUBLE_EQ(s.groups[0].mean, (0.375 + 1.5) / 2);
  EXPECT_DOUBLE_EQ(s.groups[0].median, (0.375 + 1.5) / 2);
  EXPECT_EQ(s.groups[1].group, Group::AD);

  std::vector<ZMap> reversed(maps.rbegin(), maps.rend());
  const auto r = score_cohort(reversed, 0.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.scores[i].value, s.scores[i].value);

  const auto single = score_cohort(std::span<const ZMap>(maps.data(), 1), 0.5);
  EXPECT_EQ(single.scores[0].value, deviation_index(maps[0], 0.5).value);
}

TEST(Scoring, PatientsScoreHigher) {
  const auto& t = trained();
  auto spec = small_spec(40, 40);
  spec.seed = 1234;
  const auto test = generate_cohort(spec, 4);
  const NormativeMapper mapper(t.model, t.mask);
  std::vector<double> normals, patients;
  for (std::size_t i = 0; i < test.images.size(); ++i) {
    const auto s = deviation_index(mapper.zmap(test.images[i], test.covariates[i]), 0.99);
    (test.covariates[i].group == Group::AD ? patients : normals).push_back(s.value);
  }
  const auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  EXPECT_GT(mean(patients), mean(normals));
}

TEST(Maps, ConstantModelGivesConstantMaps) {
  const auto h = hand_model(make_fit({1.5, -0.01, 0.2, 0.0}, 0.4, 0.3));
  const auto maps = parameter_maps(h.model, h.mask, 8.0 / 3.0, ConstraintMode::SumToZero);
  const double expect[6] = {1.5, -0.01, 0.2, 0.0, 0.4, 0.3};
  for (std::size_t p = 0; p < 6; ++p) {
    for (double v : maps[p].data()) EXPECT_NEAR(v, expect[p], 1e-12);
  }
  const auto f = age_effect_map(h.model, 0, h.mask, 8.0 / 3.0, ConstraintMode::SumToZero);
  const auto m = age_effect_map(h.model, 1, h.mask, 8.0 / 3.0, ConstraintMode::SumToZero);
  EXPECT_EQ(f.data(), m.data());
}

TEST(Maps, ExactAtCentersAndLinearInAge) {
  const auto& t = trained();
  const NormativeMapper mapper(t.model, t.mask);
  const auto maps = mapper.parameter_maps();
  for (std::size_t j = 0; j < t.model.grid.count(); ++j) {
    const auto v = t.model.grid.centers[j];
    const auto& f = t.model.fits[j];
    EXPECT_NEAR(maps[0][v], f.beta[0], 1e-8 * std::max(1.0, std::abs(f.beta[0])));
    EXPECT_NEAR(maps[4][v], f.sigma, 1e-8);
    EXPECT_NEAR(maps[5][v], f.gamma, 1e-8);
  }
  const auto at_center = mapper.predict_mean(t.model.design.age_center, 0);
  for (std::size_t v = 0; v < at_center.size(); ++v) EXPECT_NEAR(at_center[v], maps[0][v], 1e-12);

  for (int sex : {0, 1}) {
    const auto p70 = mapper.predict_mean(70.0, sex), p80 = mapper.predict_mean(80.0, sex);
    const auto p71 = mapper.predict_mean(71.0, sex);
    const auto effect = mapper.age_effect(sex);
    for (std::size_t v = 0; v < effect.size(); ++v) {
      EXPECT_NEAR(p80[v] - p70[v], 10.0 * effect[v], 1e-10);
      EXPECT_NEAR(p71[v] - p70[v], effect[v], 1e-10);
    }
  }
}

TEST(Maps, SigmaPeakInsideHighVarianceRegion) {
  const auto& t = trained();
  const auto maps = parameter_maps(t.model, t.mask, t.model.rbf.epsilon_mm, t.model.rbf.mode);
  const auto& sigma = maps[4];
  std::size_t best = t.mask.voxels().front();
  for (auto v : t.mask.voxels()) {
    if (sigma[v] > sigma[best]) best = v;
  }
  const auto p = sigma.geometry().position(best);
  // Bump radius 4 plus taper 3.
  EXPECT_LE(std::sqrt(squared_distance(p, {9, 9, 9})), 7.0);
}

TEST(Maps, PredictionsTrackGroundTruth) {
  const auto& t = trained();
  const NormativeMapper mapper(t.model, t.mask);
  const auto pred = mapper.predict_mean(75.0, 1);
  // Off-center error is dominated by the bump being narrower than the grid,
  // so accuracy is judged where the model was fitted.
  double err = 0.0;
  for (auto v : t.model.grid.centers) err += std::abs(pred[v] - t.cohort.truth.mean(v, 75.0, 1));
  err /= static_cast<double>(t.model.grid.count());
  EXPECT_LT(err, 0.01);
  EXPECT_TRUE(within_training_support(t.model, 75.0));
  EXPECT_FALSE(within_training_support(t.model, 30.0));
}
