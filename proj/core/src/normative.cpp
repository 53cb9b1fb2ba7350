#include "normap/normative.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "normap/error.hpp"

namespace normap {

std::string to_string(Tail t) {
  switch (t) {
    case Tail::Both: return "both";
    case Tail::Upper: return "upper";
    case Tail::Lower: return "lower";
  }
  return "both";
}

Tail parse_tail(const std::string& s) {
  if (s == "both") return Tail::Both;
  if (s == "upper") return Tail::Upper;
  if (s == "lower") return Tail::Lower;
  throw ParseError("unknown tail '" + s + "' (expected both, upper or lower)");
}

VolumetricImage ZMap::to_image(const BrainMask& mask) const {
  if (!(mask.geometry() == geometry) || mask.count() != values.size()) {
    throw GeometryError("z-map does not match the mask");
  }
  VolumetricImage img(geometry, 0.0);
  const auto& voxels = mask.voxels();
  for (std::size_t i = 0; i < voxels.size(); ++i) img[voxels[i]] = values[i];
  return img;
}

double voxel_u(double y, const VoxelFit& fit, const DesignRow& x) {
  const SkewNormalDP dp = cp_to_dp(fit.cp(x));
  return std::clamp(sn_cdf(y, dp), kUClamp, 1.0 - kUClamp);
}

double voxel_u(double y, const VoxelFit& fit, const CovariateRecord& covariates,
               const DesignInfo& design) {
  return voxel_u(y, fit, design.row(covariates));
}

std::vector<double> center_z(const VolumetricImage& img, const CovariateRecord& covariates,
                             const GridModel& model) {
  if (!(img.geometry() == model.geometry())) {
    throw GeometryError("image for subject " + covariates.subject_id +
                        " does not match the model geometry");
  }
  covariates.validate();
  const DesignRow x = model.design.row(covariates);
  std::vector<double> z(model.grid.count());
  for (std::size_t j = 0; j < z.size(); ++j) {
    z[j] = std_normal_quantile(voxel_u(img[model.grid.centers[j]], model.fits[j], x));
  }
  return z;
}

NormativeMapper::NormativeMapper(const GridModel& model, const BrainMask& mask, double epsilon_mm,
                                 ConstraintMode mode)
    : model_(std::make_shared<const GridModel>(model)), interp_(model.grid, mask, epsilon_mm, mode) {
  model_->validate();
}

NormativeMapper::NormativeMapper(const GridModel& model, const BrainMask& mask)
    : NormativeMapper(model, mask, model.rbf.epsilon_mm, model.rbf.mode) {}

ZMap NormativeMapper::zmap(const VolumetricImage& img, const CovariateRecord& covariates,
                           ZMapMode mode) const {
  ZMap out;
  out.subject_id = covariates.subject_id;
  out.covariates = covariates;
  out.geometry = img.geometry();
  out.model_id = model_->training.input_digest;
  out.center_values = center_z(img, covariates, *model_);

  if (mode == ZMapMode::GridThenInterpolate) {
    out.values = interp_.on_mask(out.center_values);
    return out;
  }

  // Diagnostic route: interpolate the parameters, then transform each voxel.
  const GridModel& m = *model_;
  const DesignRow x = m.design.row(covariates);
  std::vector<double> mean(m.grid.count()), sigma(m.grid.count()), gamma(m.grid.count());
  for (std::size_t j = 0; j < m.grid.count(); ++j) {
    mean[j] = m.fits[j].mean(x);
    sigma[j] = m.fits[j].sigma;
    gamma[j] = m.fits[j].gamma;
  }
  const auto mean_v = interp_.on_mask(mean);
  const auto sigma_v = interp_.on_mask(sigma);
  const auto gamma_v = interp_.on_mask(gamma);
  const double sigma_floor = 1e-12 * (1.0 + *std::max_element(sigma.begin(), sigma.end()));
  const auto& voxels = mask().voxels();
  out.values.resize(voxels.size());
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    const SkewNormalCP cp{mean_v[i], std::max(sigma_v[i], sigma_floor),
                          std::clamp(gamma_v[i], -kSkewnessGuard, kSkewnessGuard)};
    const double u = std::clamp(sn_cdf(img[voxels[i]], cp_to_dp(cp)), kUClamp, 1.0 - kUClamp);
    out.values[i] = std_normal_quantile(u);
  }
  return out;
}

ParameterMaps NormativeMapper::parameter_maps() const {
  const GridModel& m = *model_;
  ParameterMaps out;
  std::vector<double> v(m.grid.count());
  for (std::size_t p = 0; p < ParameterMaps::kNames.size(); ++p) {
    for (std::size_t j = 0; j < v.size(); ++j) {
      const VoxelFit& f = m.fits[j];
      v[j] = p < 4 ? f.beta[p] : p == 4 ? f.sigma : f.gamma;
    }
    out.maps[p] = interp_.field(v);
  }
  return out;
}

VolumetricImage NormativeMapper::predict_mean(double age, int sex) const {
  if (sex != 0 && sex != 1) throw DomainError("sex must be 0 or 1");
  const GridModel& m = *model_;
  const DesignRow x = m.design.row(age, sex);
  std::vector<double> v(m.grid.count());
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = m.fits[j].mean(x);
  return interp_.field(v);
}

VolumetricImage NormativeMapper::age_effect(int sex) const {
  if (sex != 0 && sex != 1) throw DomainError("sex must be 0 or 1");
  const GridModel& m = *model_;
  std::vector<double> v(m.grid.count());
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = m.fits[j].beta[1] + sex * m.fits[j].beta[3];
  return interp_.field(v);
}

ZMap subject_zmap(const VolumetricImage& img, const CovariateRecord& covariates,
                  const GridModel& model, const BrainMask& mask, double epsilon_mm,
                  ConstraintMode mode, ZMapMode zmode) {
  return NormativeMapper(model, mask, epsilon_mm, mode).zmap(img, covariates, zmode);
}

double tail_mean(std::span<const double> z, double q, Tail tail, std::size_t* n_tail) {
  if (!(q >= 0.0 && q < 1.0)) throw DomainError("tail quantile q must lie in [0, 1)");
  if (z.empty()) throw DomainError("cannot score an empty z-map");
  std::vector<double> a(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    a[i] = tail == Tail::Both ? std::abs(z[i]) : tail == Tail::Upper ? z[i] : -z[i];
  }
  std::sort(a.begin(), a.end());
  const double n = static_cast<double>(a.size());
  // Guard ceil() against q * n landing a rounding error above an integer.
  const double rank = std::ceil(q * n - 1e-12 * std::max(1.0, n));
  const std::size_t k = std::min(static_cast<std::size_t>(std::max(0.0, rank)), a.size() - 1);
  double sum = 0.0;
  for (std::size_t i = k; i < a.size(); ++i) sum += a[i];
  if (n_tail) *n_tail = a.size() - k;
  return sum / static_cast<double>(a.size() - k);
}

DeviationScore deviation_index(const ZMap& zmap, double q, Tail tail) {
  DeviationScore s;
  s.subject_id = zmap.subject_id;
  s.group = zmap.covariates.group;
  s.q = q;
  s.value = tail_mean(zmap.values, q, tail, &s.n_tail);
  return s;
}

ParameterMaps parameter_maps(const GridModel& model, const BrainMask& mask, double epsilon_mm,
                             ConstraintMode mode) {
  return NormativeMapper(model, mask, epsilon_mm, mode).parameter_maps();
}

VolumetricImage predict_mean(const GridModel& model, double age, int sex, const BrainMask& mask,
                             double epsilon_mm, ConstraintMode mode) {
  return NormativeMapper(model, mask, epsilon_mm, mode).predict_mean(age, sex);
}

VolumetricImage age_effect_map(const GridModel& model, int sex, const BrainMask& mask,
                               double epsilon_mm, ConstraintMode mode) {
  return NormativeMapper(model, mask, epsilon_mm, mode).age_effect(sex);
}

bool within_training_support(const GridModel& model, double age) {
  return age >= model.design.age_min && age <= model.design.age_max;
}

CohortScores score_cohort(std::span<const ZMap> zmaps, double q, Tail tail) {
  CohortScores out;
  out.scores.reserve(zmaps.size());
  for (const auto& z : zmaps) out.scores.push_back(deviation_index(z, q, tail));
  std::sort(out.scores.begin(), out.scores.end(),
            [](const DeviationScore& a, const DeviationScore& b) { return a.subject_id < b.subject_id; });

  for (Group g : {Group::CN, Group::MCI, Group::AD, Group::Unknown}) {
    std::vector<double> v;
    for (const auto& s : out.scores) {
      if (s.group == g) v.push_back(s.value);
    }
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    GroupSummary gs;
    gs.group = g;
    gs.n = v.size();
    gs.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - gs.mean) * (x - gs.mean);
    gs.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    const std::size_t mid = v.size() / 2;
    gs.median = v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
    gs.min = v.front();
    gs.max = v.back();
    out.groups.push_back(gs);
  }
  return out;
}

}  // namespace normap
