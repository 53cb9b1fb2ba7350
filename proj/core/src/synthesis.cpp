#include "normap/synthesis.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include "normap/error.hpp"
#include "normap/rng.hpp"

namespace normap {

double Bump::weight(const Point3& p) const {
  const double r = std::sqrt(squared_distance(p, center_mm));
  if (r <= radius_mm) return 1.0;
  if (taper_mm <= 0.0 || r >= radius_mm + taper_mm) return 0.0;
  const double c = std::cos(0.5 * std::numbers::pi * (r - radius_mm) / taper_mm);
  return c * c;
}

bool Bump::contains(const Point3& p) const {
  return squared_distance(p, center_mm) <= radius_mm * radius_mm;
}

double FieldSpec::value(const Point3& p, const Point3& origin, double bump_weight) const {
  return base + gradient[0] * (p.x - origin.x) + gradient[1] * (p.y - origin.y) +
         gradient[2] * (p.z - origin.z) + bump * bump_weight;
}

void SyntheticSpec::validate() const {
  geometry.validate();
  if (!(mask_radius_mm > 0.0)) throw ValidationError("synthetic_spec", "mask radius must be positive");
  if (!(bump.radius_mm >= 0.0) || !(bump.taper_mm >= 0.0)) {
    throw ValidationError("synthetic_spec", "bump radius and taper must be non-negative");
  }
  if (n_normals + n_patients == 0) throw ValidationError("synthetic_spec", "cohort is empty");
  if (!(age_min > 0.0) || !(age_max >= age_min)) {
    throw ValidationError("synthetic_spec", "age range must satisfy 0 < min <= max");
  }
  if (!std::isfinite(disease_shift_sd)) throw ValidationError("synthetic_spec", "disease shift must be finite");

  const double gamma_limit = 0.95 * kMaxSkewness;
  for (std::size_t v = 0; v < geometry.dims.voxel_count(); ++v) {
    const Point3 p = geometry.position(v);
    const double w = bump.weight(p);
    const double sigma = fields[4].value(p, mask_center_mm, w);
    const double gamma = fields[5].value(p, mask_center_mm, w);
    if (!(sigma > 0.0)) {
      throw ValidationError("synthetic_spec", "sigma field is not positive at voxel " + std::to_string(v));
    }
    if (!(std::abs(gamma) <= gamma_limit)) {
      throw ValidationError("synthetic_spec",
                            "gamma field exceeds 0.95 of the skewness bound at voxel " + std::to_string(v));
    }
  }
}

double GroundTruth::mean(std::size_t voxel, double age, int sex) const {
  const double a = age - age_reference;
  return fields[0][voxel] + a * fields[1][voxel] + sex * fields[2][voxel] + a * sex * fields[3][voxel];
}

SkewNormalCP GroundTruth::cp(std::size_t voxel, double age, int sex) const {
  return {mean(voxel, age, sex), fields[4][voxel], fields[5][voxel]};
}

GroundTruth make_ground_truth(const SyntheticSpec& spec) {
  spec.validate();
  GroundTruth t;
  t.geometry = spec.geometry;
  t.age_reference = spec.age_reference;
  t.mask_template = VolumetricImage(spec.geometry, 0.0);
  t.disease_region = VolumetricImage(spec.geometry, 0.0);
  for (auto& f : t.fields) f = VolumetricImage(spec.geometry, 0.0);
  const double r2 = spec.mask_radius_mm * spec.mask_radius_mm;
  for (std::size_t v = 0; v < spec.geometry.dims.voxel_count(); ++v) {
    const Point3 p = spec.geometry.position(v);
    const double w = spec.bump.weight(p);
    for (std::size_t k = 0; k < kFieldCount; ++k) t.fields[k][v] = spec.fields[k].value(p, spec.mask_center_mm, w);
    t.mask_template[v] = squared_distance(p, spec.mask_center_mm) <= r2 ? 1.0 : 0.0;
    t.disease_region[v] = spec.bump.contains(p) ? 1.0 : 0.0;
  }
  return t;
}

Cohort generate_cohort(const SyntheticSpec& spec, unsigned jobs) {
  Cohort c;
  c.truth = make_ground_truth(spec);
  const GroundTruth& t = c.truth;
  const std::size_t n = spec.n_normals + spec.n_patients;
  const std::size_t nvox = spec.geometry.dims.voxel_count();

  // Per-voxel DP shape terms do not depend on the subject.
  std::vector<double> offset(nvox), scale(nvox), delta(nvox);
  for (std::size_t v = 0; v < nvox; ++v) {
    const SkewNormalDP dp = cp_to_dp({0.0, t.fields[4][v], t.fields[5][v]});
    offset[v] = dp.location;
    scale[v] = dp.scale;
    delta[v] = dp.shape / std::sqrt(1.0 + dp.shape * dp.shape);
  }

  const int width = std::max<int>(4, static_cast<int>(std::to_string(n).size()));
  c.covariates.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(CounterRng::split(spec.seed, i));
    CovariateRecord& r = c.covariates[i];
    std::string num = std::to_string(i + 1);
    r.subject_id = spec.id_prefix + "-" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(num.size(), width), '0') + num;
    r.age = spec.age_min + (spec.age_max - spec.age_min) * rng.uniform();
    r.sex = static_cast<int>(i % 2);
    r.group = i < spec.n_normals ? Group::CN : Group::AD;
  }

  c.images.resize(n);
  const auto make_subject = [&](std::size_t i) {
    const CovariateRecord& r = c.covariates[i];
    const bool patient = i >= spec.n_normals;
    CounterRng rng(CounterRng::split(CounterRng::split(spec.seed, i), 1));
    std::vector<double> data(nvox);
    for (std::size_t v = 0; v < nvox; ++v) {
      rng.seek(2 * v);
      double u0 = 0.0, w = 0.0;
      rng.normal_pair(u0, w);
      double y = t.mean(v, r.age, r.sex) + offset[v] + scale[v] * skew_normal_from_pair(u0, w, delta[v]);
      if (patient && t.disease_region[v] != 0.0) y += spec.disease_shift_sd * t.fields[4][v];
      data[v] = y;
    }
    c.images[i] = VolumetricImage(spec.geometry, std::move(data));
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) make_subject(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) make_subject(i);
      });
    }
  }
  return c;
}

namespace {

std::vector<std::string> tokens(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string t; is >> t;) out.push_back(t);
  return out;
}

double to_double(const std::string& tok, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    throw ParseError(where + ": expected a number, got '" + tok + "'");
  }
  return v;
}

std::uint64_t to_uint(const std::string& tok, const std::string& where) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw ParseError(where + ": expected a non-negative integer, got '" + tok + "'");
  }
  return v;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

SyntheticSpec parse_synthetic_spec(std::istream& in, const std::string& source) {
  SyntheticSpec s;
  using Setter = std::function<void(const std::vector<std::string>&, const std::string&)>;
  std::map<std::string, Setter> setters;

  const auto scalar = [](double& dst) {
    return Setter([&dst](const std::vector<std::string>& v, const std::string& where) {
      if (v.size() != 1) throw ParseError(where + ": expected 1 value");
      dst = to_double(v[0], where);
    });
  };
  const auto count = [](std::size_t& dst) {
    return Setter([&dst](const std::vector<std::string>& v, const std::string& where) {
      if (v.size() != 1) throw ParseError(where + ": expected 1 value");
      dst = static_cast<std::size_t>(to_uint(v[0], where));
    });
  };
  const auto point = [](Point3& dst) {
    return Setter([&dst](const std::vector<std::string>& v, const std::string& where) {
      if (v.size() != 3) throw ParseError(where + ": expected 3 values");
      dst = {to_double(v[0], where), to_double(v[1], where), to_double(v[2], where)};
    });
  };
  const auto triple = [](std::array<double, 3>& dst) {
    return Setter([&dst](const std::vector<std::string>& v, const std::string& where) {
      if (v.size() != 3) throw ParseError(where + ": expected 3 values");
      for (std::size_t a = 0; a < 3; ++a) dst[a] = to_double(v[a], where);
    });
  };

  setters["dims"] = [&s](const std::vector<std::string>& v, const std::string& where) {
    if (v.size() != 3) throw ParseError(where + ": expected 3 values");
    s.geometry.dims = {static_cast<int>(to_uint(v[0], where)), static_cast<int>(to_uint(v[1], where)),
                       static_cast<int>(to_uint(v[2], where))};
  };
  setters["voxel_size"] = [&s](const std::vector<std::string>& v, const std::string& where) {
    if (v.size() != 3) throw ParseError(where + ": expected 3 values");
    s.geometry.voxel_size = {to_double(v[0], where), to_double(v[1], where), to_double(v[2], where)};
  };
  setters["mask.center"] = point(s.mask_center_mm);
  setters["mask.radius"] = scalar(s.mask_radius_mm);
  setters["bump.center"] = point(s.bump.center_mm);
  setters["bump.radius"] = scalar(s.bump.radius_mm);
  setters["bump.taper"] = scalar(s.bump.taper_mm);
  for (std::size_t k = 0; k < kFieldCount; ++k) {
    const std::string name = kFieldNames[k];
    setters[name + ".base"] = scalar(s.fields[k].base);
    setters[name + ".gradient"] = triple(s.fields[k].gradient);
    setters[name + ".bump"] = scalar(s.fields[k].bump);
  }
  setters["age.reference"] = scalar(s.age_reference);
  setters["age.min"] = scalar(s.age_min);
  setters["age.max"] = scalar(s.age_max);
  setters["n_normals"] = count(s.n_normals);
  setters["n_patients"] = count(s.n_patients);
  setters["disease.shift_sd"] = scalar(s.disease_shift_sd);
  setters["seed"] = [&s](const std::vector<std::string>& v, const std::string& where) {
    if (v.size() != 1) throw ParseError(where + ": expected 1 value");
    s.seed = to_uint(v[0], where);
  };
  setters["id_prefix"] = [&s](const std::vector<std::string>& v, const std::string& where) {
    if (v.size() != 1) throw ParseError(where + ": expected 1 value");
    s.id_prefix = v[0];
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (tokens(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected 'key = value'");
    const auto key_tokens = tokens(line.substr(0, eq));
    if (key_tokens.size() != 1) throw ParseError(where + ": malformed key");
    const auto it = setters.find(key_tokens[0]);
    if (it == setters.end()) throw ParseError(where + ": unknown key '" + key_tokens[0] + "'");
    it->second(tokens(line.substr(eq + 1)), where);
  }
  return s;
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return parse_synthetic_spec(in, path.string());
}

std::string format_synthetic_spec(const SyntheticSpec& s) {
  std::ostringstream os;
  const auto p3 = [](const Point3& p) { return fmt(p.x) + " " + fmt(p.y) + " " + fmt(p.z); };
  os << "dims = " << s.geometry.dims.nx << ' ' << s.geometry.dims.ny << ' ' << s.geometry.dims.nz << '\n';
  os << "voxel_size = " << fmt(s.geometry.voxel_size.x) << ' ' << fmt(s.geometry.voxel_size.y) << ' '
     << fmt(s.geometry.voxel_size.z) << '\n';
  os << "mask.center = " << p3(s.mask_center_mm) << '\n';
  os << "mask.radius = " << fmt(s.mask_radius_mm) << '\n';
  os << "bump.center = " << p3(s.bump.center_mm) << '\n';
  os << "bump.radius = " << fmt(s.bump.radius_mm) << '\n';
  os << "bump.taper = " << fmt(s.bump.taper_mm) << '\n';
  for (std::size_t k = 0; k < kFieldCount; ++k) {
    const auto& f = s.fields[k];
    os << kFieldNames[k] << ".base = " << fmt(f.base) << '\n';
    os << kFieldNames[k] << ".gradient = " << fmt(f.gradient[0]) << ' ' << fmt(f.gradient[1]) << ' '
       << fmt(f.gradient[2]) << '\n';
    os << kFieldNames[k] << ".bump = " << fmt(f.bump) << '\n';
  }
  os << "age.reference = " << fmt(s.age_reference) << '\n';
  os << "age.min = " << fmt(s.age_min) << '\n';
  os << "age.max = " << fmt(s.age_max) << '\n';
  os << "n_normals = " << s.n_normals << '\n';
  os << "n_patients = " << s.n_patients << '\n';
  os << "disease.shift_sd = " << fmt(s.disease_shift_sd) << '\n';
  os << "seed = " << s.seed << '\n';
  os << "id_prefix = " << s.id_prefix << '\n';
  return os.str();
}

}  // namespace normap
