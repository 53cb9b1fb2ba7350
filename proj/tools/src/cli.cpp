#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include "normap/normap.hpp"

namespace normap::cli {

namespace fs = std::filesystem;

namespace {

std::string subject_of(const fs::path& p) { return p.stem().string(); }

int parse_sex(const std::string& s) {
  if (s == "F" || s == "f" || s == "0") return 0;
  if (s == "M" || s == "m" || s == "1") return 1;
  throw ValidationError("usage", "unknown sex '" + s + "' (expected F, M, 0 or 1)");
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void require_same_geometry(const Geometry& a, const Geometry& b, const std::string& what) {
  if (!(a == b)) throw GeometryError(what + " does not match the mask geometry");
}

std::map<std::string, CovariateRecord> index_covariates(const std::vector<CovariateRecord>& recs) {
  std::map<std::string, CovariateRecord> out;
  for (const auto& r : recs) out.emplace(r.subject_id, r);
  return out;
}

// Runs f(i) for i in [0, n) on up to `jobs` threads. The first error is
// rethrown after all workers stop.
template <class F>
void parallel_for(std::size_t n, unsigned jobs, F&& f) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> workers;
    for (unsigned w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
          try {
            f(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            failed = true;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

struct Common {
  unsigned jobs = 1;
};

// ---- mask -----------------------------------------------------------------

struct MaskArgs {
  std::string template_path, out;
  double sd = 2.0, threshold = 0.5;
};

void cmd_mask(const MaskArgs& a, std::ostream& err) {
  const auto tmpl = io::read_volume(a.template_path);
  const auto mask = build_mask(tmpl, a.sd, a.threshold);
  ensure_parent(a.out);
  io::write_mask(mask, a.out);
  err << "mask: " << mask.count() << " of " << tmpl.size() << " voxels\n";
}

// ---- fit ------------------------------------------------------------------

struct FitArgs {
  std::vector<std::string> volumes;
  std::string covariates, mask, out_model;
  double spacing = 8.0;
  std::optional<double> epsilon;
  std::string mode = "sum-to-zero";
  std::uint64_t seed = 0;
};

void cmd_fit(const FitArgs& a, const Common& c, std::ostream& err) {
  const auto mask = io::read_mask(a.mask);
  const auto records = index_covariates(io::read_covariates(a.covariates));
  const ConstraintMode mode = parse_constraint_mode(a.mode);
  if (a.epsilon && !(*a.epsilon > 0.0)) throw ValidationError("usage", "--epsilon must be positive");
  if (a.volumes.size() < kMinCohort) {
    throw ValidationError("cohort", "fit needs at least " + std::to_string(kMinCohort) +
                                        " volumes, got " + std::to_string(a.volumes.size()));
  }

  std::vector<CovariateRecord> covars(a.volumes.size());
  for (std::size_t i = 0; i < a.volumes.size(); ++i) {
    const auto id = subject_of(a.volumes[i]);
    const auto it = records.find(id);
    if (it == records.end()) {
      throw ValidationError("cohort", a.volumes[i] + ": no covariate row for subject '" + id + "'");
    }
    covars[i] = it->second;
  }
  std::vector<VolumetricImage> images(a.volumes.size());
  parallel_for(a.volumes.size(), c.jobs, [&](std::size_t i) {
    images[i] = io::read_volume(a.volumes[i]);
    require_same_geometry(images[i].geometry(), mask.geometry(), a.volumes[i]);
  });

  const GridSpec grid = build_grid(mask, a.spacing);
  err << "fit: " << images.size() << " subjects, " << grid.count() << " grid centers\n";
  GridModel model = fit_grid(images, covars, grid, {c.jobs, a.seed});
  if (a.epsilon) model.rbf.epsilon_mm = *a.epsilon;
  model.rbf.mode = mode;

  std::size_t converged = 0, clamped = 0;
  for (const auto& f : model.fits) {
    converged += f.converged;
    clamped += f.clamped;
  }
  err << "fit: " << converged << "/" << model.fits.size() << " centers converged, " << clamped
      << " at the skewness guard\n";
  ensure_parent(a.out_model);
  io::save_model(model, a.out_model);
}

// ---- maps -----------------------------------------------------------------

struct MapsArgs {
  std::string model, mask, which = "params", out, out_dir, sex;
  std::optional<double> age, epsilon;
  std::optional<std::string> mode;
};

NormativeMapper make_mapper(const GridModel& model, const BrainMask& mask,
                            const std::optional<double>& epsilon,
                            const std::optional<std::string>& mode) {
  require_same_geometry(model.geometry(), mask.geometry(), "model");
  const double eps = epsilon.value_or(model.rbf.epsilon_mm);
  if (!(eps > 0.0)) throw ValidationError("usage", "--epsilon must be positive");
  return NormativeMapper(model, mask, eps, mode ? parse_constraint_mode(*mode) : model.rbf.mode);
}

void cmd_maps(const MapsArgs& a, std::ostream& err) {
  const auto model = io::load_model(a.model);
  const auto mask = io::read_mask(a.mask);
  const NormativeMapper mapper = make_mapper(model, mask, a.epsilon, a.mode);

  if (a.which == "params") {
    if (a.out_dir.empty()) throw ValidationError("usage", "--which params needs --out-dir");
    const auto maps = mapper.parameter_maps();
    fs::create_directories(a.out_dir);
    for (std::size_t p = 0; p < maps.maps.size(); ++p) {
      io::write_volume(maps[p], fs::path(a.out_dir) / (std::string(ParameterMaps::kNames[p]) + ".nvol"));
    }
    err << "maps: wrote " << maps.maps.size() << " parameter maps to " << a.out_dir << "\n";
    return;
  }
  if (a.out.empty()) throw ValidationError("usage", "--which " + a.which + " needs --out");
  if (a.sex.empty()) throw ValidationError("usage", "--which " + a.which + " needs --sex");
  const int sex = parse_sex(a.sex);
  VolumetricImage img;
  if (a.which == "predict") {
    if (!a.age) throw ValidationError("usage", "--which predict needs --age");
    if (!within_training_support(model, *a.age)) {
      err << "warning: age " << *a.age << " is outside the training range [" << model.design.age_min
          << ", " << model.design.age_max << "]\n";
    }
    img = mapper.predict_mean(*a.age, sex);
  } else if (a.which == "age-effect") {
    img = mapper.age_effect(sex);
  } else {
    throw ValidationError("usage", "unknown --which '" + a.which + "'");
  }
  ensure_parent(a.out);
  io::write_volume(img, a.out);
}

// ---- zmap -----------------------------------------------------------------

struct ZmapArgs {
  std::string model, mask, covariates, out, out_dir, sex, subject, group;
  std::vector<std::string> volumes;
  std::optional<double> age, epsilon;
  std::optional<std::string> mode;
  bool interpolate_parameters = false;
};

void cmd_zmap(const ZmapArgs& a, const Common& c, std::ostream& err) {
  const auto model = io::load_model(a.model);
  const auto mask = io::read_mask(a.mask);
  const NormativeMapper mapper = make_mapper(model, mask, a.epsilon, a.mode);
  const ZMapMode zmode = a.interpolate_parameters ? ZMapMode::InterpolateParameters : ZMapMode::GridThenInterpolate;

  const bool single = a.volumes.size() == 1;
  if (single == a.out.empty() || (!single && a.out_dir.empty())) {
    throw ValidationError("usage", "use --out with one volume or --out-dir with several");
  }
  std::vector<CovariateRecord> covars(a.volumes.size());
  if (!a.covariates.empty()) {
    const auto records = index_covariates(io::read_covariates(a.covariates));
    for (std::size_t i = 0; i < a.volumes.size(); ++i) {
      const auto id = a.subject.empty() || !single ? subject_of(a.volumes[i]) : a.subject;
      const auto it = records.find(id);
      if (it == records.end()) throw ValidationError("cohort", a.volumes[i] + ": no covariate row for '" + id + "'");
      covars[i] = it->second;
    }
  } else {
    if (!single) throw ValidationError("usage", "several volumes need --covariates");
    if (!a.age || a.sex.empty()) throw ValidationError("usage", "give --covariates or both --age and --sex");
    covars[0] = {a.subject.empty() ? subject_of(a.volumes[0]) : a.subject, *a.age, parse_sex(a.sex),
                 parse_group(a.group)};
    covars[0].validate();
  }

  std::atomic<std::size_t> outside{0};
  parallel_for(a.volumes.size(), c.jobs, [&](std::size_t i) {
    const auto img = io::read_volume(a.volumes[i]);
    require_same_geometry(img.geometry(), mask.geometry(), a.volumes[i]);
    if (!within_training_support(model, covars[i].age)) ++outside;
    const ZMap z = mapper.zmap(img, covars[i], zmode);
    const fs::path out = single ? fs::path(a.out) : fs::path(a.out_dir) / (covars[i].subject_id + ".nvol");
    ensure_parent(out);
    io::write_volume(z.to_image(mask), out);
  });
  if (outside) err << "warning: " << outside << " subject(s) outside the training age range\n";
  err << "zmap: wrote " << a.volumes.size() << " z-map(s)\n";
}

// ---- score ----------------------------------------------------------------

struct ScoreArgs {
  std::vector<std::string> zmaps;
  std::string mask, covariates, out, tail = "both";
  double q = 0.9999;
};

void cmd_score(const ScoreArgs& a, const Common& c, std::ostream& err) {
  if (!(a.q >= 0.0 && a.q < 1.0)) throw ValidationError("usage", "--q must lie in [0, 1)");
  const Tail tail = parse_tail(a.tail);
  const auto mask = io::read_mask(a.mask);
  std::map<std::string, CovariateRecord> records;
  if (!a.covariates.empty()) records = index_covariates(io::read_covariates(a.covariates));

  std::vector<ZMap> maps(a.zmaps.size());
  parallel_for(a.zmaps.size(), c.jobs, [&](std::size_t i) {
    const auto img = io::read_volume(a.zmaps[i]);
    require_same_geometry(img.geometry(), mask.geometry(), a.zmaps[i]);
    ZMap& z = maps[i];
    z.subject_id = subject_of(a.zmaps[i]);
    z.geometry = img.geometry();
    if (const auto it = records.find(z.subject_id); it != records.end()) z.covariates = it->second;
    z.values.reserve(mask.count());
    for (auto v : mask.voxels()) z.values.push_back(img[v]);
  });
  const CohortScores scores = score_cohort(maps, a.q, tail);
  ensure_parent(a.out);
  io::write_scores(scores.scores, a.out);
  for (const auto& g : scores.groups) {
    err << "score: " << to_string(g.group) << " n=" << g.n << " mean=" << g.mean << " sd=" << g.sd
        << " median=" << g.median << " min=" << g.min << " max=" << g.max << "\n";
  }
}

// ---- simulate -------------------------------------------------------------

struct SimulateArgs {
  std::string spec, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> normals, patients;
};

void cmd_simulate(const SimulateArgs& a, const Common& c, std::ostream& err) {
  SyntheticSpec spec = a.spec.empty() ? SyntheticSpec{} : load_synthetic_spec(a.spec);
  if (a.seed) spec.seed = *a.seed;
  if (a.normals) spec.n_normals = *a.normals;
  if (a.patients) spec.n_patients = *a.patients;
  const Cohort cohort = generate_cohort(spec, c.jobs);

  const fs::path root(a.out_dir);
  fs::create_directories(root / "volumes");
  fs::create_directories(root / "truth");
  {
    std::ofstream os(root / "spec.txt");
    os << format_synthetic_spec(spec);
    if (!os) throw ValidationError("io", "failed writing " + (root / "spec.txt").string());
  }
  io::write_covariates(cohort.covariates, root / "covariates.csv");
  io::write_volume(cohort.truth.mask_template, root / "template.nvol");
  io::write_volume(cohort.truth.disease_region, root / "truth" / "disease_region.nvol");
  for (std::size_t k = 0; k < kFieldCount; ++k) {
    io::write_volume(cohort.truth.fields[k], root / "truth" / (std::string(kFieldNames[k]) + ".nvol"));
  }
  parallel_for(cohort.images.size(), c.jobs, [&](std::size_t i) {
    io::write_volume(cohort.images[i], root / "volumes" / (cohort.covariates[i].subject_id + ".nvol"));
  });
  err << "simulate: " << spec.n_normals << " normals, " << spec.n_patients << " patients written to "
      << root.string() << "\n";
}

void report(std::ostream& err, const std::string& kind, int code, const std::string& message) {
  nlohmann::json j;
  j["error"] = kind;
  j["exit"] = code;
  j["message"] = message;
  err << j.dump() << "\n";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Normative skew-normal volumetric mapping", "normap"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI file of options; flags on the command line take precedence");
  Common common;
  app.add_option("--jobs,-j", common.jobs, "Worker threads")->check(CLI::PositiveNumber);

  MaskArgs mask;
  auto* m = app.add_subcommand("mask", "Build a brain mask from a binary template");
  m->add_option("--template", mask.template_path, "Binary template volume")->required();
  m->add_option("--sd", mask.sd, "Smoothing sd in voxels")->capture_default_str();
  m->add_option("--threshold", mask.threshold, "Threshold on the smoothed template")->capture_default_str();
  m->add_option("--out", mask.out, "Output mask volume")->required();

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Fit the normative model on a training cohort");
  f->add_option("volumes", fit.volumes, "Training volumes; file stems are subject ids")->required();
  f->add_option("--covariates", fit.covariates, "Covariate CSV")->required();
  f->add_option("--mask", fit.mask, "Mask volume")->required();
  f->add_option("--spacing", fit.spacing, "Grid spacing in mm")->capture_default_str();
  f->add_option("--epsilon", fit.epsilon, "RBF bandwidth in mm (default 2/3 of the spacing)");
  f->add_option("--mode", fit.mode, "RBF constraint: sum-to-zero or sum-to-one")->capture_default_str();
  f->add_option("--seed", fit.seed, "Recorded in the model")->capture_default_str();
  f->add_option("--out-model", fit.out_model, "Output model file")->required();

  MapsArgs maps;
  auto* p = app.add_subcommand("maps", "Interpolated parameter, prediction or age-effect maps");
  p->add_option("--model", maps.model)->required();
  p->add_option("--mask", maps.mask)->required();
  p->add_option("--which", maps.which, "params, predict or age-effect")
      ->check(CLI::IsMember({"params", "predict", "age-effect"}))
      ->capture_default_str();
  p->add_option("--age", maps.age, "Age in years (predict)");
  p->add_option("--sex", maps.sex, "F/M or 0/1 (predict, age-effect)");
  p->add_option("--epsilon", maps.epsilon, "Override the model's RBF bandwidth");
  p->add_option("--mode", maps.mode, "Override the model's RBF constraint");
  p->add_option("--out", maps.out, "Output volume (predict, age-effect)");
  p->add_option("--out-dir", maps.out_dir, "Output directory (params)");

  ZmapArgs zmap;
  auto* z = app.add_subcommand("zmap", "Transform subject volumes into z-maps");
  z->add_option("volumes", zmap.volumes, "Subject volumes")->required();
  z->add_option("--model", zmap.model)->required();
  z->add_option("--mask", zmap.mask)->required();
  z->add_option("--covariates", zmap.covariates, "Covariate CSV keyed by file stem");
  z->add_option("--age", zmap.age, "Age (single volume without --covariates)");
  z->add_option("--sex", zmap.sex, "F/M or 0/1 (single volume without --covariates)");
  z->add_option("--subject", zmap.subject, "Subject id (single volume)");
  z->add_option("--group", zmap.group, "Group label (single volume)");
  z->add_option("--epsilon", zmap.epsilon, "Override the model's RBF bandwidth");
  z->add_option("--mode", zmap.mode, "Override the model's RBF constraint");
  z->add_flag("--interpolate-parameters", zmap.interpolate_parameters,
              "Interpolate parameters first, then transform every voxel");
  z->add_option("--out", zmap.out, "Output z-map (single volume)");
  z->add_option("--out-dir", zmap.out_dir, "Output directory (several volumes)");

  ScoreArgs score;
  auto* s = app.add_subcommand("score", "Deviation scores from z-maps");
  s->add_option("zmaps", score.zmaps, "z-map volumes; file stems are subject ids")->required();
  s->add_option("--mask", score.mask)->required();
  s->add_option("--covariates", score.covariates, "Covariate CSV for group labels");
  s->add_option("--q", score.q, "Tail quantile")->capture_default_str();
  s->add_option("--tail", score.tail, "both, upper or lower")->capture_default_str();
  s->add_option("--out", score.out, "Output CSV")->required();

  SimulateArgs sim;
  auto* g = app.add_subcommand("simulate", "Generate a synthetic cohort with ground truth");
  g->add_option("--spec", sim.spec, "key = value spec file (defaults otherwise)");
  g->add_option("--seed", sim.seed, "Override the spec seed");
  g->add_option("--normals", sim.normals, "Override the number of normal subjects");
  g->add_option("--patients", sim.patients, "Override the number of patients");
  g->add_option("--out-dir", sim.out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    report(err, "usage", kInvalidInput, e.what());
    return kInvalidInput;
  }

  try {
    if (*m) cmd_mask(mask, err);
    else if (*f) cmd_fit(fit, common, err);
    else if (*p) cmd_maps(maps, err);
    else if (*z) cmd_zmap(zmap, common, err);
    else if (*s) cmd_score(score, common, err);
    else if (*g) cmd_simulate(sim, common, err);
  } catch (const ValidationError& e) {
    report(err, e.kind(), kInvalidInput, e.what());
    return kInvalidInput;
  } catch (const NumericalError& e) {
    report(err, e.kind(), kNumericalFailure, e.what());
    return kNumericalFailure;
  } catch (const fs::filesystem_error& e) {
    report(err, "io", kInvalidInput, e.what());
    return kInvalidInput;
  } catch (const std::exception& e) {
    report(err, "internal", kNumericalFailure, e.what());
    return kNumericalFailure;
  }
  return kOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"normap"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace normap::cli
