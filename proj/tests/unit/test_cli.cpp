#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "cli.hpp"
#include "normap/normap.hpp"

using namespace normap;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// One simulated study shared by every test in this file.
class CliStudy : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("normap_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(root_);
    std::ofstream spec(root_ / "spec.txt");
    spec << "dims = 24 24 24\n"
            "mask.center = 11.5 11.5 11.5\n"
            "mask.radius = 10\n"
            "bump.center = 12 12 12\n"
            "bump.radius = 4\n"
            "bump.taper = 2\n"
            "n_normals = 60\n"
            "n_patients = 12\n"
            "seed = 5\n";
    spec.close();
    auto r = run({"simulate", "--spec", (root_ / "spec.txt").string(), "--out-dir", (root_ / "sim").string(),
                  "--jobs", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"mask", "--template", (root_ / "sim/template.nvol").string(), "--out", (root_ / "mask.nvol").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run(fit_args(root_ / "model.json", "1"));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::vector<std::string> volumes(std::size_t from, std::size_t to) {
    std::vector<std::string> v;
    for (std::size_t i = from; i <= to; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "sub-%04zu.nvol", i);
      v.push_back((root_ / "sim/volumes" / id).string());
    }
    return v;
  }

  static std::vector<std::string> fit_args(const fs::path& out, const std::string& jobs) {
    std::vector<std::string> a{"--jobs", jobs, "fit", "--covariates", (root_ / "sim/covariates.csv").string(),
                               "--mask", (root_ / "mask.nvol").string(), "--spacing", "6",
                               "--out-model", out.string()};
    for (const auto& v : volumes(1, 60)) a.push_back(v);
    return a;
  }

  static fs::path root_;
};

fs::path CliStudy::root_;

}  // namespace

TEST_F(CliStudy, SimulateWritesCohortAndTruth) {
  EXPECT_TRUE(fs::exists(root_ / "sim/covariates.csv"));
  EXPECT_TRUE(fs::exists(root_ / "sim/truth/gamma.nvol"));
  EXPECT_TRUE(fs::exists(root_ / "sim/truth/disease_region.nvol"));
  EXPECT_EQ(io::read_covariates(root_ / "sim/covariates.csv").size(), 72u);
  const auto r = run({"simulate", "--spec", (root_ / "spec.txt").string(), "--out-dir", (root_ / "sim2").string()});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(slurp(root_ / "sim/volumes/sub-0007.nvol"), slurp(root_ / "sim2/volumes/sub-0007.nvol"));
  EXPECT_EQ(slurp(root_ / "sim/covariates.csv"), slurp(root_ / "sim2/covariates.csv"));
}

TEST_F(CliStudy, MaskMatchesLibraryAndIsRepeatable) {
  const auto lib = build_mask(io::read_volume(root_ / "sim/template.nvol"), 2.0, 0.5);
  EXPECT_EQ(io::read_mask(root_ / "mask.nvol").flags(), lib.flags());
  ASSERT_EQ(run({"mask", "--template", (root_ / "sim/template.nvol").string(), "--out", (root_ / "mask2.nvol").string()}).code, 0);
  EXPECT_EQ(slurp(root_ / "mask.nvol"), slurp(root_ / "mask2.nvol"));
}

TEST_F(CliStudy, MaskThresholdTooHighIsValidationError) {
  const auto r = run({"mask", "--template", (root_ / "sim/template.nvol").string(), "--threshold", "1.5", "--out",
                      (root_ / "bad.nvol").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("\"error\":\"empty_mask\""), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(root_ / "bad.nvol"));
}

TEST_F(CliStudy, FitIsDeterministicAcrossRunsAndJobs) {
  ASSERT_EQ(run(fit_args(root_ / "model_j4.json", "4")).code, 0);
  EXPECT_EQ(slurp(root_ / "model.json"), slurp(root_ / "model_j4.json"));
  const auto m = io::load_model(root_ / "model.json");
  EXPECT_EQ(m.training.n_subjects, 60u);
  EXPECT_NEAR(m.rbf.epsilon_mm, 4.0, 1e-12);
}

TEST_F(CliStudy, FitRefusesSmallCohort) {
  std::vector<std::string> a{"fit", "--covariates", (root_ / "sim/covariates.csv").string(), "--mask",
                             (root_ / "mask.nvol").string(), "--out-model", (root_ / "small.json").string()};
  for (const auto& v : volumes(1, 10)) a.push_back(v);
  const auto r = run(a);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("at least 20"), std::string::npos);
}

TEST_F(CliStudy, FitReportsMissingCovariates) {
  auto a = fit_args(root_ / "x.json", "1");
  fs::copy_file(volumes(1, 1)[0], root_ / "stranger.nvol", fs::copy_options::overwrite_existing);
  a.push_back((root_ / "stranger.nvol").string());
  const auto r = run(a);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("stranger"), std::string::npos);
}

TEST_F(CliStudy, ConfigFileSuppliesOptionsAndFlagsWin) {
  std::ofstream cfg(root_ / "fit.toml");
  cfg << "[fit]\nspacing = 8\nmode = \"sum-to-one\"\nepsilon = 3.5\n";
  cfg.close();
  auto a = fit_args(root_ / "cfg.json", "2");
  // fit_args passes --spacing 6 on the command line.
  a.insert(a.begin(), {"--config", (root_ / "fit.toml").string()});
  ASSERT_EQ(run(a).code, 0);
  const auto m = io::load_model(root_ / "cfg.json");
  EXPECT_EQ(m.grid.spacing_mm[0], 6.0);
  EXPECT_EQ(m.rbf.epsilon_mm, 3.5);
  EXPECT_EQ(m.rbf.mode, ConstraintMode::SumToOne);
}

TEST_F(CliStudy, MapsCommands) {
  const auto model = root_ / "model.json";
  const auto mask = root_ / "mask.nvol";
  ASSERT_EQ(run({"maps", "--model", model.string(), "--mask", mask.string(), "--which", "params", "--out-dir",
                 (root_ / "params").string()}).code, 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(root_ / "params")) n += e.path().extension() == ".nvol";
  EXPECT_EQ(n, 6u);

  ASSERT_EQ(run({"maps", "--model", model.string(), "--mask", mask.string(), "--which", "predict", "--age", "80",
                 "--sex", "F", "--out", (root_ / "pred.nvol").string()}).code, 0);
  const auto m = io::load_model(model);
  const auto k = io::read_mask(mask);
  const auto lib = predict_mean(m, 80.0, 0, k, m.rbf.epsilon_mm, m.rbf.mode);
  const auto file = io::read_volume(root_ / "pred.nvol");
  for (std::size_t v = 0; v < lib.size(); ++v) EXPECT_EQ(file[v], static_cast<double>(static_cast<float>(lib[v])));

  // With the interaction forced to zero both sexes share one age-effect map.
  auto flat = m;
  for (auto& f : flat.fits) f.beta[3] = 0.0;
  io::save_model(flat, root_ / "flat.json");
  for (const char* sex : {"F", "M"}) {
    ASSERT_EQ(run({"maps", "--model", (root_ / "flat.json").string(), "--mask", mask.string(), "--which", "age-effect",
                   "--sex", sex, "--out", (root_ / (std::string("age_") + sex + ".nvol")).string()}).code, 0);
  }
  EXPECT_EQ(slurp(root_ / "age_F.nvol"), slurp(root_ / "age_M.nvol"));

  const auto r = run({"maps", "--model", model.string(), "--mask", mask.string(), "--which", "predict", "--sex", "F",
                      "--out", (root_ / "p.nvol").string()});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliStudy, ZmapOfMeanImageUnderSymmetricModel) {
  auto m = io::load_model(root_ / "model.json");
  for (auto& f : m.fits) f.gamma = 0.0;
  io::save_model(m, root_ / "sym.json");
  const auto k = io::read_mask(root_ / "mask.nvol");
  const auto mean = predict_mean(m, 70.0, 1, k, m.rbf.epsilon_mm, m.rbf.mode);
  io::write_volume(mean, root_ / "meanimg.nvol");
  const auto r = run({"zmap", "--model", (root_ / "sym.json").string(), "--mask", (root_ / "mask.nvol").string(),
                      "--age", "70", "--sex", "M", "--out", (root_ / "zmean.nvol").string(),
                      (root_ / "meanimg.nvol").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto z = io::read_volume(root_ / "zmean.nvol");
  // Values pass through float32 on disk, so allow for that rounding.
  for (auto c : m.grid.centers) EXPECT_NEAR(z[c], 0.0, 1e-4);
}

TEST_F(CliStudy, ZmapAndScoreEndToEnd) {
  std::vector<std::string> a{"--jobs", "3", "zmap", "--model", (root_ / "model.json").string(), "--mask",
                             (root_ / "mask.nvol").string(), "--covariates", (root_ / "sim/covariates.csv").string(),
                             "--out-dir", (root_ / "z").string()};
  for (const auto& v : volumes(49, 72)) a.push_back(v);
  auto r = run(a);
  ASSERT_EQ(r.code, 0) << r.err;

  std::vector<std::string> s{"score", "--mask", (root_ / "mask.nvol").string(), "--covariates",
                             (root_ / "sim/covariates.csv").string(), "--q", "0.99", "--out",
                             (root_ / "scores.csv").string()};
  for (const auto& e : fs::directory_iterator(root_ / "z")) s.push_back(e.path().string());
  r = run(s);
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(root_ / "scores.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "subject_id,group,q,u_abs,n_tail_voxels");
  double cn = 0, ad = 0;
  int ncn = 0, nad = 0;
  std::string prev;
  while (std::getline(csv, line)) {
    std::istringstream ls(line);
    std::string id, group, q, u, n;
    std::getline(ls, id, ',');
    std::getline(ls, group, ',');
    std::getline(ls, q, ',');
    std::getline(ls, u, ',');
    EXPECT_LT(prev, id);
    prev = id;
    EXPECT_EQ(q, "0.99");
    (group == "AD" ? ad : cn) += std::stod(u);
    (group == "AD" ? nad : ncn) += 1;
  }
  EXPECT_EQ(ncn, 12);
  EXPECT_EQ(nad, 12);
  EXPECT_GT(ad / nad, cn / ncn);
  EXPECT_NE(r.err.find("score: AD"), std::string::npos);

  // q = 0 gives the mean |z| over the mask.
  const auto k = io::read_mask(root_ / "mask.nvol");
  const auto z = io::read_volume(root_ / "z/sub-0050.nvol");
  double mean_abs = 0.0;
  for (auto v : k.voxels()) mean_abs += std::abs(z[v]);
  mean_abs /= static_cast<double>(k.count());
  ASSERT_EQ(run({"score", "--mask", (root_ / "mask.nvol").string(), "--q", "0", "--out", (root_ / "s0.csv").string(),
                 (root_ / "z/sub-0050.nvol").string()}).code, 0);
  const auto text = slurp(root_ / "s0.csv");
  const auto last = text.substr(text.find('\n') + 1);
  std::istringstream ls(last);
  std::string id, group, q, u;
  std::getline(ls, id, ',');
  std::getline(ls, group, ',');
  std::getline(ls, q, ',');
  std::getline(ls, u, ',');
  EXPECT_EQ(group, "UNKNOWN");
  EXPECT_NEAR(std::stod(u), mean_abs, 1e-9);
}

TEST_F(CliStudy, UsageErrors) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"mask", "--out", "x"}).code, 2);
  const auto r = run({"score", "--mask", (root_ / "mask.nvol").string(), "--q", "1.0", "--out",
                      (root_ / "q.csv").string(), (root_ / "mask.nvol").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  EXPECT_EQ(run({"--help"}).code, 0);
  const auto missing = run({"mask", "--template", "/nonexistent.nvol", "--out", (root_ / "m.nvol").string()});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("\"error\":\"parse\""), std::string::npos);
}
