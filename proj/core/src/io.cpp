#include "normap/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "json.hpp"
#include "normap/error.hpp"

namespace normap::io {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::string_view kMagicLine = "NVOL1\n";
constexpr std::uint64_t kMaxPayload = std::uint64_t{1} << 40;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("io", "cannot open " + path.string() + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw ValidationError("io", "failed writing " + path.string());
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::array<double, 3> read_triple(const ordered_json& j, const char* key) {
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) throw ParseError(std::string("'") + key + "' must be a 3-element array");
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

Dims read_dims(const ordered_json& j) {
  const auto& a = j.at("dims");
  if (!a.is_array() || a.size() != 3) throw ParseError("'dims' must be a 3-element array");
  Dims d;
  int* out[3] = {&d.nx, &d.ny, &d.nz};
  for (int i = 0; i < 3; ++i) {
    if (!a[static_cast<std::size_t>(i)].is_number_integer()) throw ParseError("'dims' entries must be integers");
    const auto v = a[static_cast<std::size_t>(i)].get<std::int64_t>();
    if (v < 1 || v > (std::int64_t{1} << 20)) {
      throw ParseError("dimension " + std::to_string(v) + " out of range [1, 1048576]");
    }
    *out[i] = static_cast<int>(v);
  }
  return d;
}

ordered_json geometry_json(const Geometry& g) {
  ordered_json j;
  j["dims"] = {g.dims.nx, g.dims.ny, g.dims.nz};
  j["voxel_size_mm"] = {g.voxel_size.x, g.voxel_size.y, g.voxel_size.z};
  return j;
}

Geometry geometry_from_json(const ordered_json& j) {
  Geometry g;
  g.dims = read_dims(j);
  const auto vs = read_triple(j, "voxel_size_mm");
  g.voxel_size = {vs[0], vs[1], vs[2]};
  for (double v : vs) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ParseError("voxel sizes must be positive and finite");
  }
  return g;
}

}  // namespace

std::uint64_t VolumeFileHeader::payload_bytes() const {
  const auto n = static_cast<std::uint64_t>(dims.nx) * static_cast<std::uint64_t>(dims.ny) *
                 static_cast<std::uint64_t>(dims.nz);
  if (n > kMaxPayload / 4) throw ParseError("volume dimensions overflow the supported payload size");
  return n * 4;
}

std::string encode_volume_header(const Geometry& geometry) {
  geometry.validate();
  ordered_json j = geometry_json(geometry);
  j["dtype"] = "f32le";
  std::uint64_t offset = 0;
  std::string text;
  for (;;) {
    j["data_offset"] = offset;
    text = std::string(kMagicLine) + j.dump();
    const std::size_t minimum = text.size() + 1;
    const std::uint64_t padded = (minimum + kHeaderAlignment - 1) / kHeaderAlignment * kHeaderAlignment;
    if (padded == offset) break;
    offset = padded;
  }
  text.append(offset - text.size() - 1, ' ');
  text.push_back('\n');
  return text;
}

VolumeFileHeader parse_volume_header(std::string_view bytes) {
  if (bytes.substr(0, kMagicLine.size()) != kMagicLine) {
    throw ParseError("bad magic: not an NVOL1 volume");
  }
  const auto nl = bytes.find('\n', kMagicLine.size());
  if (nl == std::string_view::npos) throw ParseError("unterminated NVOL1 header");
  ordered_json j;
  try {
    j = ordered_json::parse(bytes.substr(kMagicLine.size(), nl - kMagicLine.size()));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed NVOL1 header: ") + e.what());
  }
  VolumeFileHeader h;
  try {
    const Geometry g = geometry_from_json(j);
    h.dims = g.dims;
    h.voxel_size = g.voxel_size;
    h.dtype = j.at("dtype").get<std::string>();
    if (!j.at("data_offset").is_number_unsigned()) throw ParseError("'data_offset' must be a non-negative integer");
    h.data_offset = j.at("data_offset").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed NVOL1 header: ") + e.what());
  }
  if (h.dtype != "f32le") throw ParseError("unsupported dtype '" + h.dtype + "'");
  if (h.data_offset < nl + 1) throw ParseError("data_offset points inside the header");
  h.payload_bytes();
  return h;
}

std::vector<std::uint8_t> encode_volume(const VolumetricImage& img) {
  const std::string header = encode_volume_header(img.geometry());
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + img.size() * 4);
  for (double v : img.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    out.push_back(static_cast<std::uint8_t>(bits));
    out.push_back(static_cast<std::uint8_t>(bits >> 8));
    out.push_back(static_cast<std::uint8_t>(bits >> 16));
    out.push_back(static_cast<std::uint8_t>(bits >> 24));
  }
  return out;
}

VolumetricImage decode_volume(std::span<const std::uint8_t> bytes) {
  const std::string_view view(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const VolumeFileHeader h = parse_volume_header(view);
  const std::uint64_t expected = h.payload_bytes();
  const std::uint64_t actual = bytes.size() > h.data_offset ? bytes.size() - h.data_offset : 0;
  if (actual != expected) {
    std::ostringstream os;
    os << (actual < expected ? "truncated" : "oversized") << " payload: expected " << expected
       << " bytes, found " << actual;
    throw ParseError(os.str());
  }
  const std::size_t n = expected / 4;
  std::vector<double> data(n);
  const std::uint8_t* p = bytes.data() + h.data_offset;
  for (std::size_t i = 0; i < n; ++i, p += 4) {
    const std::uint32_t bits = std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
                               (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
    data[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return VolumetricImage(Geometry{h.dims, h.voxel_size}, std::move(data));
}

VolumetricImage read_volume(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_volume(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_volume(const VolumetricImage& img, const std::filesystem::path& path) {
  const auto bytes = encode_volume(img);
  write_file(path, bytes.data(), bytes.size());
}

BrainMask read_mask(const std::filesystem::path& path) {
  const VolumetricImage img = read_volume(path);
  std::vector<std::uint8_t> flags(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (img[i] != 0.0 && img[i] != 1.0) {
      throw ParseError(path.string() + ": mask voxel " + std::to_string(i) + " is neither 0 nor 1");
    }
    flags[i] = img[i] == 1.0;
  }
  try {
    return BrainMask(img.geometry(), std::move(flags));
  } catch (const EmptyMaskError&) {
    throw EmptyMaskError(path.string() + ": mask contains no voxels");
  }
}

void write_mask(const BrainMask& mask, const std::filesystem::path& path) {
  write_volume(mask.to_image(), path);
}

std::vector<CovariateRecord> parse_covariates(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError(source + ":" + std::to_string(line_no) + ": " + msg);
  };

  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    header = split_csv(line);
    break;
  }
  if (header.empty()) throw ParseError(source + ": empty covariate file");

  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* required : {"subject_id", "age", "sex", "group"}) {
    if (!col.count(required)) throw fail(std::string("missing column '") + required + "'");
  }

  std::vector<CovariateRecord> out;
  std::map<std::string, std::size_t> first_seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw fail("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    CovariateRecord r;
    r.subject_id = fields[col["subject_id"]];
    if (r.subject_id.empty()) throw fail("empty subject_id");

    const std::string& age = fields[col["age"]];
    const auto res = std::from_chars(age.data(), age.data() + age.size(), r.age);
    if (res.ec != std::errc() || res.ptr != age.data() + age.size() || !std::isfinite(r.age)) {
      throw fail("unparseable age '" + age + "'");
    }
    if (!(r.age > 0.0)) throw fail("age must be positive, got '" + age + "'");

    const std::string& sex = fields[col["sex"]];
    if (sex == "F" || sex == "0") {
      r.sex = 0;
    } else if (sex == "M" || sex == "1") {
      r.sex = 1;
    } else {
      throw fail("unknown sex code '" + sex + "' (expected F, M, 0 or 1)");
    }

    try {
      r.group = parse_group(fields[col["group"]]);
    } catch (const ParseError& e) {
      throw fail(e.what());
    }

    const auto [it, inserted] = first_seen.emplace(r.subject_id, line_no);
    if (!inserted) {
      throw fail("duplicate subject_id '" + r.subject_id + "' (first seen on line " +
                 std::to_string(it->second) + ")");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<CovariateRecord> read_covariates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return parse_covariates(in, path.string());
}

void write_covariates(std::span<const CovariateRecord> records, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "subject_id,age,sex,group\n";
  for (const auto& r : records) {
    os << r.subject_id << ',' << format_double(r.age) << ',' << (r.sex ? 'M' : 'F') << ','
       << to_string(r.group) << '\n';
  }
  const std::string text = os.str();
  write_file(path, text.data(), text.size());
}

std::string encode_model(const GridModel& model) {
  model.validate();
  ordered_json j;
  j["magic"] = kModelMagic;
  j["schema_version"] = kModelSchemaVersion;
  j["geometry"] = geometry_json(model.geometry());

  ordered_json grid;
  grid["spacing_mm"] = model.grid.spacing_mm;
  grid["offset_voxels"] = model.grid.offset_voxels;
  grid["centers"] = model.grid.centers;
  j["grid"] = std::move(grid);

  ordered_json design;
  design["columns"] = model.design.columns;
  design["age_center"] = model.design.age_center;
  design["age_min"] = model.design.age_min;
  design["age_max"] = model.design.age_max;
  design["sex_encoding"] = {{"F", 0}, {"M", 1}};
  j["design"] = std::move(design);

  ordered_json training;
  training["n_subjects"] = model.training.n_subjects;
  training["seed"] = model.training.seed;
  training["input_digest"] = model.training.input_digest;
  j["training"] = std::move(training);

  j["rbf"] = {{"epsilon_mm", model.rbf.epsilon_mm}, {"constraint", to_string(model.rbf.mode)}};

  ordered_json fits = ordered_json::array();
  for (const auto& f : model.fits) {
    ordered_json e;
    e["beta"] = f.beta;
    e["sigma"] = f.sigma;
    e["gamma"] = f.gamma;
    e["loglik"] = f.loglik;
    e["converged"] = f.converged;
    e["clamped"] = f.clamped;
    fits.push_back(std::move(e));
  }
  j["fits"] = std::move(fits);
  return j.dump(1) + "\n";
}

GridModel decode_model(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model file is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("magic") || !j["magic"].is_string() ||
      j["magic"].get<std::string>() != kModelMagic) {
    throw SchemaError("not a normap model file (bad magic)");
  }
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer()) {
    throw SchemaError("model file has no schema_version");
  }
  const int version = j["schema_version"].get<int>();
  if (version != kModelSchemaVersion) {
    throw SchemaError("model schema version " + std::to_string(version) + ", expected " +
                      std::to_string(kModelSchemaVersion));
  }

  GridModel m;
  try {
    m.grid.geometry = geometry_from_json(j.at("geometry"));
    const auto& grid = j.at("grid");
    m.grid.spacing_mm = read_triple(grid, "spacing_mm");
    m.grid.offset_voxels = read_triple(grid, "offset_voxels");
    m.grid.centers = grid.at("centers").get<std::vector<std::size_t>>();

    const auto& design = j.at("design");
    m.design.columns = design.at("columns").get<std::array<std::string, kDesignColumns>>();
    m.design.age_center = design.at("age_center").get<double>();
    m.design.age_min = design.at("age_min").get<double>();
    m.design.age_max = design.at("age_max").get<double>();
    const auto& enc = design.at("sex_encoding");
    if (enc.at("F").get<int>() != 0 || enc.at("M").get<int>() != 1) {
      throw SchemaError("unsupported sex encoding");
    }

    const auto& training = j.at("training");
    m.training.n_subjects = training.at("n_subjects").get<std::size_t>();
    m.training.seed = training.at("seed").get<std::uint64_t>();
    m.training.input_digest = training.at("input_digest").get<std::string>();

    m.rbf.epsilon_mm = j.at("rbf").at("epsilon_mm").get<double>();
    m.rbf.mode = parse_constraint_mode(j.at("rbf").at("constraint").get<std::string>());

    for (const auto& e : j.at("fits")) {
      VoxelFit f;
      f.beta = e.at("beta").get<Coefficients>();
      f.sigma = e.at("sigma").get<double>();
      f.gamma = e.at("gamma").get<double>();
      f.loglik = e.at("loglik").get<double>();
      f.converged = e.at("converged").get<bool>();
      f.clamped = e.at("clamped").get<bool>();
      m.fits.push_back(f);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model file: ") + e.what());
  }

  const std::size_t voxels = m.geometry().dims.voxel_count();
  for (std::size_t i = 0; i < m.grid.centers.size(); ++i) {
    if (m.grid.centers[i] >= voxels || (i > 0 && m.grid.centers[i] <= m.grid.centers[i - 1])) {
      throw ParseError("model grid centers must be increasing voxel indices inside the volume");
    }
  }
  if (!(m.rbf.epsilon_mm > 0.0)) throw ParseError("model RBF bandwidth must be positive");
  try {
    m.validate();
  } catch (const ValidationError& e) {
    throw ParseError(std::string("invalid model: ") + e.what());
  }
  return m;
}

void save_model(const GridModel& model, const std::filesystem::path& path) {
  const std::string text = encode_model(model);
  write_file(path, text.data(), text.size());
}

GridModel load_model(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_model(std::string(bytes.begin(), bytes.end()));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void write_scores(std::span<const DeviationScore> scores, std::ostream& out) {
  out << "subject_id,group,q,u_abs,n_tail_voxels\n";
  for (const auto& s : scores) {
    out << s.subject_id << ',' << to_string(s.group) << ',' << format_double(s.q) << ','
        << format_double(s.value) << ',' << s.n_tail << '\n';
  }
}

void write_scores(std::span<const DeviationScore> scores, const std::filesystem::path& path) {
  std::ostringstream os;
  write_scores(scores, os);
  const std::string text = os.str();
  write_file(path, text.data(), text.size());
}

}  // namespace normap::io
