#include "normap/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "normap/error.hpp"

namespace normap {

void Geometry::validate() const {
  if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1) {
    std::ostringstream os;
    os << "dims must be positive, got " << dims.nx << "x" << dims.ny << "x" << dims.nz;
    throw GeometryError(os.str());
  }
  for (int a = 0; a < 3; ++a) {
    if (!(voxel_size[a] > 0.0) || !std::isfinite(voxel_size[a])) {
      throw GeometryError("voxel sizes must be positive and finite");
    }
  }
}

VolumetricImage::VolumetricImage(Geometry geometry, double fill)
    : geometry_(geometry), data_() {
  geometry_.validate();
  data_.assign(geometry_.dims.voxel_count(), fill);
}

VolumetricImage::VolumetricImage(Geometry geometry, std::vector<double> data)
    : geometry_(geometry), data_(std::move(data)) {
  geometry_.validate();
  if (data_.size() != geometry_.dims.voxel_count()) {
    std::ostringstream os;
    os << "image data has " << data_.size() << " values, geometry needs "
       << geometry_.dims.voxel_count();
    throw GeometryError(os.str());
  }
}

BrainMask::BrainMask(Geometry geometry, std::vector<std::uint8_t> flags)
    : geometry_(geometry), flags_(std::move(flags)) {
  geometry_.validate();
  if (flags_.size() != geometry_.dims.voxel_count()) {
    throw GeometryError("mask flag count does not match geometry");
  }
  for (std::size_t i = 0; i < flags_.size(); ++i) {
    if (flags_[i]) {
      flags_[i] = 1;
      voxels_.push_back(i);
    }
  }
  if (voxels_.empty()) throw EmptyMaskError("mask contains no voxels");
}

VolumetricImage BrainMask::to_image() const {
  VolumetricImage img(geometry_, 0.0);
  for (auto v : voxels_) img[v] = 1.0;
  return img;
}

std::vector<Point3> GridSpec::center_positions() const {
  std::vector<Point3> out;
  out.reserve(centers.size());
  for (auto c : centers) out.push_back(geometry.position(c));
  return out;
}

std::vector<double> gaussian_kernel_1d(double sd_voxels) {
  if (!(sd_voxels > 0.0) || !std::isfinite(sd_voxels)) {
    throw DomainError("smoothing sd must be positive");
  }
  const int radius = static_cast<int>(std::ceil(4.0 * sd_voxels));
  std::vector<double> w(2 * radius + 1);
  double sum = 0.0;
  for (int d = -radius; d <= radius; ++d) {
    const double x = d / sd_voxels;
    w[d + radius] = std::exp(-0.5 * x * x);
    sum += w[d + radius];
  }
  for (auto& x : w) x /= sum;
  return w;
}

namespace {

// Convolve along one axis in place of `src` into `dst`.
void smooth_axis(const std::vector<double>& src, std::vector<double>& dst, const Dims& dims,
                 int axis, const std::vector<double>& kernel) {
  const int radius = static_cast<int>(kernel.size() / 2);
  const int n = dims[axis];
  const std::size_t stride = axis == 0 ? 1
                             : axis == 1 ? static_cast<std::size_t>(dims.nx)
                                         : static_cast<std::size_t>(dims.nx) * dims.ny;
  const std::size_t lines = dims.voxel_count() / static_cast<std::size_t>(n);

  for (std::size_t line = 0; line < lines; ++line) {
    // Base index of this line: decompose `line` over the two other axes.
    std::size_t base;
    if (axis == 0) {
      base = line * dims.nx;
    } else if (axis == 1) {
      const std::size_t i = line % dims.nx, k = line / dims.nx;
      base = i + k * static_cast<std::size_t>(dims.nx) * dims.ny;
    } else {
      base = line;
    }
    for (int p = 0; p < n; ++p) {
      const int lo = std::max(-radius, -p);
      const int hi = std::min(radius, n - 1 - p);
      double acc = 0.0, wsum = 0.0;
      for (int d = lo; d <= hi; ++d) {
        const double w = kernel[d + radius];
        acc += w * src[base + static_cast<std::size_t>(p + d) * stride];
        wsum += w;
      }
      dst[base + static_cast<std::size_t>(p) * stride] = acc / wsum;
    }
  }
}

}  // namespace

VolumetricImage gaussian_smooth(const VolumetricImage& img, double sd_voxels) {
  const auto kernel = gaussian_kernel_1d(sd_voxels);
  std::vector<double> a = img.data();
  std::vector<double> b(a.size());
  smooth_axis(a, b, img.dims(), 0, kernel);
  smooth_axis(b, a, img.dims(), 1, kernel);
  smooth_axis(a, b, img.dims(), 2, kernel);
  return VolumetricImage(img.geometry(), std::move(b));
}

BrainMask build_mask(const VolumetricImage& tmpl, double sd_voxels, double threshold) {
  for (double v : tmpl.data()) {
    if (v != 0.0 && v != 1.0) throw DomainError("mask template must be binary (0/1)");
  }
  const auto smoothed = gaussian_smooth(tmpl, sd_voxels);
  std::vector<std::uint8_t> flags(smoothed.size());
  std::size_t count = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    flags[i] = smoothed[i] > threshold ? 1 : 0;
    count += flags[i];
  }
  if (count == 0) {
    std::ostringstream os;
    os << "mask is empty: no smoothed template value exceeds threshold " << threshold;
    throw EmptyMaskError(os.str());
  }
  return BrainMask(tmpl.geometry(), std::move(flags));
}

GridSpec build_grid(const BrainMask& mask, std::array<double, 3> spacing_mm,
                    std::optional<std::array<double, 3>> offset_voxels) {
  const Geometry& g = mask.geometry();
  GridSpec grid;
  grid.geometry = g;
  grid.spacing_mm = spacing_mm;

  std::array<std::vector<int>, 3> axis_idx;
  for (int a = 0; a < 3; ++a) {
    const double step = spacing_mm[a] / g.voxel_size[a];
    if (!(step >= 1.0) || !std::isfinite(step)) {
      std::ostringstream os;
      os << "grid spacing " << spacing_mm[a] << " mm is below one voxel on axis " << a;
      throw DomainError(os.str());
    }
    const double offset = offset_voxels ? (*offset_voxels)[a] : 0.5 * step;
    if (!(offset >= 0.0) || !std::isfinite(offset)) throw DomainError("grid offset must be >= 0");
    grid.offset_voxels[a] = offset;
    for (int k = 0;; ++k) {
      const double p = offset + k * step;
      // Nearest voxel, ties toward the lower index.
      const int idx = static_cast<int>(std::ceil(p - 0.5));
      if (idx > g.dims[a] - 1) break;
      if (axis_idx[a].empty() || axis_idx[a].back() != idx) axis_idx[a].push_back(idx);
    }
  }

  for (int k : axis_idx[2]) {
    for (int j : axis_idx[1]) {
      for (int i : axis_idx[0]) {
        const auto lin = g.linear(i, j, k);
        if (mask.contains(lin)) grid.centers.push_back(lin);
      }
    }
  }
  if (grid.centers.empty()) throw EmptyMaskError("no grid center falls inside the mask");
  return grid;
}

GridSpec build_grid(const BrainMask& mask, double spacing_mm,
                    std::optional<std::array<double, 3>> offset_voxels) {
  return build_grid(mask, {spacing_mm, spacing_mm, spacing_mm}, offset_voxels);
}

}  // namespace normap
