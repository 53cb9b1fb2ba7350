#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace normap {

struct Dims {
  int nx = 1;
  int ny = 1;
  int nz = 1;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  int operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Voxel edge lengths in mm.
struct VoxelSize {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  double operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  friend bool operator==(const VoxelSize&, const VoxelSize&) = default;
};

struct Index3 {
  int i = 0;
  int j = 0;
  int k = 0;
  friend bool operator==(const Index3&, const Index3&) = default;
};

/// Physical position in mm (voxel index times voxel size).
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

/// Shape and sampling shared by every volume of a study.
struct Geometry {
  Dims dims;
  VoxelSize voxel_size;

  /// Throws GeometryError on non-positive dims or voxel sizes.
  void validate() const;

  std::size_t linear(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims.nx) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims.ny) * k);
  }
  Index3 unravel(std::size_t idx) const {
    const auto nx = static_cast<std::size_t>(dims.nx), ny = static_cast<std::size_t>(dims.ny);
    return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny),
            static_cast<int>(idx / (nx * ny))};
  }
  Point3 position(const Index3& v) const {
    return {v.i * voxel_size.x, v.j * voxel_size.y, v.k * voxel_size.z};
  }
  Point3 position(std::size_t idx) const { return position(unravel(idx)); }

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

/// Scalar 3D field, x-fastest storage.
class VolumetricImage {
 public:
  VolumetricImage() = default;
  explicit VolumetricImage(Geometry geometry, double fill = 0.0);
  VolumetricImage(Geometry geometry, std::vector<double> data);

  const Geometry& geometry() const { return geometry_; }
  const Dims& dims() const { return geometry_.dims; }
  const VoxelSize& voxel_size() const { return geometry_.voxel_size; }
  std::size_t size() const { return data_.size(); }

  double& operator[](std::size_t idx) { return data_[idx]; }
  double operator[](std::size_t idx) const { return data_[idx]; }
  double& at(int i, int j, int k) { return data_[geometry_.linear(i, j, k)]; }
  double at(int i, int j, int k) const { return data_[geometry_.linear(i, j, k)]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

 private:
  Geometry geometry_;
  std::vector<double> data_;
};

class BrainMask {
 public:
  BrainMask() = default;
  /// Throws EmptyMaskError when no flag is set.
  BrainMask(Geometry geometry, std::vector<std::uint8_t> flags);

  const Geometry& geometry() const { return geometry_; }
  bool contains(std::size_t idx) const { return flags_[idx] != 0; }
  const std::vector<std::uint8_t>& flags() const { return flags_; }
  /// Linear indices of mask voxels, ascending.
  const std::vector<std::size_t>& voxels() const { return voxels_; }
  std::size_t count() const { return voxels_.size(); }

  /// 0/1 image, e.g. for persistence.
  VolumetricImage to_image() const;

 private:
  Geometry geometry_;
  std::vector<std::uint8_t> flags_;
  std::vector<std::size_t> voxels_;
};

struct GridSpec {
  Geometry geometry;
  std::array<double, 3> spacing_mm{8.0, 8.0, 8.0};
  std::array<double, 3> offset_voxels{0.0, 0.0, 0.0};
  /// Linear voxel indices of the grid centers, strictly increasing.
  std::vector<std::size_t> centers;

  std::size_t count() const { return centers.size(); }
  std::vector<Point3> center_positions() const;
};

/// Separable Gaussian smoothing. The kernel is truncated at ceil(4 sd)
/// voxels and renormalised at each output position so that weights falling
/// outside the volume are dropped.
VolumetricImage gaussian_smooth(const VolumetricImage& img, double sd_voxels);

/// Normalised 1D kernel weights for offsets -r..r, r = ceil(4 sd).
std::vector<double> gaussian_kernel_1d(double sd_voxels);

BrainMask build_mask(const VolumetricImage& tmpl, double sd_voxels = 2.0, double threshold = 0.5);

/// Offset defaults to half the spacing (in voxels) on each axis.
GridSpec build_grid(const BrainMask& mask, std::array<double, 3> spacing_mm,
                    std::optional<std::array<double, 3>> offset_voxels = std::nullopt);
GridSpec build_grid(const BrainMask& mask, double spacing_mm,
                    std::optional<std::array<double, 3>> offset_voxels = std::nullopt);

}  // namespace normap
