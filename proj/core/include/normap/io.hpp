#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "normap/estimation.hpp"
#include "normap/geometry.hpp"
#include "normap/normative.hpp"

namespace normap::io {

// NVOL1 layout:
//   "NVOL1\n"
//   one-line JSON header {"dims":[nx,ny,nz],"voxel_size_mm":[sx,sy,sz],
//                         "dtype":"f32le","data_offset":K}
//   space padding, "\n"            (header is padded to a multiple of 64 bytes)
//   nx*ny*nz float32 little-endian values at byte K, x fastest.
inline constexpr char kVolumeMagic[] = "NVOL1";
inline constexpr std::size_t kHeaderAlignment = 64;

struct VolumeFileHeader {
  Dims dims;
  VoxelSize voxel_size;
  std::string dtype = "f32le";
  std::uint64_t data_offset = 0;

  /// Exact payload size implied by the dims; throws ParseError on overflow.
  std::uint64_t payload_bytes() const;
};

/// Serialised header bytes (magic through the padding newline).
std::string encode_volume_header(const Geometry& geometry);
VolumeFileHeader parse_volume_header(std::string_view bytes);

std::vector<std::uint8_t> encode_volume(const VolumetricImage& img);
VolumetricImage decode_volume(std::span<const std::uint8_t> bytes);

VolumetricImage read_volume(const std::filesystem::path& path);
void write_volume(const VolumetricImage& img, const std::filesystem::path& path);

/// A mask file is an NVOL1 volume holding only 0 and 1.
BrainMask read_mask(const std::filesystem::path& path);
void write_mask(const BrainMask& mask, const std::filesystem::path& path);

/// CSV with header subject_id,age,sex,group; sex as F/M or 0/1.
std::vector<CovariateRecord> parse_covariates(std::istream& in, const std::string& source = "<stream>");
std::vector<CovariateRecord> read_covariates(const std::filesystem::path& path);
void write_covariates(std::span<const CovariateRecord> records, const std::filesystem::path& path);

inline constexpr char kModelMagic[] = "NORMAP-MODEL";
inline constexpr int kModelSchemaVersion = 1;

std::string encode_model(const GridModel& model);
GridModel decode_model(const std::string& text);
void save_model(const GridModel& model, const std::filesystem::path& path);
GridModel load_model(const std::filesystem::path& path);

/// subject_id,group,q,u_abs,n_tail_voxels
void write_scores(std::span<const DeviationScore> scores, std::ostream& out);
void write_scores(std::span<const DeviationScore> scores, const std::filesystem::path& path);

}  // namespace normap::io
