#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "aiddti/core_types.hpp"

namespace aid {

enum class Dtype { float32, float64 };

std::string_view to_string(Dtype dtype);
Dtype parse_dtype(std::string_view name);

/// On-disk volume: a `.vol.json` header next to a `.vol.raw` little-endian
/// payload, x-fastest with the channel axis slowest. The mask lives in the
/// header as alternating run lengths starting with a masked-out run.
struct VolumeFile {
  Dims dims;
  std::size_t channels = 1;
  std::vector<double> data;
  Mask mask;
  std::optional<GradientScheme> scheme;
  nlohmann::json attributes = nlohmann::json::object();
};

struct VolumePaths {
  std::filesystem::path header;
  std::filesystem::path payload;
};

/// Accepts either a bare prefix or a path ending in `.vol.json`/`.vol.raw`.
VolumePaths volume_paths(const std::filesystem::path& path);

VolumeFile read_volume_file(const std::filesystem::path& path);
void write_volume_file(const VolumeFile& volume, const std::filesystem::path& path, Dtype dtype = Dtype::float32);

DwiVolume read_volume(const std::filesystem::path& path);
void write_volume(const DwiVolume& volume, const std::filesystem::path& path, Dtype dtype = Dtype::float32);

/// FSL layout: one row of b-values; three rows (x, y, z) of directions.
GradientScheme read_scheme(const std::filesystem::path& bval, const std::filesystem::path& bvec);
void write_scheme(const GradientScheme& scheme, const std::filesystem::path& bval,
                  const std::filesystem::path& bvec);

/// Three single-channel volumes `<prefix>_fa`, `<prefix>_md`, `<prefix>_ad`.
void write_metric_maps(const MetricMaps& maps, const std::filesystem::path& prefix, Dtype dtype = Dtype::float32);
MetricMaps read_metric_maps(const std::filesystem::path& prefix);
std::filesystem::path metric_map_path(const std::filesystem::path& prefix, Metric m);

std::vector<std::uint64_t> encode_mask_rle(const Mask& mask);
Mask decode_mask_rle(const std::vector<std::uint64_t>& runs, std::size_t voxels);

/// Writes to a sibling temporary file and renames it into place.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace aid
