#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace aid {

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  size_mismatch,
  parse,
  io,
  rank_deficient,
  degenerate_patch,
  non_finite,
  divergence,
  unknown_preset,
  out_of_range,
};

std::string_view to_string(ErrorCode code);

/// Structured failure raised by every module. The code is stable and
/// machine-readable; the message carries the offending values.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

using Vec3 = std::array<double, 3>;
using Mask = std::vector<std::uint8_t>;

struct Dims {
  std::size_t w = 0;
  std::size_t h = 0;
  std::size_t s = 0;

  std::size_t voxels() const { return w * h * s; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + w * (y + h * z); }
  std::size_t operator[](std::size_t axis) const { return axis == 0 ? w : axis == 1 ? h : s; }
  bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

/// b-values (s/mm^2) and unit gradient directions, one entry per measurement.
struct GradientScheme {
  std::vector<double> bvals;
  std::vector<Vec3> bvecs;

  std::size_t size() const { return bvals.size(); }
  bool is_b0(std::size_t i) const { return bvals[i] <= 0.0; }
  std::vector<std::size_t> b0_indices() const;
  std::vector<std::size_t> dw_indices() const;

  /// Throws unless lengths agree, b >= 0, and every diffusion-weighted
  /// direction has unit norm to 1e-6.
  void validate(bool require_b0 = false) const;
};

/// 4D signal, x-fastest then y, z, and the measurement index slowest.
struct DwiVolume {
  Dims dims;
  GradientScheme scheme;
  std::vector<double> data;
  Mask mask;

  std::size_t directions() const { return scheme.size(); }
  std::size_t offset(std::size_t voxel, std::size_t dir) const { return voxel + dir * dims.voxels(); }
  double at(std::size_t voxel, std::size_t dir) const { return data[offset(voxel, dir)]; }
  double& at(std::size_t voxel, std::size_t dir) { return data[offset(voxel, dir)]; }

  /// Shape checks plus finite, non-negative signal inside the mask.
  void validate() const;
  /// Mean of all b0 measurements over masked-in voxels.
  double mean_b0() const;
};

enum class Metric : std::size_t { fa = 0, md = 1, ad = 2 };
inline constexpr std::size_t kMetricCount = 3;
inline constexpr std::array<std::string_view, kMetricCount> kMetricNames = {"FA", "MD", "AD"};

struct MetricMaps {
  Dims dims;
  std::vector<double> fa;
  std::vector<double> md;
  std::vector<double> ad;
  Mask mask;

  static MetricMaps zeros(const Dims& dims, Mask mask);

  std::vector<double>& channel(Metric m);
  const std::vector<double>& channel(Metric m) const;
  std::vector<double>& channel(std::size_t m) { return channel(static_cast<Metric>(m)); }
  const std::vector<double>& channel(std::size_t m) const { return channel(static_cast<Metric>(m)); }

  void validate() const;
};

/// An n x n x n cube cut from a volume. Voxel index inside the patch is
/// x + n*(y + n*z); signal is voxel-major with measurement channels inner,
/// target is voxel-major with (FA, MD, AD) inner. Masked-out voxels carry
/// zeros in both arrays.
struct Patch {
  std::array<std::size_t, 3> origin{};
  std::size_t n = 0;
  std::size_t channels = 0;
  std::vector<double> signal;
  std::vector<double> target;
  Mask mask;

  std::size_t voxels() const { return n * n * n; }
};

/// Every stride-aligned n^3 patch whose center voxel (origin + n/2) is
/// masked in. Signal channels follow the volume's measurement order.
std::vector<Patch> extract_patches(const DwiVolume& volume, const MetricMaps& targets, std::size_t n,
                                   std::size_t stride);

/// Grid origins along one axis for a given patch edge and stride.
std::vector<std::size_t> patch_origins(std::size_t dim, std::size_t n, std::size_t stride);

}  // namespace aid
