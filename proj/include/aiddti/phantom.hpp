#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "aiddti/core_types.hpp"
#include "aiddti/volume_io.hpp"

namespace aid {

/// Symmetric 3x3 tensor stored as (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz), mm^2/s.
using Tensor6 = std::array<double, 6>;

/// g^T D g
double quadratic_form(const Tensor6& d, const Vec3& g);
/// sum_k evals[k] * evecs[k] evecs[k]^T
Tensor6 tensor_from_eigen(const Vec3& evals, const std::array<Vec3, 3>& evecs);

struct TensorField {
  Dims dims;
  std::vector<Tensor6> tensors;
  std::vector<double> s0;
  Mask mask;

  /// Shape checks, s0 > 0 and PSD (eigenvalues >= -1e-12) inside the mask.
  void validate() const;
};

/// Seven-channel volume: the six tensor components followed by S0.
VolumeFile to_volume_file(const TensorField& field);
TensorField tensor_field_from_volume_file(const VolumeFile& vf);

/// Names accepted by make_phantom.
const std::vector<std::string>& phantom_presets();

/// Synthetic tensor field inside an ellipsoidal mask.
///  - "iso-only": isotropic everywhere, diffusivity varying smoothly.
///  - "fiber-x":  a cylindrical single-fiber core along x in isotropic tissue.
///  - "mixed":    isotropic tissue, CSF pockets and three fiber bundles (one
///                curved), with seeded geometry offsets and per-voxel jitter.
TensorField make_phantom(const Dims& dims, std::string_view preset, std::uint64_t seed);

/// Whether voxel lies in the fiber core of the "fiber-x" preset.
bool fiber_x_core(const Dims& dims, std::size_t x, std::size_t y, std::size_t z);

/// Stejskal-Tanner: S_i = S0 exp(-b_i g_i^T D g_i). Masked-out voxels are 0.
DwiVolume simulate_dwi(const TensorField& field, const GradientScheme& scheme);

struct NoiseSpec {
  /// Standard deviation as a fraction of the mean masked-in b0 signal.
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// M = sqrt((S + n1)^2 + n2^2), n1, n2 ~ N(0, sigma_abs^2) drawn from a keyed
/// counter stream indexed by (voxel, measurement).
DwiVolume add_rician_noise(const DwiVolume& volume, const NoiseSpec& spec);
/// Same law applied to a bare signal value at a given counter.
double rician_sample(double signal, double sigma_abs, std::uint64_t seed, std::uint64_t counter);

}  // namespace aid
