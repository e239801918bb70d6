#pragma once

#include <array>
#include <cstddef>

#include "aiddti/core_types.hpp"
#include "aiddti/phantom.hpp"

namespace aid {

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
struct EigenSystem {
  Vec3 values{};
  std::array<Vec3, 3> vectors{};
};

/// Symmetric 3x3 eigendecomposition. Closed-form trigonometric solution of
/// the characteristic cubic; falls back to cyclic Jacobi rotations when
/// eigenvalues are nearly repeated or the closed form fails its residual check.
EigenSystem eigen3_sym(const Tensor6& a);
EigenSystem eigen3_sym_jacobi(const Tensor6& a);

struct FitOptions {
  /// Signals below clamp_fraction * S0 are raised to it before the log.
  double clamp_fraction = 1e-8;
  /// Fit only masked-in voxels; otherwise every voxel with positive b0.
  bool use_mask = true;
  /// Design matrices above this 2-norm condition number are rejected.
  double max_condition = 1e10;
};

struct FitReport {
  std::size_t fitted_voxels = 0;
  std::size_t clamped_voxels = 0;
  std::size_t flagged_voxels = 0;
  double condition_number = 0.0;
  double residual_rms_mean = 0.0;
  double residual_rms_max = 0.0;
};

struct FitResult {
  TensorField field;
  FitReport report;
};

/// Ordinary least squares on ln S_i = ln S0 - b_i g_i^T D g_i over the
/// unknowns (ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz). Voxels whose b0 is
/// non-positive or non-finite are flagged and dropped from the output mask.
FitResult fit_tensor_ols(const DwiVolume& volume, const FitOptions& options = {});

struct VoxelMetrics {
  double fa = 0.0;
  double md = 0.0;
  double ad = 0.0;
};

/// FA clamped into [0, 1]; MD and AD from the raw eigenvalues.
VoxelMetrics metrics_from_eigenvalues(const Vec3& lambda);
MetricMaps derive_metrics(const TensorField& field);

}  // namespace aid
