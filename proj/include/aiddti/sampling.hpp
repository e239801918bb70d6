#pragma once

#include <cstdint>
#include <vector>

#include "aiddti/core_types.hpp"

namespace aid {

struct SubsamplingResult {
  /// Sorted indices into the parent scheme, all diffusion-weighted.
  std::vector<std::size_t> selected_indices;
  double energy = 0.0;
  /// Energy after seeding and after each accepted exchange of the winning restart.
  std::vector<double> energy_trace;
};

/// Antipodally symmetric Coulomb energy sum_{i<j} 1/|g_i - g_j| + 1/|g_i + g_j|.
double electrostatic_energy(const std::vector<Vec3>& directions);
double electrostatic_energy(const GradientScheme& scheme, const std::vector<std::size_t>& indices);

/// Best of `restarts` runs of farthest-point seeding followed by
/// steepest-improvement pairwise exchange, until no swap lowers the energy.
/// Ties between restarts go to the lowest restart index.
SubsamplingResult select_uniform(const GradientScheme& scheme, std::size_t k, std::size_t restarts,
                                 std::uint64_t seed);

/// Keeps the first `b0_keep` b0 measurements plus the selected directions,
/// in parent order, copying the signals unchanged.
DwiVolume apply_subsampling(const DwiVolume& volume, const SubsamplingResult& result, std::size_t b0_keep = 1);

/// Near-uniform hemisphere directions from a Fibonacci lattice, rotated by a
/// seeded random rotation (seed 0 leaves it unrotated), preceded by `b0_count` b0 entries.
GradientScheme uniform_scheme(std::size_t directions, double bval, std::size_t b0_count, std::uint64_t seed = 0);

}  // namespace aid
