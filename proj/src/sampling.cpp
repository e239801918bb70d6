#include "aiddti/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "aiddti/rng.hpp"

namespace aid {

namespace {

double pair_energy(const Vec3& a, const Vec3& b) {
  double minus = 0.0, plus = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    minus += (a[c] - b[c]) * (a[c] - b[c]);
    plus += (a[c] + b[c]) * (a[c] + b[c]);
  }
  return 1.0 / std::sqrt(minus) + 1.0 / std::sqrt(plus);
}

double antipodal_distance(const Vec3& a, const Vec3& b) {
  double minus = 0.0, plus = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    minus += (a[c] - b[c]) * (a[c] - b[c]);
    plus += (a[c] + b[c]) * (a[c] + b[c]);
  }
  return std::sqrt(std::min(minus, plus));
}

struct Candidate {
  std::vector<std::size_t> chosen;  // positions into the diffusion-weighted list
  double energy = 0.0;
  std::vector<double> trace;
};

double subset_energy(const std::vector<std::vector<double>>& pair, const std::vector<std::size_t>& chosen) {
  double e = 0.0;
  for (std::size_t i = 0; i < chosen.size(); ++i)
    for (std::size_t j = i + 1; j < chosen.size(); ++j) e += pair[chosen[i]][chosen[j]];
  return e;
}

Candidate run_restart(const std::vector<Vec3>& dirs, const std::vector<std::vector<double>>& pair, std::size_t k,
                      Rng& rng) {
  const std::size_t m = dirs.size();
  Candidate c;
  std::vector<std::uint8_t> in_set(m, 0);
  std::vector<double> nearest(m, std::numeric_limits<double>::infinity());

  auto add = [&](std::size_t idx) {
    c.chosen.push_back(idx);
    in_set[idx] = 1;
    for (std::size_t j = 0; j < m; ++j) nearest[j] = std::min(nearest[j], antipodal_distance(dirs[idx], dirs[j]));
  };
  add(static_cast<std::size_t>(rng.below(m)));
  while (c.chosen.size() < k) {
    std::size_t best = m;
    for (std::size_t j = 0; j < m; ++j) {
      if (in_set[j]) continue;
      if (best == m || nearest[j] > nearest[best]) best = j;
    }
    add(best);
  }
  c.energy = subset_energy(pair, c.chosen);
  c.trace.push_back(c.energy);

  for (;;) {
    double best_delta = 0.0;
    std::size_t best_slot = 0, best_in = m;
    for (std::size_t slot = 0; slot < c.chosen.size(); ++slot) {
      const std::size_t out = c.chosen[slot];
      for (std::size_t in = 0; in < m; ++in) {
        if (in_set[in]) continue;
        double delta = 0.0;
        for (std::size_t other = 0; other < c.chosen.size(); ++other) {
          if (other == slot) continue;
          delta += pair[in][c.chosen[other]] - pair[out][c.chosen[other]];
        }
        if (delta < best_delta) {
          best_delta = delta;
          best_slot = slot;
          best_in = in;
        }
      }
    }
    // Require a real improvement so roundoff cannot cycle.
    if (best_in == m || !(best_delta < -1e-12 * std::max(1.0, std::abs(c.energy)))) break;
    in_set[c.chosen[best_slot]] = 0;
    in_set[best_in] = 1;
    c.chosen[best_slot] = best_in;
    const double updated = subset_energy(pair, c.chosen);
    if (!(updated < c.energy) && std::isfinite(c.energy)) break;
    c.energy = updated;
    c.trace.push_back(c.energy);
  }
  std::sort(c.chosen.begin(), c.chosen.end());
  return c;
}

}  // namespace

double electrostatic_energy(const std::vector<Vec3>& directions) {
  double e = 0.0;
  for (std::size_t i = 0; i < directions.size(); ++i)
    for (std::size_t j = i + 1; j < directions.size(); ++j) e += pair_energy(directions[i], directions[j]);
  return e;
}

double electrostatic_energy(const GradientScheme& scheme, const std::vector<std::size_t>& indices) {
  std::vector<Vec3> dirs;
  for (auto i : indices) dirs.push_back(scheme.bvecs.at(i));
  return electrostatic_energy(dirs);
}

SubsamplingResult select_uniform(const GradientScheme& scheme, std::size_t k, std::size_t restarts,
                                 std::uint64_t seed) {
  scheme.validate();
  const auto dw = scheme.dw_indices();
  if (k < 1 || k > dw.size()) {
    throw Error(ErrorCode::invalid_argument, "requested " + std::to_string(k) + " directions but the scheme has " +
                                                 std::to_string(dw.size()) + " diffusion-weighted directions");
  }
  std::vector<Vec3> dirs;
  for (auto i : dw) dirs.push_back(scheme.bvecs[i]);
  const std::size_t m = dirs.size();
  std::vector<std::vector<double>> pair(m, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) pair[i][j] = pair[j][i] = pair_energy(dirs[i], dirs[j]);

  Candidate best;
  bool have_best = false;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, restarts); ++r) {
    Rng rng(hash_key(seed, r));
    Candidate c = run_restart(dirs, pair, k, rng);
    if (!have_best || c.energy < best.energy) {
      best = std::move(c);
      have_best = true;
    }
  }

  SubsamplingResult result;
  for (auto pos : best.chosen) result.selected_indices.push_back(dw[pos]);
  result.energy = electrostatic_energy(scheme, result.selected_indices);
  result.energy_trace = std::move(best.trace);
  return result;
}

DwiVolume apply_subsampling(const DwiVolume& volume, const SubsamplingResult& result, std::size_t b0_keep) {
  const GradientScheme& parent = volume.scheme;
  const auto b0 = parent.b0_indices();
  if (b0_keep > b0.size()) {
    throw Error(ErrorCode::invalid_argument, "asked to keep " + std::to_string(b0_keep) + " b0 measurements, volume has " +
                                                 std::to_string(b0.size()));
  }
  std::vector<std::size_t> keep(b0.begin(), b0.begin() + static_cast<std::ptrdiff_t>(b0_keep));
  for (auto i : result.selected_indices) {
    if (i >= parent.size()) {
      throw Error(ErrorCode::out_of_range, "selected index " + std::to_string(i) + " out of range for " +
                                               std::to_string(parent.size()) + " measurements");
    }
    if (parent.is_b0(i)) throw Error(ErrorCode::invalid_argument, "selected index " + std::to_string(i) + " is a b0 measurement");
    keep.push_back(i);
  }
  std::sort(keep.begin(), keep.end());
  if (std::adjacent_find(keep.begin(), keep.end()) != keep.end())
    throw Error(ErrorCode::invalid_argument, "selected indices contain duplicates");

  DwiVolume out;
  out.dims = volume.dims;
  out.mask = volume.mask;
  const std::size_t n = volume.dims.voxels();
  out.data.resize(n * keep.size());
  for (std::size_t d = 0; d < keep.size(); ++d) {
    out.scheme.bvals.push_back(parent.bvals[keep[d]]);
    out.scheme.bvecs.push_back(parent.bvecs[keep[d]]);
    std::copy_n(volume.data.begin() + static_cast<std::ptrdiff_t>(keep[d] * n), n,
                out.data.begin() + static_cast<std::ptrdiff_t>(d * n));
  }
  return out;
}

GradientScheme uniform_scheme(std::size_t directions, double bval, std::size_t b0_count, std::uint64_t seed) {
  // Random rotation from a uniformly distributed unit quaternion.
  double q[4] = {1.0, 0.0, 0.0, 0.0};
  if (seed != 0) {
    Rng rng(seed);
    const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
    q[0] = std::sqrt(1 - u1) * std::sin(2 * std::numbers::pi * u2);
    q[1] = std::sqrt(1 - u1) * std::cos(2 * std::numbers::pi * u2);
    q[2] = std::sqrt(u1) * std::sin(2 * std::numbers::pi * u3);
    q[3] = std::sqrt(u1) * std::cos(2 * std::numbers::pi * u3);
  }
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  const double rot[3][3] = {{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                            {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                            {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};

  GradientScheme s;
  for (std::size_t i = 0; i < b0_count; ++i) {
    s.bvals.push_back(0.0);
    s.bvecs.push_back({0.0, 0.0, 0.0});
  }
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < directions; ++i) {
    const double zc = 1.0 - (static_cast<double>(i) + 0.5) / static_cast<double>(directions);
    const double r = std::sqrt(1.0 - zc * zc);
    const double phi = golden * static_cast<double>(i);
    const Vec3 g{r * std::cos(phi), r * std::sin(phi), zc};
    Vec3 out{};
    for (std::size_t a = 0; a < 3; ++a) out[a] = rot[a][0] * g[0] + rot[a][1] * g[1] + rot[a][2] * g[2];
    const double n = std::sqrt(out[0] * out[0] + out[1] * out[1] + out[2] * out[2]);
    for (double& c : out) c /= n;
    s.bvals.push_back(bval);
    s.bvecs.push_back(out);
  }
  return s;
}

}  // namespace aid
