#include "aiddti/phantom.hpp"

#include <cmath>
#include <numbers>

#include "aiddti/dti_fit.hpp"
#include "aiddti/parallel.hpp"
#include "aiddti/rng.hpp"

namespace aid {

namespace {

constexpr double kWhiteMatter[3] = {1.7e-3, 0.3e-3, 0.3e-3};
constexpr double kGreyMatter = 0.8e-3;
constexpr double kCsf = 3.0e-3;

struct Coord {
  double u, v, w;
};

// Voxel centre mapped into [-1, 1] per axis.
Coord normalized(const Dims& dims, std::size_t x, std::size_t y, std::size_t z) {
  auto map = [](std::size_t i, std::size_t n) { return (static_cast<double>(i) + 0.5) / static_cast<double>(n) * 2.0 - 1.0; };
  return {map(x, dims.w), map(y, dims.h), map(z, dims.s)};
}

bool inside_ellipsoid(const Coord& c, double ru, double rv, double rw) {
  return (c.u * c.u) / (ru * ru) + (c.v * c.v) / (rv * rv) + (c.w * c.w) / (rw * rw) <= 1.0;
}

Vec3 normalize(Vec3 a) {
  const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  return {a[0] / n, a[1] / n, a[2] / n};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

// Orthonormal frame with e1 = dir.
std::array<Vec3, 3> frame(const Vec3& dir) {
  const Vec3 e1 = normalize(dir);
  const Vec3 helper = std::abs(e1[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  const Vec3 e2 = normalize(cross(e1, helper));
  const Vec3 e3 = cross(e1, e2);
  return {e1, e2, e3};
}

Tensor6 isotropic(double d) { return {d, d, d, 0.0, 0.0, 0.0}; }

Tensor6 stick(const Vec3& dir, double l1, double l2, double l3) {
  return tensor_from_eigen({l1, l2, l3}, frame(dir));
}

TensorField empty_field(const Dims& dims) {
  TensorField f;
  f.dims = dims;
  f.tensors.assign(dims.voxels(), Tensor6{});
  f.s0.assign(dims.voxels(), 0.0);
  f.mask.assign(dims.voxels(), 0);
  return f;
}

TensorField iso_only(const Dims& dims, std::uint64_t seed) {
  Rng rng(seed);
  const double phase_u = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double phase_v = rng.uniform(0.0, 2.0 * std::numbers::pi);
  TensorField f = empty_field(dims);
  for (std::size_t z = 0; z < dims.s; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.w; ++x) {
        const Coord c = normalized(dims, x, y, z);
        if (!inside_ellipsoid(c, 0.95, 0.95, 0.95)) continue;
        const std::size_t i = dims.index(x, y, z);
        const double t = 0.5 + 0.5 * std::sin(std::numbers::pi * c.u + phase_u) * std::cos(std::numbers::pi * c.v + phase_v);
        f.tensors[i] = isotropic(0.7e-3 + 2.3e-3 * t);
        f.s0[i] = 1.0;
        f.mask[i] = 1;
      }
  return f;
}

TensorField fiber_x(const Dims& dims) {
  TensorField f = empty_field(dims);
  for (std::size_t z = 0; z < dims.s; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.w; ++x) {
        const Coord c = normalized(dims, x, y, z);
        if (!inside_ellipsoid(c, 0.95, 0.95, 0.95)) continue;
        const std::size_t i = dims.index(x, y, z);
        f.tensors[i] = fiber_x_core(dims, x, y, z) ? Tensor6{kWhiteMatter[0], kWhiteMatter[1], kWhiteMatter[2], 0, 0, 0}
                                                   : isotropic(kGreyMatter);
        f.s0[i] = 1.0;
        f.mask[i] = 1;
      }
  return f;
}

TensorField mixed(const Dims& dims, std::uint64_t seed) {
  Rng rng(seed);
  auto jitter = [&rng](double span) { return rng.uniform(-span, span); };
  // Seeded geometry.
  const double arc_cx = jitter(0.05), arc_cy = -0.35 + jitter(0.05);
  const double arc_radius = 0.5 + jitter(0.04);
  const double tube = 0.2;
  const double column_x = 0.58 + jitter(0.04), column_y = 0.3 + jitter(0.05);
  const double column_tilt = 0.35 + jitter(0.1);
  const double band_w = 0.55 + jitter(0.05);
  const double csf_x = 0.22 + jitter(0.04), csf_y = 0.12 + jitter(0.04);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  TensorField f = empty_field(dims);
  for (std::size_t z = 0; z < dims.s; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.w; ++x) {
        const Coord c = normalized(dims, x, y, z);
        if (!inside_ellipsoid(c, 0.95, 0.9, 0.95)) continue;
        const std::size_t i = dims.index(x, y, z);
        // Independent per-voxel texture, keyed so it does not depend on traversal.
        const double scale = 1.0 + 0.16 * (to_unit_open(hash_key(seed, i, 11)) - 0.5);
        const double ratio = 1.0 + 0.3 * (to_unit_open(hash_key(seed, i, 12)) - 0.5);
        f.mask[i] = 1;
        f.s0[i] = 1.0;

        const Coord left{c.u + csf_x, c.v - csf_y, c.w}, right{c.u - csf_x, c.v - csf_y, c.w};
        if (inside_ellipsoid(left, 0.14, 0.22, 0.4) || inside_ellipsoid(right, 0.14, 0.22, 0.4)) {
          f.tensors[i] = isotropic(kCsf * scale);
          f.s0[i] = 1.5;
          continue;
        }

        f.tensors[i] = [&]() -> Tensor6 {
          // Curved bundle: tangent to a circle in the xy-plane.
          const double du = c.u - arc_cx, dv = c.v - arc_cy;
          const double rho = std::sqrt(du * du + dv * dv);
          if (std::abs(rho - arc_radius) <= tube && dv >= -0.1 && std::abs(c.w) <= 0.6) {
            const Vec3 tangent{-dv / rho, du / rho, 0.0};
            return stick(tangent, kWhiteMatter[0] * scale, kWhiteMatter[1] * ratio, kWhiteMatter[2] / ratio);
          }
          // Two tilted columns running mostly along z.
          for (double side : {-1.0, 1.0}) {
            const double cu = c.u - side * column_x, cv = c.v - column_y;
            if (cu * cu + cv * cv <= tube * tube) {
              const Vec3 dir{side * column_tilt * c.w, 0.15 * std::sin(std::numbers::pi * c.w), 1.0};
              return stick(dir, kWhiteMatter[0] * scale, kWhiteMatter[1] * ratio, kWhiteMatter[2] / ratio);
            }
          }
          // A band along x near the top.
          if (std::abs(c.w - band_w) <= 0.14 && std::abs(c.v) <= 0.5) {
            const Vec3 dir{1.0, 0.3 * c.v, 0.0};
            return stick(dir, 1.5e-3 * scale, 0.35e-3 * ratio, 0.35e-3 / ratio);
          }
          // Grey matter with a smooth diffusivity gradient and mild anisotropy.
          const double d = kGreyMatter * (1.0 + 0.25 * std::sin(2.0 * c.u + phase) * std::cos(1.5 * c.v)) * scale;
          const Vec3 dir{std::cos(c.v * 2.0 + phase), std::sin(c.v * 2.0 + phase), 0.3};
          return stick(dir, d * 1.12, d * 0.94, d * 0.94);
        }();
      }
  return f;
}

}  // namespace

double quadratic_form(const Tensor6& d, const Vec3& g) {
  return d[0] * g[0] * g[0] + d[1] * g[1] * g[1] + d[2] * g[2] * g[2] +
         2.0 * (d[3] * g[0] * g[1] + d[4] * g[0] * g[2] + d[5] * g[1] * g[2]);
}

Tensor6 tensor_from_eigen(const Vec3& evals, const std::array<Vec3, 3>& evecs) {
  Tensor6 t{};
  for (std::size_t k = 0; k < 3; ++k) {
    const Vec3& e = evecs[k];
    const double l = evals[k];
    t[0] += l * e[0] * e[0];
    t[1] += l * e[1] * e[1];
    t[2] += l * e[2] * e[2];
    t[3] += l * e[0] * e[1];
    t[4] += l * e[0] * e[2];
    t[5] += l * e[1] * e[2];
  }
  return t;
}

void TensorField::validate() const {
  const std::size_t n = dims.voxels();
  if (tensors.size() != n || s0.size() != n || mask.size() != n)
    throw Error(ErrorCode::size_mismatch, "tensor field arrays do not match dims " + to_string(dims));
  for (std::size_t v = 0; v < n; ++v) {
    if (!mask[v]) continue;
    if (!(s0[v] > 0.0)) throw Error(ErrorCode::invalid_argument, "S0 <= 0 at masked-in voxel " + std::to_string(v));
    const auto eig = eigen3_sym(tensors[v]);
    if (eig.values[2] < -1e-12)
      throw Error(ErrorCode::invalid_argument, "tensor at voxel " + std::to_string(v) + " is not positive semi-definite");
  }
}

VolumeFile to_volume_file(const TensorField& field) {
  VolumeFile vf;
  vf.dims = field.dims;
  vf.channels = 7;
  vf.mask = field.mask;
  const std::size_t n = field.dims.voxels();
  vf.data.resize(n * 7);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t c = 0; c < 6; ++c) vf.data[v + c * n] = field.tensors[v][c];
    vf.data[v + 6 * n] = field.s0[v];
  }
  vf.attributes = {{"content", "tensor_field"}, {"channel_order", "Dxx,Dyy,Dzz,Dxy,Dxz,Dyz,S0"}};
  return vf;
}

TensorField tensor_field_from_volume_file(const VolumeFile& vf) {
  if (vf.channels != 7)
    throw Error(ErrorCode::size_mismatch, "tensor field volume needs 7 channels, found " + std::to_string(vf.channels));
  TensorField f = empty_field(vf.dims);
  f.mask = vf.mask;
  const std::size_t n = vf.dims.voxels();
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t c = 0; c < 6; ++c) f.tensors[v][c] = vf.data[v + c * n];
    f.s0[v] = vf.data[v + 6 * n];
  }
  return f;
}

const std::vector<std::string>& phantom_presets() {
  static const std::vector<std::string> names = {"iso-only", "fiber-x", "mixed"};
  return names;
}

bool fiber_x_core(const Dims& dims, std::size_t x, std::size_t y, std::size_t z) {
  const Coord c = normalized(dims, x, y, z);
  return inside_ellipsoid(c, 0.95, 0.95, 0.95) && c.v * c.v + c.w * c.w <= 0.35 * 0.35;
}

TensorField make_phantom(const Dims& dims, std::string_view preset, std::uint64_t seed) {
  if (dims.w < 4 || dims.h < 4 || dims.s < 4)
    throw Error(ErrorCode::invalid_argument, "phantom dims must each be >= 4, got " + to_string(dims));
  if (preset == "iso-only") return iso_only(dims, seed);
  if (preset == "fiber-x") return fiber_x(dims);
  if (preset == "mixed") return mixed(dims, seed);
  std::string names;
  for (const auto& n : phantom_presets()) names += (names.empty() ? "" : ", ") + n;
  throw Error(ErrorCode::unknown_preset, "unknown phantom preset '" + std::string(preset) + "' (available: " + names + ")");
}

DwiVolume simulate_dwi(const TensorField& field, const GradientScheme& scheme) {
  scheme.validate();
  DwiVolume out;
  out.dims = field.dims;
  out.scheme = scheme;
  out.mask = field.mask;
  const std::size_t n = field.dims.voxels();
  out.data.assign(n * scheme.size(), 0.0);
  parallel_for(n, [&](std::size_t v) {
    if (!field.mask[v]) return;
    for (std::size_t d = 0; d < scheme.size(); ++d) {
      out.at(v, d) = scheme.is_b0(d) ? field.s0[v]
                                     : field.s0[v] * std::exp(-scheme.bvals[d] * quadratic_form(field.tensors[v], scheme.bvecs[d]));
    }
  });
  return out;
}

double rician_sample(double signal, double sigma_abs, std::uint64_t seed, std::uint64_t counter) {
  const auto [n1, n2] = keyed_normal_pair(seed, counter);
  const double re = signal + sigma_abs * n1;
  const double im = sigma_abs * n2;
  return std::sqrt(re * re + im * im);
}

DwiVolume add_rician_noise(const DwiVolume& volume, const NoiseSpec& spec) {
  if (!(spec.sigma >= 0.0)) throw Error(ErrorCode::invalid_argument, "noise sigma must be >= 0");
  if (spec.sigma == 0.0) return volume;
  const double sigma_abs = spec.sigma * volume.mean_b0();
  DwiVolume out = volume;
  parallel_for(out.data.size(), [&](std::size_t i) { out.data[i] = rician_sample(volume.data[i], sigma_abs, spec.seed, i); });
  return out;
}

}  // namespace aid
