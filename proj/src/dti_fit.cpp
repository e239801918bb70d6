#include "aiddti/dti_fit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "aiddti/parallel.hpp"

namespace aid {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 to_mat(const Tensor6& t) {
  return {{{t[0], t[3], t[4]}, {t[3], t[1], t[5]}, {t[4], t[5], t[2]}}};
}

double frobenius(const Mat3& a) {
  double s = 0.0;
  for (const auto& row : a)
    for (double v : row) s += v * v;
  return std::sqrt(s);
}

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

void sort_descending(EigenSystem& e) {
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return e.values[i] > e.values[j]; });
  EigenSystem sorted;
  for (std::size_t k = 0; k < 3; ++k) {
    sorted.values[k] = e.values[order[k]];
    sorted.vectors[k] = e.vectors[order[k]];
  }
  e = sorted;
}

// Unit null vector of (A - lambda I) from the largest cross product of its rows.
bool null_vector(const Mat3& a, double lambda, Vec3& out) {
  const Vec3 r0{a[0][0] - lambda, a[0][1], a[0][2]};
  const Vec3 r1{a[1][0], a[1][1] - lambda, a[1][2]};
  const Vec3 r2{a[2][0], a[2][1], a[2][2] - lambda};
  const std::array<Vec3, 3> candidates = {cross(r0, r1), cross(r0, r2), cross(r1, r2)};
  double best = 0.0;
  for (const auto& c : candidates) {
    const double n = dot(c, c);
    if (n > best) {
      best = n;
      out = c;
    }
  }
  if (!(best > 0.0)) return false;
  const double inv = 1.0 / std::sqrt(best);
  for (double& v : out) v *= inv;
  return true;
}

bool acceptable(const Mat3& a, const EigenSystem& e) {
  const double scale = std::max(frobenius(a), std::numeric_limits<double>::min());
  for (std::size_t i = 0; i < 3; ++i) {
    if (std::abs(dot(e.vectors[i], e.vectors[i]) - 1.0) > 1e-13) return false;
    for (std::size_t j = i + 1; j < 3; ++j)
      if (std::abs(dot(e.vectors[i], e.vectors[j])) > 1e-13) return false;
  }
  double err = 0.0;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      double recon = 0.0;
      for (std::size_t k = 0; k < 3; ++k) recon += e.values[k] * e.vectors[k][r] * e.vectors[k][c];
      err += (a[r][c] - recon) * (a[r][c] - recon);
    }
  return std::sqrt(err) <= 1e-13 * scale;
}

}  // namespace

EigenSystem eigen3_sym_jacobi(const Tensor6& t) {
  Mat3 a = to_mat(t);
  Mat3 v{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  const double scale = frobenius(a);
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if (std::sqrt(off) <= 1e-18 * scale) break;
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double tn = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(tn * tn + 1.0);
        const double s = tn * c;
        // A <- J^T A J with J the (p, q) rotation.
        for (std::size_t k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        a[p][q] = a[q][p] = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  EigenSystem e;
  for (std::size_t k = 0; k < 3; ++k) {
    e.values[k] = a[k][k];
    e.vectors[k] = {v[0][k], v[1][k], v[2][k]};
  }
  sort_descending(e);
  return e;
}

EigenSystem eigen3_sym(const Tensor6& t) {
  const Mat3 a = to_mat(t);
  const double p1 = t[3] * t[3] + t[4] * t[4] + t[5] * t[5];
  const double q = (t[0] + t[1] + t[2]) / 3.0;
  const double p2 = (t[0] - q) * (t[0] - q) + (t[1] - q) * (t[1] - q) + (t[2] - q) * (t[2] - q) + 2.0 * p1;
  if (p2 == 0.0) {
    EigenSystem e;
    e.values = {q, q, q};
    e.vectors = {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
    return e;
  }
  const double p = std::sqrt(p2 / 6.0);
  Mat3 b = a;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) b[i][j] /= p;
    b[i][i] -= q / p;
  }
  const double det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) -
                     b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0]) +
                     b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
  const double r = std::clamp(det / 2.0, -1.0, 1.0);
  // r near +-1 means a nearly repeated pair; acos loses accuracy there.
  if (1.0 - std::abs(r) < 1e-6) return eigen3_sym_jacobi(t);

  const double phi = std::acos(r) / 3.0;
  EigenSystem e;
  e.values[0] = q + 2.0 * p * std::cos(phi);
  e.values[2] = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  e.values[1] = 3.0 * q - e.values[0] - e.values[2];

  if (!null_vector(a, e.values[0], e.vectors[0]) || !null_vector(a, e.values[2], e.vectors[2]))
    return eigen3_sym_jacobi(t);
  e.vectors[1] = cross(e.vectors[2], e.vectors[0]);
  if (!acceptable(a, e)) return eigen3_sym_jacobi(t);
  return e;
}

FitResult fit_tensor_ols(const DwiVolume& volume, const FitOptions& options) {
  volume.scheme.validate(/*require_b0=*/true);
  const GradientScheme& scheme = volume.scheme;
  const std::size_t m = scheme.size();
  const auto b0 = scheme.b0_indices();

  Eigen::MatrixXd design(m, 7);
  for (std::size_t i = 0; i < m; ++i) {
    const double b = scheme.bvals[i];
    const auto& g = scheme.bvecs[i];
    design.row(static_cast<Eigen::Index>(i)) << 1.0, -b * g[0] * g[0], -b * g[1] * g[1], -b * g[2] * g[2],
        -2.0 * b * g[0] * g[1], -2.0 * b * g[0] * g[2], -2.0 * b * g[1] * g[2];
    if (scheme.is_b0(i)) design.row(static_cast<Eigen::Index>(i)).tail(6).setZero();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smin = m >= 7 ? sv(sv.size() - 1) : 0.0;
  const double condition = smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
  if (!(condition <= options.max_condition)) {
    std::ostringstream os;
    os << "tensor design matrix is rank deficient (condition number " << condition << ", " << m
       << " measurements, " << scheme.dw_indices().size() << " diffusion-weighted)";
    throw Error(ErrorCode::rank_deficient, os.str());
  }
  const Eigen::MatrixXd pinv = svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();

  const Dims& dims = volume.dims;
  const std::size_t n = dims.voxels();
  FitResult result;
  TensorField& field = result.field;
  field.dims = dims;
  field.tensors.assign(n, Tensor6{});
  field.s0.assign(n, 0.0);
  field.mask.assign(n, 0);

  enum : std::uint8_t { skipped, fitted, clamped, flagged };
  std::vector<std::uint8_t> status(n, skipped);
  std::vector<double> residual(n, 0.0);

  parallel_for(n, [&](std::size_t v) {
    if (options.use_mask && !volume.mask[v]) return;
    double s0 = 0.0;
    for (auto d : b0) s0 += volume.at(v, d);
    s0 /= static_cast<double>(b0.size());
    bool finite = std::isfinite(s0) && s0 > 0.0;
    for (std::size_t d = 0; finite && d < m; ++d) finite = std::isfinite(volume.at(v, d));
    if (!finite) {
      // Without a mask, background voxels with zero signal are simply not fitted.
      status[v] = options.use_mask ? flagged : skipped;
      return;
    }
    const double floor = options.clamp_fraction * s0;
    Eigen::VectorXd y(m);
    bool was_clamped = false;
    for (std::size_t d = 0; d < m; ++d) {
      double s = volume.at(v, d);
      if (s < floor) {
        s = floor;
        was_clamped = true;
      }
      y(static_cast<Eigen::Index>(d)) = std::log(s);
    }
    const Eigen::VectorXd beta = pinv * y;
    residual[v] = std::sqrt((design * beta - y).squaredNorm() / static_cast<double>(m));
    field.s0[v] = std::exp(beta(0));
    for (std::size_t c = 0; c < 6; ++c) field.tensors[v][c] = beta(static_cast<Eigen::Index>(c + 1));
    field.mask[v] = 1;
    status[v] = was_clamped ? clamped : fitted;
  });

  FitReport& report = result.report;
  report.condition_number = condition;
  double rms_sum = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    if (status[v] == flagged) ++report.flagged_voxels;
    if (status[v] == fitted || status[v] == clamped) {
      ++report.fitted_voxels;
      if (status[v] == clamped) ++report.clamped_voxels;
      rms_sum += residual[v];
      report.residual_rms_max = std::max(report.residual_rms_max, residual[v]);
    }
  }
  if (report.fitted_voxels) report.residual_rms_mean = rms_sum / static_cast<double>(report.fitted_voxels);
  return result;
}

VoxelMetrics metrics_from_eigenvalues(const Vec3& l) {
  VoxelMetrics out;
  out.md = (l[0] + l[1] + l[2]) / 3.0;
  out.ad = l[0];
  const double norm2 = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
  if (norm2 > 0.0) {
    const double dev2 = (l[0] - out.md) * (l[0] - out.md) + (l[1] - out.md) * (l[1] - out.md) +
                        (l[2] - out.md) * (l[2] - out.md);
    const double fa = std::sqrt(1.5) * std::sqrt(dev2) / std::sqrt(norm2);
    out.fa = std::isfinite(fa) ? std::clamp(fa, 0.0, 1.0) : 0.0;
  }
  return out;
}

MetricMaps derive_metrics(const TensorField& field) {
  MetricMaps maps = MetricMaps::zeros(field.dims, field.mask);
  parallel_for(field.dims.voxels(), [&](std::size_t v) {
    if (!field.mask[v]) return;
    const auto m = metrics_from_eigenvalues(eigen3_sym(field.tensors[v]).values);
    maps.fa[v] = m.fa;
    maps.md[v] = m.md;
    maps.ad[v] = m.ad;
  });
  return maps;
}

}  // namespace aid
