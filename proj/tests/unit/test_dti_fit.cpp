#include <doctest.h>

#include <cmath>
#include <random>

#include "aiddti/dti_fit.hpp"
#include "aiddti/phantom.hpp"
#include "aiddti/sampling.hpp"
#include "support.hpp"

using namespace aid;

namespace {

double frob(const Tensor6& t) {
  return std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2] + 2 * (t[3] * t[3] + t[4] * t[4] + t[5] * t[5]));
}

Tensor6 reconstruct(const EigenSystem& e) { return tensor_from_eigen(e.values, e.vectors); }

double diff_norm(const Tensor6& a, const Tensor6& b) {
  Tensor6 d;
  for (int i = 0; i < 6; ++i) d[i] = a[i] - b[i];
  return frob(d);
}

void check_system(const Tensor6& a, const EigenSystem& e) {
  CHECK(e.values[0] >= e.values[1]);
  CHECK(e.values[1] >= e.values[2]);
  for (int i = 0; i < 3; ++i) {
    double n = 0.0;
    for (int c = 0; c < 3; ++c) n += e.vectors[i][c] * e.vectors[i][c];
    CHECK(std::abs(n - 1.0) < 1e-9);
    for (int j = i + 1; j < 3; ++j) {
      double dot = 0.0;
      for (int c = 0; c < 3; ++c) dot += e.vectors[i][c] * e.vectors[j][c];
      CHECK(std::abs(dot) < 1e-9);
    }
  }
  CHECK(diff_norm(a, reconstruct(e)) <= 1e-12 * std::max(frob(a), 1e-300));
}

Tensor6 rotate(const Tensor6& d, const Eigen::Matrix3d& r) {
  Eigen::Matrix3d m;
  m << d[0], d[3], d[4], d[3], d[1], d[5], d[4], d[5], d[2];
  const Eigen::Matrix3d o = r * m * r.transpose();
  return {o(0, 0), o(1, 1), o(2, 2), o(0, 1), o(0, 2), o(1, 2)};
}

}  // namespace

TEST_CASE("diagonal tensor eigensystem") {
  const auto e = eigen3_sym({1e-3, 3e-3, 2e-3, 0, 0, 0});
  CHECK(e.values[0] == doctest::Approx(3e-3).epsilon(1e-14));
  CHECK(e.values[1] == doctest::Approx(2e-3).epsilon(1e-14));
  CHECK(e.values[2] == doctest::Approx(1e-3).epsilon(1e-14));
  CHECK(std::abs(std::abs(e.vectors[0][1]) - 1.0) < 1e-12);
  CHECK(std::abs(std::abs(e.vectors[1][2]) - 1.0) < 1e-12);
  CHECK(std::abs(std::abs(e.vectors[2][0]) - 1.0) < 1e-12);
}

TEST_CASE("zero tensor eigensystem") {
  const auto e = eigen3_sym({0, 0, 0, 0, 0, 0});
  CHECK(e.values == Vec3{0, 0, 0});
  check_system({0, 0, 0, 0, 0, 0}, e);
}

TEST_CASE("random symmetric tensors reconstruct to 1e-12") {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor6 a{u(gen), u(gen), u(gen), u(gen), u(gen), u(gen)};
    check_system(a, eigen3_sym(a));
  }
}

TEST_CASE("nearly repeated eigenvalues stay accurate") {
  std::mt19937_64 gen(2);
  for (double gap : {0.0, 1e-15, 1e-12, 1e-9, 1e-6}) {
    for (int trial = 0; trial < 50; ++trial) {
      const Eigen::Matrix3d q = test::random_rotation(gen);
      const Eigen::Vector3d l(1e-3, 1e-3 + gap, 0.3e-3 + (trial % 2 ? gap : 0.0));
      const Eigen::Matrix3d m = q * l.asDiagonal() * q.transpose();
      const Tensor6 a{m(0, 0), m(1, 1), m(2, 2), m(0, 1), m(0, 2), m(1, 2)};
      check_system(a, eigen3_sym(a));
    }
  }
}

TEST_CASE("Jacobi agrees with the closed form") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor6 a = test::random_psd(gen);
    const auto c = eigen3_sym(a), j = eigen3_sym_jacobi(a);
    for (int k = 0; k < 3; ++k) CHECK(c.values[k] == doctest::Approx(j.values[k]).epsilon(1e-12));
    check_system(a, j);
  }
}

TEST_CASE("metric formulas") {
  const double d = 1.1e-3;
  auto iso = metrics_from_eigenvalues({d, d, d});
  CHECK(iso.fa == 0.0);
  CHECK(iso.md == doctest::Approx(d));
  CHECK(iso.ad == d);

  auto stick = metrics_from_eigenvalues({d, 0, 0});
  CHECK(stick.fa == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(stick.md == doctest::Approx(d / 3));
  CHECK(stick.ad == d);

  // FA for (1.7, 0.3, 0.3): md = 0.76667, deviations (0.93333, -0.46667, -0.46667), FA = 0.79902
  const double md = (1.7 + 0.3 + 0.3) / 3.0;
  const double num = std::pow(1.7 - md, 2) + 2 * std::pow(0.3 - md, 2);
  const double den = 1.7 * 1.7 + 2 * 0.3 * 0.3;
  const double fa_ref = std::sqrt(1.5) * std::sqrt(num) / std::sqrt(den);
  auto wm = metrics_from_eigenvalues({1.7e-3, 0.3e-3, 0.3e-3});
  CHECK(wm.fa == doctest::Approx(fa_ref).epsilon(1e-14));
  CHECK(wm.fa == doctest::Approx(0.79902).epsilon(1e-5));
  CHECK(wm.md == doctest::Approx(0.76667e-3).epsilon(1e-5));
  CHECK(wm.ad == 1.7e-3);

  CHECK(metrics_from_eigenvalues({0, 0, 0}).fa == 0.0);
  const auto neg = metrics_from_eigenvalues({1e-3, -0.9e-3, -0.9e-3});
  CHECK(neg.fa <= 1.0);
  CHECK(neg.fa >= 0.0);
}

TEST_CASE("noiseless fit recovers tensors exactly") {
  const auto f = make_phantom({10, 10, 10}, "mixed", 3);
  const auto scheme = uniform_scheme(30, 1000.0, 1, 2);
  const auto fit = fit_tensor_ols(simulate_dwi(f, scheme));
  for (std::size_t v = 0; v < f.dims.voxels(); ++v) {
    if (!f.mask[v]) continue;
    REQUIRE(fit.field.mask[v]);
    for (int c = 0; c < 6; ++c) CHECK(std::abs(fit.field.tensors[v][c] - f.tensors[v][c]) < 1e-9);
    CHECK(fit.field.s0[v] == doctest::Approx(f.s0[v]).epsilon(1e-9));
  }
  CHECK(fit.report.flagged_voxels == 0);
  CHECK(fit.report.residual_rms_max < 1e-9);
}

TEST_CASE("constant signal gives a zero tensor") {
  DwiVolume v;
  v.dims = {1, 1, 1};
  v.scheme = uniform_scheme(6, 1000.0, 1);
  v.data.assign(7, 3.0);
  v.mask = {1};
  const auto fit = fit_tensor_ols(v);
  for (double c : fit.field.tensors[0]) CHECK(std::abs(c) < 1e-15);
  CHECK(fit.field.s0[0] == doctest::Approx(3.0));
}

TEST_CASE("fiber direction survives six measurements") {
  const auto f = make_phantom({12, 12, 12}, "fiber-x", 1);
  const auto dense = uniform_scheme(90, 1000.0, 1);
  const auto sel = select_uniform(dense, 6, 10, 1);
  const auto sparse = apply_subsampling(simulate_dwi(f, dense), sel);
  const auto fit = fit_tensor_ols(sparse);
  std::size_t checked = 0;
  for (std::size_t z = 0; z < 12; ++z)
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 12; ++x) {
        if (!fiber_x_core(f.dims, x, y, z)) continue;
        const auto e = eigen3_sym(fit.field.tensors[f.dims.index(x, y, z)]);
        const double cosang = std::min(1.0, std::abs(e.vectors[0][0]));
        CHECK(std::acos(cosang) < 1e-6);
        ++checked;
      }
  CHECK(checked > 0);
}

TEST_CASE("round trip on random PSD fields") {
  std::mt19937_64 gen(4);
  TensorField f;
  f.dims = {4, 4, 4};
  for (std::size_t v = 0; v < 64; ++v) {
    f.tensors.push_back(test::random_psd(gen));
    f.s0.push_back(0.5 + 0.01 * static_cast<double>(v));
    f.mask.push_back(1);
  }
  const auto dense = uniform_scheme(90, 1000.0, 1);
  const auto scheme_sparse = apply_subsampling(simulate_dwi(f, dense), select_uniform(dense, 6, 5, 3));
  const auto truth = derive_metrics(f);
  const auto got = derive_metrics(fit_tensor_ols(scheme_sparse).field);
  for (std::size_t v = 0; v < 64; ++v) {
    CHECK(std::abs(got.fa[v] - truth.fa[v]) < 1e-8);
    CHECK(std::abs(got.md[v] - truth.md[v]) < 1e-8);
    CHECK(std::abs(got.ad[v] - truth.ad[v]) < 1e-8);
  }
}

TEST_CASE("FA and MD are rotation invariant, MD and AD scale with the tensor") {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor6 d = test::random_psd(gen);
    const auto base = metrics_from_eigenvalues(eigen3_sym(d).values);
    const Eigen::Matrix3d q = test::random_rotation(gen);
    const auto rot = metrics_from_eigenvalues(eigen3_sym(rotate(d, q)).values);
    CHECK(std::abs(rot.fa - base.fa) < 1e-10);
    CHECK(std::abs(rot.md - base.md) < 1e-10);
    const double c = 0.5 + trial * 0.03;
    Tensor6 scaled = d;
    for (double& x : scaled) x *= c;
    const auto sc = metrics_from_eigenvalues(eigen3_sym(scaled).values);
    CHECK(std::abs(sc.fa - base.fa) < 1e-10);
    CHECK(sc.md == doctest::Approx(c * base.md).epsilon(1e-10));
    CHECK(sc.ad == doctest::Approx(c * base.ad).epsilon(1e-10));
  }
}

TEST_CASE("FA stays in [0, 1] for noisy fits") {
  const auto f = make_phantom({10, 10, 10}, "mixed", 8);
  const auto scheme = uniform_scheme(6, 1000.0, 1, 3);
  const auto noisy = add_rician_noise(simulate_dwi(f, scheme), {0.1, 4});
  const auto maps = derive_metrics(fit_tensor_ols(noisy).field);
  for (std::size_t v = 0; v < maps.fa.size(); ++v) {
    if (!maps.mask[v]) continue;
    CHECK(maps.fa[v] >= 0.0);
    CHECK(maps.fa[v] <= 1.0);
  }
}

TEST_CASE("rank-deficient design names the condition number") {
  DwiVolume v;
  v.dims = {1, 1, 1};
  v.scheme = {{0.0, 1000, 1000, 1000, 1000, 1000, 1000},
              {Vec3{0, 0, 0}, Vec3{1, 0, 0}, Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}, Vec3{0, 0, 1}}};
  v.data.assign(7, 1.0);
  v.mask = {1};
  try {
    (void)fit_tensor_ols(v);
    FAIL("expected rank deficiency");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::rank_deficient);
    CHECK(std::string(e.what()).find("condition") != std::string::npos);
  }
}

TEST_CASE("missing b0 is rejected") {
  DwiVolume v;
  v.dims = {1, 1, 1};
  v.scheme = uniform_scheme(7, 1000.0, 0);
  v.data.assign(7, 1.0);
  v.mask = {1};
  CHECK_THROWS_AS((void)fit_tensor_ols(v), Error);
}

TEST_CASE("non-positive b0 voxels are flagged and masked out") {
  DwiVolume v;
  v.dims = {2, 1, 1};
  v.scheme = uniform_scheme(6, 1000.0, 1);
  v.data.assign(14, 0.5);
  v.mask = {1, 1};
  v.at(1, 0) = 0.0;
  const auto fit = fit_tensor_ols(v);
  CHECK(fit.report.flagged_voxels == 1);
  CHECK(fit.field.mask[0] == 1);
  CHECK(fit.field.mask[1] == 0);
}

TEST_CASE("zero diffusion-weighted signal is clamped, not fatal") {
  DwiVolume v;
  v.dims = {1, 1, 1};
  v.scheme = uniform_scheme(6, 1000.0, 1);
  v.data.assign(7, 0.5);
  v.data[3] = 0.0;
  v.mask = {1};
  const auto fit = fit_tensor_ols(v);
  CHECK(fit.report.clamped_voxels == 1);
  for (double c : fit.field.tensors[0]) CHECK(std::isfinite(c));
}
