#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "aiddti/core_types.hpp"
#include "aiddti/phantom.hpp"

namespace aid::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("aiddti_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

template <typename Gen>
Eigen::Matrix3d random_rotation(Gen& gen) {
  std::uniform_real_distribution<double> n(-1.0, 1.0);
  const Eigen::Matrix3d a = Eigen::Matrix3d::NullaryExpr([&] { return n(gen); });
  return a.householderQr().householderQ();
}

/// Random symmetric positive semi-definite tensor with eigenvalues in [lo, hi].
template <typename Gen>
Tensor6 random_psd(Gen& gen, double lo = 0.1e-3, double hi = 3.0e-3) {
  std::uniform_real_distribution<double> ev(lo, hi);
  const Eigen::Matrix3d q = random_rotation(gen);
  const Eigen::Vector3d l(ev(gen), ev(gen), ev(gen));
  const Eigen::Matrix3d d = q * l.asDiagonal() * q.transpose();
  return {d(0, 0), d(1, 1), d(2, 2), d(0, 1), d(0, 2), d(1, 2)};
}

template <typename Gen>
Vec3 random_unit(Gen& gen) {
  std::normal_distribution<double> n;
  Vec3 v{n(gen), n(gen), n(gen)};
  const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  for (double& c : v) c /= len;
  return v;
}

}  // namespace aid::test
