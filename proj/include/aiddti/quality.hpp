#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "aiddti/core_types.hpp"

namespace aid {

struct Image2D {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;  // x-fastest

  double at(std::size_t x, std::size_t y) const { return pixels[x + width * y]; }
};

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean structural similarity over all fully contained Gaussian windows.
double ssim(const Image2D& a, const Image2D& b, double data_range, const SsimParams& params = {});

/// Masked mean squared error of one channel.
double masked_mse(std::span<const double> pred, std::span<const double> gt, const Mask& mask);

/// Per metric (FA, MD, AD) masked MSE.
std::array<double, kMetricCount> mse(const MetricMaps& pred, const MetricMaps& gt, const Mask& mask);

/// 10 log10(range^2 / mse); +infinity when mse is exactly zero.
double psnr_from_mse(double mse, double data_range);
double psnr(std::span<const double> pred, std::span<const double> gt, double data_range, const Mask& mask);

struct MetricScores {
  double mse = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
  double mse_std = 0.0;
  double ssim_std = 0.0;
  double psnr_std = 0.0;
  double data_range = 0.0;
};

/// Volume-level scores per metric plus the pooled "All" column (mean over the
/// three metrics). Spreads are standard deviations over the axial slices that
/// contain masked-in voxels.
struct EvalReport {
  std::array<MetricScores, kMetricCount> metrics;
  MetricScores all;
  std::size_t voxels = 0;
  std::size_t slices = 0;
};

/// Maps are expected in normalized units. Masked-out voxels are zeroed in both
/// inputs before SSIM; data range per metric is the GT range inside the mask.
EvalReport evaluate(const MetricMaps& pred, const MetricMaps& gt, const Mask& mask, const SsimParams& params = {});

/// Infinite PSNR is written as null with `psnr_infinite: true`.
nlohmann::json to_json(const EvalReport& report);
/// Rows in the column order MSE(x1e-3) FA MD AD All | SSIM ... | PSNR ...
std::string markdown_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace aid
