#include "aiddti/quality.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace aid {

namespace {

std::vector<double> gaussian_window(const SsimParams& p) {
  std::vector<double> w(p.window * p.window);
  const double c = (static_cast<double>(p.window) - 1.0) / 2.0;
  double sum = 0.0;
  for (std::size_t y = 0; y < p.window; ++y)
    for (std::size_t x = 0; x < p.window; ++x) {
      const double dx = static_cast<double>(x) - c, dy = static_cast<double>(y) - c;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * p.sigma * p.sigma));
      w[x + p.window * y] = v;
      sum += v;
    }
  for (double& v : w) v /= sum;
  return w;
}

struct Spread {
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  void add(double v) {
    if (!std::isfinite(v)) return;
    sum += v;
    sum2 += v * v;
    ++n;
  }
  double std() const {
    if (n < 2) return 0.0;
    const double mean = sum / static_cast<double>(n);
    return std::sqrt(std::max(0.0, sum2 / static_cast<double>(n) - mean * mean));
  }
};

nlohmann::json scores_json(const MetricScores& s) {
  nlohmann::json j = {{"mse", s.mse},           {"mse_std", s.mse_std},   {"ssim", s.ssim},
                      {"ssim_std", s.ssim_std}, {"psnr_std", s.psnr_std}, {"data_range", s.data_range}};
  if (std::isinf(s.psnr)) {
    j["psnr"] = nullptr;
    j["psnr_infinite"] = true;
  } else {
    j["psnr"] = s.psnr;
    j["psnr_infinite"] = false;
  }
  return j;
}

std::string fixed(double v, int digits) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

double ssim(const Image2D& a, const Image2D& b, double data_range, const SsimParams& params) {
  if (a.width != b.width || a.height != b.height)
    throw Error(ErrorCode::dimension_mismatch, "SSIM inputs differ in shape");
  if (a.width < params.window || a.height < params.window) {
    throw Error(ErrorCode::invalid_argument, "slice " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                                                 " is smaller than the " + std::to_string(params.window) +
                                                 "-pixel SSIM window");
  }
  const auto w = gaussian_window(params);
  const double c1 = (params.k1 * data_range) * (params.k1 * data_range);
  const double c2 = (params.k2 * data_range) * (params.k2 * data_range);
  const std::size_t nx = a.width - params.window + 1, ny = a.height - params.window + 1;
  double total = 0.0;
  for (std::size_t y0 = 0; y0 < ny; ++y0) {
    for (std::size_t x0 = 0; x0 < nx; ++x0) {
      double mu_a = 0.0, mu_b = 0.0;
      for (std::size_t y = 0; y < params.window; ++y)
        for (std::size_t x = 0; x < params.window; ++x) {
          const double wt = w[x + params.window * y];
          mu_a += wt * a.at(x0 + x, y0 + y);
          mu_b += wt * b.at(x0 + x, y0 + y);
        }
      double var_a = 0.0, var_b = 0.0, cov = 0.0;
      for (std::size_t y = 0; y < params.window; ++y)
        for (std::size_t x = 0; x < params.window; ++x) {
          const double wt = w[x + params.window * y];
          const double da = a.at(x0 + x, y0 + y) - mu_a, db = b.at(x0 + x, y0 + y) - mu_b;
          var_a += wt * da * da;
          var_b += wt * db * db;
          cov += wt * da * db;
        }
      total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    }
  }
  return total / static_cast<double>(nx * ny);
}

double masked_mse(std::span<const double> pred, std::span<const double> gt, const Mask& mask) {
  if (pred.size() != gt.size() || gt.size() != mask.size())
    throw Error(ErrorCode::dimension_mismatch, "MSE inputs differ in size");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!mask[i]) continue;
    const double d = pred[i] - gt[i];
    sum += d * d;
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::invalid_argument, "evaluation mask is empty");
  return sum / static_cast<double>(n);
}

std::array<double, kMetricCount> mse(const MetricMaps& pred, const MetricMaps& gt, const Mask& mask) {
  if (!(pred.dims == gt.dims)) throw Error(ErrorCode::dimension_mismatch, "prediction " + to_string(pred.dims) + " vs ground truth " + to_string(gt.dims));
  std::array<double, kMetricCount> out{};
  for (std::size_t m = 0; m < kMetricCount; ++m) out[m] = masked_mse(pred.channel(m), gt.channel(m), mask);
  return out;
}

double psnr_from_mse(double mse_value, double data_range) {
  if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse_value);
}

double psnr(std::span<const double> pred, std::span<const double> gt, double data_range, const Mask& mask) {
  return psnr_from_mse(masked_mse(pred, gt, mask), data_range);
}

EvalReport evaluate(const MetricMaps& pred, const MetricMaps& gt, const Mask& mask, const SsimParams& params) {
  if (!(pred.dims == gt.dims) || mask.size() != gt.dims.voxels())
    throw Error(ErrorCode::dimension_mismatch, "prediction " + to_string(pred.dims) + " vs ground truth " + to_string(gt.dims));
  const Dims& dims = gt.dims;
  EvalReport report;
  report.voxels = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
  if (report.voxels == 0) throw Error(ErrorCode::invalid_argument, "evaluation mask is empty");

  std::vector<std::size_t> slices;
  for (std::size_t z = 0; z < dims.s; ++z) {
    bool any = false;
    for (std::size_t i = 0; i < dims.w * dims.h && !any; ++i) any = mask[i + z * dims.w * dims.h] != 0;
    if (any) slices.push_back(z);
  }
  report.slices = slices.size();

  std::array<Spread, kMetricCount> mse_spread, ssim_spread, psnr_spread;
  Spread all_mse, all_ssim, all_psnr;
  std::vector<std::array<double, 3>> slice_means(slices.size(), {0.0, 0.0, 0.0});

  for (std::size_t m = 0; m < kMetricCount; ++m) {
    const auto& p = pred.channel(m);
    const auto& g = gt.channel(m);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t v = 0; v < g.size(); ++v)
      if (mask[v]) {
        lo = std::min(lo, g[v]);
        hi = std::max(hi, g[v]);
      }
    const double range = hi > lo ? hi - lo : 1.0;
    MetricScores& s = report.metrics[m];
    s.data_range = range;
    s.mse = masked_mse(p, g, mask);
    s.psnr = psnr_from_mse(s.mse, range);

    double ssim_sum = 0.0;
    for (std::size_t si = 0; si < slices.size(); ++si) {
      const std::size_t z = slices[si];
      Image2D a{dims.w, dims.h, std::vector<double>(dims.w * dims.h, 0.0)};
      Image2D b = a;
      double err = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < dims.w * dims.h; ++i) {
        const std::size_t v = i + z * dims.w * dims.h;
        if (!mask[v]) continue;
        a.pixels[i] = p[v];
        b.pixels[i] = g[v];
        err += (p[v] - g[v]) * (p[v] - g[v]);
        ++count;
      }
      const double slice_mse = err / static_cast<double>(count);
      const double slice_ssim = ssim(a, b, range, params);
      const double slice_psnr = psnr_from_mse(slice_mse, range);
      ssim_sum += slice_ssim;
      mse_spread[m].add(slice_mse);
      ssim_spread[m].add(slice_ssim);
      psnr_spread[m].add(slice_psnr);
      slice_means[si][0] += slice_mse / 3.0;
      slice_means[si][1] += slice_ssim / 3.0;
      slice_means[si][2] += slice_psnr / 3.0;
    }
    s.ssim = ssim_sum / static_cast<double>(slices.size());
    s.mse_std = mse_spread[m].std();
    s.ssim_std = ssim_spread[m].std();
    s.psnr_std = psnr_spread[m].std();
  }
  for (const auto& sm : slice_means) {
    all_mse.add(sm[0]);
    all_ssim.add(sm[1]);
    all_psnr.add(sm[2]);
  }
  auto& all = report.all;
  all.mse = (report.metrics[0].mse + report.metrics[1].mse + report.metrics[2].mse) / 3.0;
  all.ssim = (report.metrics[0].ssim + report.metrics[1].ssim + report.metrics[2].ssim) / 3.0;
  all.psnr = (report.metrics[0].psnr + report.metrics[1].psnr + report.metrics[2].psnr) / 3.0;
  all.mse_std = all_mse.std();
  all.ssim_std = all_ssim.std();
  all.psnr_std = all_psnr.std();
  return report;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j = {{"voxels", report.voxels}, {"slices", report.slices}};
  for (std::size_t m = 0; m < kMetricCount; ++m) j[std::string(kMetricNames[m])] = scores_json(report.metrics[m]);
  j["All"] = scores_json(report.all);
  return j;
}

std::string markdown_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ostringstream os;
  os << "| Method | MSE x1e-3 FA | MD | AD | All | SSIM FA | MD | AD | All | PSNR FA | MD | AD | All |\n";
  os << "|---|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& [name, r] : rows) {
    os << "| " << name;
    for (std::size_t m = 0; m < kMetricCount; ++m) os << " | " << fixed(r.metrics[m].mse * 1e3, 3);
    os << " | " << fixed(r.all.mse * 1e3, 3) << " ± " << fixed(r.all.mse_std * 1e3, 3);
    for (std::size_t m = 0; m < kMetricCount; ++m) os << " | " << fixed(r.metrics[m].ssim, 3);
    os << " | " << fixed(r.all.ssim, 3) << " ± " << fixed(r.all.ssim_std, 3);
    for (std::size_t m = 0; m < kMetricCount; ++m) os << " | " << fixed(r.metrics[m].psnr, 3);
    os << " | " << fixed(r.all.psnr, 3) << " ± " << fixed(r.all.psnr_std, 3) << " |\n";
  }
  return os.str();
}

}  // namespace aid
