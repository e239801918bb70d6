#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "aiddti/core_types.hpp"
#include "aiddti/quality.hpp"

using namespace aid;

namespace {

Image2D random_image(std::mt19937_64& gen, std::size_t w, std::size_t h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image2D img{w, h, std::vector<double>(w * h)};
  for (double& p : img.pixels) p = u(gen);
  return img;
}

Image2D constant_image(std::size_t w, std::size_t h, double v) { return {w, h, std::vector<double>(w * h, v)}; }

MetricMaps random_maps(std::mt19937_64& gen, const Dims& dims) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MetricMaps m = MetricMaps::zeros(dims, Mask(dims.voxels(), 1));
  for (std::size_t c = 0; c < kMetricCount; ++c)
    for (double& v : m.channel(c)) v = u(gen);
  return m;
}

MetricMaps perturbed(const MetricMaps& base, std::mt19937_64& gen, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  MetricMaps m = base;
  for (std::size_t c = 0; c < kMetricCount; ++c)
    for (double& v : m.channel(c)) v += n(gen);
  return m;
}

}  // namespace

TEST_CASE("SSIM of an image with itself is one") {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Image2D a = random_image(gen, 16 + trial, 12 + trial % 5);
    CHECK(std::abs(ssim(a, a, 1.0) - 1.0) <= 1e-12);
  }
}

TEST_CASE("SSIM of two constant images has a closed form") {
  const double value = ssim(constant_image(16, 16, 0.3), constant_image(16, 16, 0.5), 1.0);
  CHECK(std::abs(value - (2 * 0.15 + 1e-4) / (0.34 + 1e-4)) <= 1e-12);
  CHECK(std::abs(value - 0.88239) <= 1e-5);
}

TEST_CASE("SSIM is symmetric and drops for anti-correlated images") {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Image2D a = random_image(gen, 20, 18), b = random_image(gen, 20, 18);
    CHECK(std::abs(ssim(a, b, 1.0) - ssim(b, a, 1.0)) <= 1e-12);
    Image2D neg = a;
    for (double& p : neg.pixels) p = 1.0 - p;
    CHECK(ssim(a, neg, 1.0) < 0.0);
  }
}

TEST_CASE("SSIM rejects mismatched or undersized slices") {
  std::mt19937_64 gen(3);
  CHECK_THROWS_AS(ssim(random_image(gen, 12, 12), random_image(gen, 12, 13), 1.0), Error);
  try {
    (void)ssim(random_image(gen, 10, 12), random_image(gen, 10, 12), 1.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_argument);
  }
}

TEST_CASE("PSNR identities") {
  CHECK(psnr_from_mse(1e-3, 1.0) == 30.0);
  CHECK(psnr_from_mse(4.0, 2.0) == 0.0);
  CHECK(psnr_from_mse(0.0, 1.0) == std::numeric_limits<double>::infinity());
  const std::vector<double> a{0.1, 0.2, 0.3}, b{0.1, 0.2, 0.3};
  CHECK(std::isinf(psnr(a, b, 1.0, Mask{1, 1, 1})));
}

TEST_CASE("masked MSE of a constant offset") {
  std::vector<double> gt(50), pred(50);
  for (std::size_t i = 0; i < 50; ++i) {
    gt[i] = 0.02 * i;
    pred[i] = gt[i] + 0.01;
  }
  Mask mask(50, 1);
  CHECK(masked_mse(pred, gt, mask) == doctest::Approx(1e-4).epsilon(1e-12));
  mask.assign(50, 0);
  CHECK_THROWS_AS(masked_mse(pred, gt, mask), Error);
}

TEST_CASE("identical maps give perfect scores") {
  std::mt19937_64 gen(4);
  const MetricMaps gt = random_maps(gen, {14, 13, 3});
  const EvalReport r = evaluate(gt, gt, gt.mask);
  for (const auto& m : r.metrics) {
    CHECK(m.mse == 0.0);
    CHECK(std::abs(m.ssim - 1.0) <= 1e-12);
    CHECK(std::isinf(m.psnr));
  }
  CHECK(r.slices == 3);
  const auto j = to_json(r);
  CHECK(j.at("FA").at("psnr").is_null());
  CHECK(j.at("FA").at("psnr_infinite") == true);
}

TEST_CASE("the pooled column is the mean of the three metrics") {
  std::mt19937_64 gen(5);
  const MetricMaps gt = random_maps(gen, {16, 16, 4});
  const EvalReport r = evaluate(perturbed(gt, gen, 0.05), gt, gt.mask);
  CHECK(std::abs(r.all.mse - (r.metrics[0].mse + r.metrics[1].mse + r.metrics[2].mse) / 3) <= 1e-12);
  CHECK(std::abs(r.all.ssim - (r.metrics[0].ssim + r.metrics[1].ssim + r.metrics[2].ssim) / 3) <= 1e-12);
  CHECK(std::abs(r.all.psnr - (r.metrics[0].psnr + r.metrics[1].psnr + r.metrics[2].psnr) / 3) <= 1e-12);
  for (const auto& m : r.metrics) {
    CHECK(m.psnr == doctest::Approx(10 * std::log10(m.data_range * m.data_range / m.mse)));
    CHECK(m.ssim >= -1.0);
    CHECK(m.ssim <= 1.0);
  }
}

TEST_CASE("masked-out voxels do not affect any score") {
  std::mt19937_64 gen(6);
  MetricMaps gt = random_maps(gen, {16, 16, 2});
  for (std::size_t v = 0; v < gt.mask.size(); ++v) gt.mask[v] = (v % 16) < 12;
  const MetricMaps pred = perturbed(gt, gen, 0.02);
  MetricMaps other = pred;
  for (std::size_t c = 0; c < kMetricCount; ++c)
    for (std::size_t v = 0; v < gt.mask.size(); ++v)
      if (!gt.mask[v]) other.channel(c)[v] = 100.0;
  const EvalReport a = evaluate(pred, gt, gt.mask), b = evaluate(other, gt, gt.mask);
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    CHECK(a.metrics[m].mse == b.metrics[m].mse);
    CHECK(a.metrics[m].ssim == b.metrics[m].ssim);
  }
  CHECK(a.voxels == 16 * 16 * 2 * 12 / 16);
}

TEST_CASE("PSNR falls as the prediction gets noisier") {
  std::mt19937_64 gen(7);
  const MetricMaps gt = random_maps(gen, {16, 16, 3});
  double previous = std::numeric_limits<double>::infinity();
  for (double sigma : {0.01, 0.02, 0.05}) {
    std::mt19937_64 noise(8);
    const EvalReport r = evaluate(perturbed(gt, noise, sigma), gt, gt.mask);
    CHECK(r.all.psnr < previous);
    previous = r.all.psnr;
  }
}

TEST_CASE("evaluation validates its inputs") {
  std::mt19937_64 gen(9);
  const MetricMaps a = random_maps(gen, {12, 12, 2});
  const MetricMaps b = random_maps(gen, {12, 12, 3});
  try {
    (void)evaluate(a, b, b.mask);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::dimension_mismatch);
  }
  CHECK_THROWS_AS(evaluate(a, a, Mask(a.mask.size(), 0)), Error);
}

TEST_CASE("the markdown table has one row per entry") {
  std::mt19937_64 gen(10);
  const MetricMaps gt = random_maps(gen, {12, 12, 2});
  const EvalReport r = evaluate(gt, gt, gt.mask);
  const std::string table = markdown_table({{"one", r}, {"two", r}});
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);
  CHECK(table.find("| one |") != std::string::npos);
}
