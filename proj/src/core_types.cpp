#include "aiddti/core_types.hpp"

#include <cmath>
#include <sstream>

namespace aid {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::size_mismatch: return "size_mismatch";
    case ErrorCode::parse: return "parse";
    case ErrorCode::io: return "io";
    case ErrorCode::rank_deficient: return "rank_deficient";
    case ErrorCode::degenerate_patch: return "degenerate_patch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::unknown_preset: return "unknown_preset";
    case ErrorCode::out_of_range: return "out_of_range";
  }
  return "unknown";
}

std::string to_string(const Dims& d) {
  std::ostringstream os;
  os << d.w << "x" << d.h << "x" << d.s;
  return os.str();
}

std::vector<std::size_t> GradientScheme::b0_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bvals.size(); ++i)
    if (is_b0(i)) out.push_back(i);
  return out;
}

std::vector<std::size_t> GradientScheme::dw_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bvals.size(); ++i)
    if (!is_b0(i)) out.push_back(i);
  return out;
}

void GradientScheme::validate(bool require_b0) const {
  if (bvals.size() != bvecs.size()) {
    throw Error(ErrorCode::size_mismatch, "gradient scheme has " + std::to_string(bvals.size()) + " b-values but " +
                                              std::to_string(bvecs.size()) + " directions");
  }
  for (std::size_t i = 0; i < bvals.size(); ++i) {
    if (!std::isfinite(bvals[i]) || bvals[i] < 0.0)
      throw Error(ErrorCode::invalid_argument, "b-value " + std::to_string(i) + " is negative or non-finite");
    if (is_b0(i)) continue;
    const auto& g = bvecs[i];
    const double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    if (!(std::abs(norm - 1.0) <= 1e-6)) {
      std::ostringstream os;
      os << "direction " << i << " has norm " << norm << ", expected unit length";
      throw Error(ErrorCode::invalid_argument, os.str());
    }
  }
  if (require_b0 && b0_indices().empty())
    throw Error(ErrorCode::invalid_argument, "gradient scheme has no b=0 measurement");
}

void DwiVolume::validate() const {
  scheme.validate();
  const std::size_t expected = dims.voxels() * scheme.size();
  if (data.size() != expected) {
    throw Error(ErrorCode::size_mismatch, "volume " + to_string(dims) + "x" + std::to_string(scheme.size()) +
                                              " expects " + std::to_string(expected) + " values, holds " +
                                              std::to_string(data.size()));
  }
  if (mask.size() != dims.voxels()) {
    throw Error(ErrorCode::size_mismatch, "mask holds " + std::to_string(mask.size()) + " voxels, volume " +
                                              to_string(dims) + " has " + std::to_string(dims.voxels()));
  }
  for (std::size_t v = 0; v < dims.voxels(); ++v) {
    if (!mask[v]) continue;
    for (std::size_t d = 0; d < scheme.size(); ++d) {
      const double s = at(v, d);
      if (!std::isfinite(s) || s < 0.0) {
        throw Error(ErrorCode::non_finite, "masked-in voxel " + std::to_string(v) + " measurement " +
                                               std::to_string(d) + " is negative or non-finite");
      }
    }
  }
}

double DwiVolume::mean_b0() const {
  double sum = 0.0;
  std::size_t count = 0;
  const auto b0 = scheme.b0_indices();
  for (std::size_t v = 0; v < dims.voxels(); ++v) {
    if (!mask[v]) continue;
    for (auto d : b0) {
      sum += at(v, d);
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

MetricMaps MetricMaps::zeros(const Dims& dims, Mask mask) {
  MetricMaps m;
  m.dims = dims;
  m.fa.assign(dims.voxels(), 0.0);
  m.md.assign(dims.voxels(), 0.0);
  m.ad.assign(dims.voxels(), 0.0);
  m.mask = std::move(mask);
  return m;
}

std::vector<double>& MetricMaps::channel(Metric m) {
  switch (m) {
    case Metric::fa: return fa;
    case Metric::md: return md;
    case Metric::ad: return ad;
  }
  throw Error(ErrorCode::out_of_range, "metric channel out of range");
}

const std::vector<double>& MetricMaps::channel(Metric m) const {
  return const_cast<MetricMaps*>(this)->channel(m);
}

void MetricMaps::validate() const {
  const std::size_t n = dims.voxels();
  if (fa.size() != n || md.size() != n || ad.size() != n || mask.size() != n)
    throw Error(ErrorCode::size_mismatch, "metric maps do not match dims " + to_string(dims));
  for (std::size_t v = 0; v < n; ++v) {
    if (!mask[v]) continue;
    if (!(fa[v] >= 0.0 && fa[v] <= 1.0 + 1e-9))
      throw Error(ErrorCode::out_of_range, "FA at voxel " + std::to_string(v) + " outside [0, 1]");
    if (!std::isfinite(md[v]) || !std::isfinite(ad[v]))
      throw Error(ErrorCode::non_finite, "MD/AD at voxel " + std::to_string(v) + " non-finite");
  }
}

std::vector<std::size_t> patch_origins(std::size_t dim, std::size_t n, std::size_t stride) {
  std::vector<std::size_t> out;
  if (dim < n) return out;
  for (std::size_t o = 0; o + n <= dim; o += stride) out.push_back(o);
  return out;
}

std::vector<Patch> extract_patches(const DwiVolume& volume, const MetricMaps& targets, std::size_t n,
                                   std::size_t stride) {
  if (n < 1 || stride < 1) throw Error(ErrorCode::invalid_argument, "patch size and stride must be >= 1");
  if (!(volume.dims == targets.dims) || volume.mask != targets.mask) {
    throw Error(ErrorCode::dimension_mismatch, "volume " + to_string(volume.dims) + " and targets " +
                                                   to_string(targets.dims) + " differ in shape or mask");
  }
  const Dims& dims = volume.dims;
  const std::size_t channels = volume.directions();
  const std::size_t half = n / 2;
  const auto ox = patch_origins(dims.w, n, stride);
  const auto oy = patch_origins(dims.h, n, stride);
  const auto oz = patch_origins(dims.s, n, stride);

  std::vector<Patch> patches;
  for (auto z0 : oz) {
    for (auto y0 : oy) {
      for (auto x0 : ox) {
        if (!volume.mask[dims.index(x0 + half, y0 + half, z0 + half)]) continue;
        Patch p;
        p.origin = {x0, y0, z0};
        p.n = n;
        p.channels = channels;
        p.signal.assign(n * n * n * channels, 0.0);
        p.target.assign(n * n * n * kMetricCount, 0.0);
        p.mask.assign(n * n * n, 0);
        for (std::size_t z = 0; z < n; ++z) {
          for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
              const std::size_t pv = x + n * (y + n * z);
              const std::size_t v = dims.index(x0 + x, y0 + y, z0 + z);
              if (!volume.mask[v]) continue;
              p.mask[pv] = 1;
              for (std::size_t c = 0; c < channels; ++c) p.signal[pv * channels + c] = volume.at(v, c);
              p.target[pv * 3 + 0] = targets.fa[v];
              p.target[pv * 3 + 1] = targets.md[v];
              p.target[pv * 3 + 2] = targets.ad[v];
            }
          }
        }
        patches.push_back(std::move(p));
      }
    }
  }
  return patches;
}

}  // namespace aid
