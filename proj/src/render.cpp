#include "aiddti/render.hpp"

#include <algorithm>
#include <cmath>

namespace aid {

Axis parse_axis(std::string_view name) {
  if (name == "x") return Axis::x;
  if (name == "y") return Axis::y;
  if (name == "z") return Axis::z;
  throw Error(ErrorCode::invalid_argument, "axis must be x, y or z, got '" + std::string(name) + "'");
}

Image2D extract_slice(std::span<const double> channel, const Dims& dims, Axis axis, std::size_t index) {
  if (channel.size() != dims.voxels())
    throw Error(ErrorCode::size_mismatch, "channel has " + std::to_string(channel.size()) + " values, dims " +
                                              to_string(dims) + " need " + std::to_string(dims.voxels()));
  const std::size_t extent = axis == Axis::x ? dims.w : axis == Axis::y ? dims.h : dims.s;
  if (index >= extent) {
    throw Error(ErrorCode::out_of_range, "slice " + std::to_string(index) + " is outside [0, " +
                                             std::to_string(extent) + ") along this axis");
  }
  Image2D img;
  switch (axis) {
    case Axis::z: img.width = dims.w; img.height = dims.h; break;
    case Axis::y: img.width = dims.w; img.height = dims.s; break;
    case Axis::x: img.width = dims.h; img.height = dims.s; break;
  }
  img.pixels.resize(img.width * img.height);
  for (std::size_t v = 0; v < img.height; ++v)
    for (std::size_t u = 0; u < img.width; ++u) {
      std::size_t i = 0;
      switch (axis) {
        case Axis::z: i = dims.index(u, v, index); break;
        case Axis::y: i = dims.index(u, index, v); break;
        case Axis::x: i = dims.index(index, u, v); break;
      }
      img.pixels[u + img.width * v] = channel[i];
    }
  return img;
}

std::string encode_pgm16(const Image2D& image, double data_range) {
  if (!(data_range > 0.0) || !std::isfinite(data_range))
    throw Error(ErrorCode::invalid_argument, "data range must be positive and finite");
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n65535\n";
  out.reserve(out.size() + 2 * image.pixels.size());
  for (double p : image.pixels) {
    const double t = std::isfinite(p) ? std::clamp(p / data_range, 0.0, 1.0) : 0.0;
    const auto level = static_cast<unsigned>(std::lround(t * 65535.0));
    out.push_back(static_cast<char>(level >> 8));
    out.push_back(static_cast<char>(level & 0xff));
  }
  return out;
}

Image2D abs_difference(const Image2D& a, const Image2D& b) {
  if (a.width != b.width || a.height != b.height)
    throw Error(ErrorCode::dimension_mismatch, "images differ in shape");
  Image2D d = a;
  for (std::size_t i = 0; i < d.pixels.size(); ++i) d.pixels[i] = std::abs(a.pixels[i] - b.pixels[i]);
  return d;
}

}  // namespace aid
