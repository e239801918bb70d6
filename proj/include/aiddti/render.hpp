#pragma once

#include <span>
#include <string>

#include "aiddti/core_types.hpp"
#include "aiddti/quality.hpp"

namespace aid {

enum class Axis { x, y, z };

Axis parse_axis(std::string_view name);

/// Slice of one channel perpendicular to `axis`. For axis z the image is (w x h),
/// for y it is (w x s), for x it is (h x s).
Image2D extract_slice(std::span<const double> channel, const Dims& dims, Axis axis, std::size_t index);

/// Binary 16-bit PGM (P5, maxval 65535, big-endian samples). Values are
/// clamped to [0, data_range] and scaled linearly onto [0, 65535].
std::string encode_pgm16(const Image2D& image, double data_range);

/// |a - b| pixelwise.
Image2D abs_difference(const Image2D& a, const Image2D& b);

}  // namespace aid
