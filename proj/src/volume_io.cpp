#include "aiddti/volume_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace aid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kHeaderSuffix = ".vol.json";
constexpr std::string_view kPayloadSuffix = ".vol.raw";

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
void store_le(T value, char* out) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::memcpy(out, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(out[i], out[sizeof(T) - 1 - i]);
  }
}

template <typename T>
T load_le(const char* in) {
  char buf[sizeof(T)];
  std::memcpy(buf, in, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

std::size_t dtype_size(Dtype d) { return d == Dtype::float32 ? 4 : 8; }

json scheme_to_json(const GradientScheme& scheme) {
  json bvecs = json::array();
  for (const auto& g : scheme.bvecs) bvecs.push_back({g[0], g[1], g[2]});
  return {{"bvals", scheme.bvals}, {"bvecs", bvecs}};
}

GradientScheme scheme_from_json(const json& j) {
  GradientScheme s;
  s.bvals = j.at("bvals").get<std::vector<double>>();
  for (const auto& g : j.at("bvecs")) s.bvecs.push_back({g.at(0).get<double>(), g.at(1).get<double>(), g.at(2).get<double>()});
  return s;
}

std::vector<std::vector<double>> read_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw Error(ErrorCode::parse, path.string() + ": cannot parse '" + tok + "' as a number");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string_view to_string(Dtype dtype) { return dtype == Dtype::float32 ? "float32" : "float64"; }

Dtype parse_dtype(std::string_view name) {
  if (name == "float32") return Dtype::float32;
  if (name == "float64") return Dtype::float64;
  throw Error(ErrorCode::parse, "unsupported dtype '" + std::string(name) + "' (float32, float64)");
}

VolumePaths volume_paths(const fs::path& path) {
  std::string s = path.string();
  if (ends_with(s, kHeaderSuffix)) s.resize(s.size() - kHeaderSuffix.size());
  else if (ends_with(s, kPayloadSuffix)) s.resize(s.size() - kPayloadSuffix.size());
  return {fs::path(s + std::string(kHeaderSuffix)), fs::path(s + std::string(kPayloadSuffix))};
}

std::vector<std::uint64_t> encode_mask_rle(const Mask& mask) {
  std::vector<std::uint64_t> runs;
  std::uint8_t current = 0;
  std::uint64_t length = 0;
  for (auto m : mask) {
    const std::uint8_t bit = m ? 1 : 0;
    if (bit == current) {
      ++length;
    } else {
      runs.push_back(length);
      current = bit;
      length = 1;
    }
  }
  runs.push_back(length);
  return runs;
}

Mask decode_mask_rle(const std::vector<std::uint64_t>& runs, std::size_t voxels) {
  Mask mask;
  mask.reserve(voxels);
  std::uint8_t current = 0;
  for (auto r : runs) {
    if (mask.size() + r > voxels) break;
    mask.insert(mask.end(), r, current);
    current ^= 1;
  }
  if (mask.size() != voxels) {
    throw Error(ErrorCode::size_mismatch,
                "mask run lengths cover " + std::to_string(mask.size()) + " voxels, expected " + std::to_string(voxels));
  }
  return mask;
}

void atomic_write(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::io, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_volume_file(const VolumeFile& volume, const fs::path& path, Dtype dtype) {
  const std::size_t expected = volume.dims.voxels() * volume.channels;
  if (volume.data.size() != expected) {
    throw Error(ErrorCode::size_mismatch, "volume holds " + std::to_string(volume.data.size()) + " values, dims " +
                                              to_string(volume.dims) + "x" + std::to_string(volume.channels) +
                                              " need " + std::to_string(expected));
  }
  if (volume.mask.size() != volume.dims.voxels())
    throw Error(ErrorCode::size_mismatch, "mask size does not match dims " + to_string(volume.dims));

  const auto paths = volume_paths(path);
  const std::size_t width = dtype_size(dtype);
  std::string payload(expected * width, '\0');
  for (std::size_t i = 0; i < expected; ++i) {
    if (dtype == Dtype::float32) store_le(static_cast<float>(volume.data[i]), payload.data() + i * width);
    else store_le(volume.data[i], payload.data() + i * width);
  }

  json header = {
      {"format", "aiddti-volume"},
      {"version", 1},
      {"dims", {volume.dims.w, volume.dims.h, volume.dims.s}},
      {"channels", volume.channels},
      {"dtype", to_string(dtype)},
      {"byte_order", "little"},
      {"axis_order", "x,y,z,channel"},
      {"payload", paths.payload.filename().string()},
      {"mask_rle", encode_mask_rle(volume.mask)},
  };
  if (volume.scheme) header["scheme"] = scheme_to_json(*volume.scheme);
  if (!volume.attributes.empty()) header["attributes"] = volume.attributes;

  atomic_write(paths.payload, payload);
  atomic_write(paths.header, header.dump(1) + "\n");
}

VolumeFile read_volume_file(const fs::path& path) {
  const auto paths = volume_paths(path);
  json header;
  try {
    header = json::parse(read_file(paths.header));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, paths.header.string() + ": " + e.what());
  }

  VolumeFile vf;
  std::size_t width = 4;
  try {
    const auto dims = header.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw Error(ErrorCode::parse, paths.header.string() + ": dims must have three entries");
    vf.dims = {dims[0], dims[1], dims[2]};
    vf.channels = header.at("channels").get<std::size_t>();
    const Dtype dtype = parse_dtype(header.at("dtype").get<std::string>());
    width = dtype_size(dtype);
    if (header.value("byte_order", "little") != "little")
      throw Error(ErrorCode::parse, paths.header.string() + ": only little-endian payloads are supported");
    vf.mask = decode_mask_rle(header.at("mask_rle").get<std::vector<std::uint64_t>>(), vf.dims.voxels());
    if (header.contains("scheme")) vf.scheme = scheme_from_json(header.at("scheme"));
    if (header.contains("attributes")) vf.attributes = header.at("attributes");

    const std::string bytes = read_file(paths.payload);
    const std::size_t count = vf.dims.voxels() * vf.channels;
    if (bytes.size() != count * width) {
      throw Error(ErrorCode::size_mismatch, paths.payload.string() + ": header " + to_string(vf.dims) + "x" +
                                                std::to_string(vf.channels) + " " + std::string(to_string(dtype)) +
                                                " expects " + std::to_string(count * width) + " bytes, payload has " +
                                                std::to_string(bytes.size()));
    }
    vf.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      vf.data[i] = dtype == Dtype::float32 ? static_cast<double>(load_le<float>(bytes.data() + i * width))
                                           : load_le<double>(bytes.data() + i * width);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, paths.header.string() + ": " + e.what());
  }
  return vf;
}

DwiVolume read_volume(const fs::path& path) {
  VolumeFile vf = read_volume_file(path);
  if (!vf.scheme) throw Error(ErrorCode::parse, volume_paths(path).header.string() + ": no gradient scheme in header");
  if (vf.scheme->size() != vf.channels) {
    throw Error(ErrorCode::size_mismatch, "scheme lists " + std::to_string(vf.scheme->size()) +
                                              " measurements, volume has " + std::to_string(vf.channels));
  }
  DwiVolume v{vf.dims, std::move(*vf.scheme), std::move(vf.data), std::move(vf.mask)};
  v.validate();
  return v;
}

void write_volume(const DwiVolume& volume, const fs::path& path, Dtype dtype) {
  volume.validate();
  VolumeFile vf;
  vf.dims = volume.dims;
  vf.channels = volume.directions();
  vf.data = volume.data;
  vf.mask = volume.mask;
  vf.scheme = volume.scheme;
  write_volume_file(vf, path, dtype);
}

GradientScheme read_scheme(const fs::path& bval, const fs::path& bvec) {
  const auto bval_rows = read_rows(bval);
  const auto bvec_rows = read_rows(bvec);
  GradientScheme s;
  for (const auto& r : bval_rows) s.bvals.insert(s.bvals.end(), r.begin(), r.end());
  if (bvec_rows.size() == 3) {
    const std::size_t n = bvec_rows[0].size();
    if (bvec_rows[1].size() != n || bvec_rows[2].size() != n)
      throw Error(ErrorCode::parse, bvec.string() + ": bvec rows differ in length");
    for (std::size_t i = 0; i < n; ++i) s.bvecs.push_back({bvec_rows[0][i], bvec_rows[1][i], bvec_rows[2][i]});
  } else {
    throw Error(ErrorCode::parse, bvec.string() + ": expected 3 rows, found " + std::to_string(bvec_rows.size()));
  }
  if (s.bvals.size() != s.bvecs.size()) {
    throw Error(ErrorCode::size_mismatch, "bval lists " + std::to_string(s.bvals.size()) + " entries, bvec lists " +
                                              std::to_string(s.bvecs.size()));
  }
  s.validate();
  return s;
}

void write_scheme(const GradientScheme& scheme, const fs::path& bval, const fs::path& bvec) {
  scheme.validate();
  std::string bv;
  for (std::size_t i = 0; i < scheme.size(); ++i) bv += (i ? " " : "") + format_double(scheme.bvals[i]);
  bv += "\n";
  std::string gv;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    for (std::size_t i = 0; i < scheme.size(); ++i) gv += (i ? " " : "") + format_double(scheme.bvecs[i][axis]);
    gv += "\n";
  }
  atomic_write(bval, bv);
  atomic_write(bvec, gv);
}

fs::path metric_map_path(const fs::path& prefix, Metric m) {
  static constexpr std::array<std::string_view, 3> suffix = {"_fa", "_md", "_ad"};
  return fs::path(prefix.string() + std::string(suffix[static_cast<std::size_t>(m)]));
}

void write_metric_maps(const MetricMaps& maps, const fs::path& prefix, Dtype dtype) {
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    VolumeFile vf;
    vf.dims = maps.dims;
    vf.channels = 1;
    vf.data = maps.channel(m);
    vf.mask = maps.mask;
    vf.attributes = {{"metric", kMetricNames[m]}};
    write_volume_file(vf, metric_map_path(prefix, static_cast<Metric>(m)), dtype);
  }
}

MetricMaps read_metric_maps(const fs::path& prefix) {
  MetricMaps maps;
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    VolumeFile vf = read_volume_file(metric_map_path(prefix, static_cast<Metric>(m)));
    if (vf.channels != 1)
      throw Error(ErrorCode::size_mismatch, "metric volume must have 1 channel, found " + std::to_string(vf.channels));
    if (m == 0) {
      maps.dims = vf.dims;
      maps.mask = vf.mask;
    } else if (!(vf.dims == maps.dims) || vf.mask != maps.mask) {
      throw Error(ErrorCode::dimension_mismatch, "metric maps under " + prefix.string() + " disagree in shape or mask");
    }
    maps.channel(m) = std::move(vf.data);
  }
  return maps;
}

}  // namespace aid
