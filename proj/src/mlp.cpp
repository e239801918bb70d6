#include "aiddti/mlp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "aiddti/core_types.hpp"
#include "aiddti/rng.hpp"

namespace aid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CheckpointPaths {
  fs::path header;
  fs::path payload;
};

CheckpointPaths checkpoint_paths(const fs::path& path) {
  std::string s = path.string();
  for (std::string_view suffix : {".ckpt.json", ".ckpt.raw"}) {
    if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
      s.resize(s.size() - suffix.size());
      break;
    }
  }
  return {fs::path(s + ".ckpt.json"), fs::path(s + ".ckpt.raw")};
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
  char buf[sizeof(T)];
  std::memcpy(buf, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  pos += sizeof(T);
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

}  // namespace

std::vector<std::size_t> Architecture::widths() const {
  std::vector<std::size_t> w{input};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(output);
  return w;
}

Architecture MlpParams::architecture() const {
  Architecture a;
  if (weights.empty()) return a;
  a.input = static_cast<std::size_t>(weights.front().cols());
  for (std::size_t l = 0; l + 1 < weights.size(); ++l) a.hidden.push_back(static_cast<std::size_t>(weights[l].rows()));
  a.output = static_cast<std::size_t>(weights.back().rows());
  return a;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  return n;
}

MlpParams MlpParams::zeros_like(const MlpParams& other) {
  MlpParams z;
  for (std::size_t l = 0; l < other.weights.size(); ++l) {
    z.weights.push_back(Eigen::MatrixXd::Zero(other.weights[l].rows(), other.weights[l].cols()));
    z.biases.push_back(Eigen::VectorXd::Zero(other.biases[l].size()));
  }
  return z;
}

void MlpParams::validate() const {
  if (weights.empty() || weights.size() != biases.size())
    throw Error(ErrorCode::invalid_argument, "network needs one bias per weight matrix and at least one layer");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (biases[l].size() != weights[l].rows())
      throw Error(ErrorCode::dimension_mismatch, "layer " + std::to_string(l) + " bias length does not match its output width");
    if (l > 0 && weights[l].cols() != weights[l - 1].rows())
      throw Error(ErrorCode::dimension_mismatch, "layer " + std::to_string(l) + " input width does not chain with layer " +
                                                     std::to_string(l - 1));
    if (!weights[l].allFinite() || !biases[l].allFinite())
      throw Error(ErrorCode::non_finite, "layer " + std::to_string(l) + " holds non-finite parameters");
  }
}

MlpParams init_params(const Architecture& arch, std::uint64_t seed) {
  const auto widths = arch.widths();
  for (auto w : widths)
    if (w == 0) throw Error(ErrorCode::invalid_argument, "architecture has a zero-width layer");
  Rng rng(seed);
  MlpParams p;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t fan_in = widths[l], fan_out = widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fan_out)));
  }
  return p;
}

std::pair<Eigen::MatrixXd, ForwardTape> forward(const MlpParams& params, const Eigen::MatrixXd& batch) {
  if (params.weights.empty() || batch.rows() != params.weights.front().cols()) {
    throw Error(ErrorCode::dimension_mismatch,
                "network expects input dimension " +
                    std::to_string(params.weights.empty() ? 0 : params.weights.front().cols()) + ", got " +
                    std::to_string(batch.rows()));
  }
  ForwardTape tape;
  Eigen::MatrixXd a = batch;
  const std::size_t layers = params.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = params.weights[l] * a;
    z.colwise() += params.biases[l];
    tape.inputs.push_back(std::move(a));
    if (l + 1 < layers) {
      a = z.cwiseMax(0.0);
      tape.pre_activations.push_back(std::move(z));
    } else {
      tape.pre_activations.push_back(z);
      a = std::move(z);
    }
  }
  return {std::move(a), std::move(tape)};
}

Eigen::MatrixXd predict(const MlpParams& params, const Eigen::MatrixXd& batch) { return forward(params, batch).first; }

MlpParams backward(const MlpParams& params, const ForwardTape& tape, const Eigen::MatrixXd& output_grad) {
  const std::size_t layers = params.weights.size();
  if (tape.inputs.size() != layers || tape.pre_activations.size() != layers)
    throw Error(ErrorCode::dimension_mismatch, "tape depth " + std::to_string(tape.inputs.size()) +
                                                   " does not match " + std::to_string(layers) + " layers");
  if (output_grad.rows() != params.weights.back().rows() || output_grad.cols() != tape.inputs.front().cols())
    throw Error(ErrorCode::dimension_mismatch, "output gradient shape does not match the forward batch");

  MlpParams grads;
  grads.weights.resize(layers);
  grads.biases.resize(layers);
  Eigen::MatrixXd delta = output_grad;
  for (std::size_t l = layers; l-- > 0;) {
    grads.weights[l] = delta * tape.inputs[l].transpose();
    grads.biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd upstream = params.weights[l].transpose() * delta;
    const Eigen::MatrixXd& z = tape.pre_activations[l - 1];
    delta = (z.array() > 0.0).select(upstream, 0.0);
  }
  return grads;
}

AdamState AdamState::for_params(const MlpParams& params, const AdamConfig& config) {
  return {config, MlpParams::zeros_like(params), MlpParams::zeros_like(params), 0};
}

void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state) {
  if (grads.weights.size() != params.weights.size() || state.first_moment.weights.size() != params.weights.size())
    throw Error(ErrorCode::dimension_mismatch, "gradient/optimizer state do not match the network depth");
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    if (grads.weights[l].rows() != params.weights[l].rows() || grads.weights[l].cols() != params.weights[l].cols() ||
        grads.biases[l].size() != params.biases[l].size())
      throw Error(ErrorCode::dimension_mismatch, "gradient shape mismatch at layer " + std::to_string(l));
    if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite())
      throw Error(ErrorCode::non_finite, "non-finite gradient in layer " + std::to_string(l));
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);

  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = c.beta1 * m + (1.0 - c.beta1) * grad;
    v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
    param.array() -= c.learning_rate * (m.array() / correction1) / ((v.array() / correction2).sqrt() + c.epsilon);
  };
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    update(params.weights[l], grads.weights[l], state.first_moment.weights[l], state.second_moment.weights[l]);
    update(params.biases[l], grads.biases[l], state.first_moment.biases[l], state.second_moment.biases[l]);
  }
}

void write_checkpoint(const Checkpoint& ckpt, const fs::path& path, Dtype dtype) {
  ckpt.params.validate();
  const auto paths = checkpoint_paths(path);
  std::string payload;
  auto emit = [&](double v) {
    if (dtype == Dtype::float32) put(payload, static_cast<float>(v));
    else put(payload, v);
  };
  for (std::size_t l = 0; l < ckpt.params.weights.size(); ++l) {
    const auto& w = ckpt.params.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) emit(w(r, c));
    for (Eigen::Index r = 0; r < ckpt.params.biases[l].size(); ++r) emit(ckpt.params.biases[l](r));
  }
  const Architecture arch = ckpt.params.architecture();
  json header = {
      {"format", "aiddti-checkpoint"},
      {"version", 1},
      {"architecture", {{"input", arch.input}, {"hidden", arch.hidden}, {"output", arch.output}}},
      {"dtype", to_string(dtype)},
      {"byte_order", "little"},
      {"payload", paths.payload.filename().string()},
      {"parameter_count", ckpt.params.parameter_count()},
      {"meta", ckpt.meta},
  };
  atomic_write(paths.payload, payload);
  atomic_write(paths.header, header.dump(1) + "\n");
}

Checkpoint read_checkpoint(const fs::path& path) {
  const auto paths = checkpoint_paths(path);
  Checkpoint ckpt;
  try {
    const json header = json::parse(read_file(paths.header));
    Architecture arch;
    arch.input = header.at("architecture").at("input").get<std::size_t>();
    arch.hidden = header.at("architecture").at("hidden").get<std::vector<std::size_t>>();
    arch.output = header.at("architecture").at("output").get<std::size_t>();
    const Dtype dtype = parse_dtype(header.at("dtype").get<std::string>());
    ckpt.meta = header.value("meta", json::object());

    const auto widths = arch.widths();
    std::size_t count = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) count += widths[l + 1] * widths[l] + widths[l + 1];
    const std::size_t width = dtype == Dtype::float32 ? 4 : 8;
    const std::string bytes = read_file(paths.payload);
    if (bytes.size() != count * width) {
      throw Error(ErrorCode::size_mismatch, paths.payload.string() + ": architecture needs " +
                                                std::to_string(count * width) + " bytes, payload has " +
                                                std::to_string(bytes.size()));
    }
    std::size_t pos = 0;
    auto next = [&]() -> double {
      return dtype == Dtype::float32 ? static_cast<double>(get<float>(bytes, pos)) : get<double>(bytes, pos);
    };
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      Eigen::MatrixXd w(widths[l + 1], widths[l]);
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = next();
      Eigen::VectorXd b(widths[l + 1]);
      for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = next();
      ckpt.params.weights.push_back(std::move(w));
      ckpt.params.biases.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, paths.header.string() + ": " + e.what());
  }
  ckpt.params.validate();
  return ckpt;
}

}  // namespace aid
