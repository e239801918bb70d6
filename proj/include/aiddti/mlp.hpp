#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "aiddti/volume_io.hpp"

namespace aid {

/// Layer widths from input to output. Hidden layers use ReLU, the output is linear.
struct Architecture {
  std::size_t input = 0;
  std::vector<std::size_t> hidden;
  std::size_t output = 0;

  std::vector<std::size_t> widths() const;
  std::size_t layers() const { return hidden.size() + 1; }
  bool operator==(const Architecture&) const = default;
};

/// Weights are (fan_out x fan_in); the same shape is used for gradients and
/// for the Adam moment buffers.
struct MlpParams {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  Architecture architecture() const;
  std::size_t parameter_count() const;
  static MlpParams zeros_like(const MlpParams& other);
  void validate() const;
};

/// Per-layer inputs and pre-activations retained for the backward pass.
struct ForwardTape {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre_activations;
};

/// Glorot-uniform weights, bound sqrt(6 / (fan_in + fan_out)); zero biases.
MlpParams init_params(const Architecture& arch, std::uint64_t seed);

/// Batch is (input x B), one sample per column. The output is (output x B).
std::pair<Eigen::MatrixXd, ForwardTape> forward(const MlpParams& params, const Eigen::MatrixXd& batch);
Eigen::MatrixXd predict(const MlpParams& params, const Eigen::MatrixXd& batch);

/// Reverse-mode gradients of sum(output .* output_grad). ReLU'(0) = 0.
MlpParams backward(const MlpParams& params, const ForwardTape& tape, const Eigen::MatrixXd& output_grad);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  MlpParams first_moment;
  MlpParams second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const MlpParams& params, const AdamConfig& config);
};

/// Bias-corrected Adam. Throws before touching anything if a gradient is not finite.
void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state);

struct Checkpoint {
  MlpParams params;
  nlohmann::json meta = nlohmann::json::object();
};

/// `<path>.ckpt.json` header with the architecture plus a raw little-endian payload
/// holding every weight matrix (row-major) followed by its bias, layer by layer.
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, Dtype dtype = Dtype::float32);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace aid
