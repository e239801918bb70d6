#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "aiddti/core_types.hpp"
#include "aiddti/mlp.hpp"
#include "aiddti/nala.hpp"
#include "aiddti/phantom.hpp"
#include "aiddti/quality.hpp"
#include "aiddti/sampling.hpp"

namespace aid {

/// Ablation variants: (A) data term only, (B) SVD regularizer at a fixed
/// weight, (C) SVD regularizer with the weight adapted by NALA.
enum class AblationMode { plain, svd_reg_fixed, svd_reg_nala };

std::string_view to_string(AblationMode mode);
/// Accepts "plain"/"A", "svd_reg_fixed"/"B", "svd_reg_nala"/"C".
AblationMode parse_mode(std::string_view name);
char mode_letter(AblationMode mode);

/// Targets are divided by these before the loss; predictions are multiplied back.
struct NormalizationSpec {
  double fa = 1.0;
  double md = 3.0e-3;
  double ad = 3.0e-3;

  double scale(std::size_t metric) const { return metric == 0 ? fa : metric == 1 ? md : ad; }
  void validate() const;
  MetricMaps normalize(const MetricMaps& maps) const;
  MetricMaps denormalize(const MetricMaps& maps) const;
};

/// Synthetic acquisition: phantom, dense scheme, sparse selection, noise and the split.
struct DataConfig {
  Dims dims{24, 24, 24};
  std::string preset = "mixed";
  std::uint64_t phantom_seed = 7;
  std::size_t dense_directions = 90;
  double bval = 1000.0;
  std::size_t dense_b0 = 1;
  std::uint64_t scheme_seed = 0;
  std::size_t sparse_directions = 6;
  std::size_t restarts = 20;
  std::uint64_t subsample_seed = 1;
  std::size_t b0_keep = 1;
  double noise_sigma = 0.025;
  std::uint64_t noise_seed = 11;
  /// train / validation / test fractions of the axial slabs.
  std::array<double, 3> split{0.5, 0.25, 0.25};
  std::uint64_t split_seed = 3;
  /// Slab thickness along z; 0 means twice the patch size.
  std::size_t slab = 0;
};

struct TrainConfig {
  std::size_t patch = 3;
  std::size_t stride = 1;
  std::size_t batch = 32;
  /// Outer steps; each runs `inner_epochs` passes over the training patches.
  std::size_t epochs = 40;
  std::size_t inner_epochs = 1;
  double learning_rate = 1e-3;
  std::vector<std::size_t> hidden{300, 300};
  AblationMode mode = AblationMode::svd_reg_nala;
  double fixed_lambda = 0.1;
  NalaState nala;
  std::uint64_t init_seed = 1;
  std::uint64_t shuffle_seed = 2;
  NormalizationSpec normalization;

  void validate() const;
};

nlohmann::json to_json(const DataConfig& c);
nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
DataConfig data_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct Dataset {
  GradientScheme dense_scheme;
  SubsamplingResult selection;
  /// Network input: sparse, noisy acquisition.
  DwiVolume sparse;
  /// Ground truth fitted from the dense noiseless acquisition.
  MetricMaps ground_truth;
  std::vector<Patch> train, val, test;
  /// Brain mask restricted to the slabs of each split.
  Mask train_region, val_region, test_region;
  /// Split of every slab: 0 train, 1 validation, 2 test.
  std::vector<int> slab_split;
  std::size_t slab = 0;
};

/// Ground truth from the full noiseless scheme; inputs from the sparse noisy
/// one. Splits are whole axial slabs; patches crossing a slab boundary are dropped.
Dataset prepare_dataset(const TensorField& field, const DataConfig& data, std::size_t patch, std::size_t stride);
/// Same, starting from an already simulated dense noiseless volume.
Dataset prepare_dataset(const DwiVolume& dense, const DataConfig& data, std::size_t patch, std::size_t stride);

/// A trained network plus what is needed to apply it to a volume.
struct InferenceModel {
  MlpParams params;
  std::size_t patch = 3;
  std::size_t channels = 7;
  NormalizationSpec normalization;

  Checkpoint to_checkpoint(const nlohmann::json& extra = nlohmann::json::object()) const;
  static InferenceModel from_checkpoint(const Checkpoint& ckpt);
};

struct TrainResult {
  InferenceModel model;       // weights with the lowest validation total
  std::vector<nlohmann::json> history;  // one record per epoch, epoch 0 is before training
  NalaHistory nala;
  std::size_t best_epoch = 0;
  double best_lambda = 0.0;
  std::uint64_t steps = 0;
  bool diverged = false;
  std::string divergence_message;
};

TrainResult train(const TrainConfig& config, const Dataset& data);

/// Tiles the volume with `stride` (0 = patch size), averages overlapping
/// predictions and zeroes voxels outside the mask.
MetricMaps infer(const InferenceModel& model, const DwiVolume& volume, std::size_t stride = 0);

/// Network input convention. Each diffusion-weighted signal is divided by its
/// voxel's mean b0; the b0 channels are divided by the volume's mean masked b0.
/// Voxels with no positive b0 feed zeros.
struct InputScaling {
  std::vector<std::size_t> b0_channels;
  double b0_scale = 1.0;

  static InputScaling for_volume(const DwiVolume& volume);
  /// In place on one voxel's measurements.
  void apply(std::span<double> voxel) const;
};

/// Flattened network input for one patch (voxel-major, channels inner).
void fill_input(const Patch& patch, const InputScaling& scaling, double* out);

struct AblationConfig {
  DataConfig data;
  TrainConfig train;
  std::vector<AblationMode> modes{AblationMode::plain, AblationMode::svd_reg_fixed, AblationMode::svd_reg_nala};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  /// When non-empty, mode B picks its weight from this grid by validation data term.
  std::vector<double> lambda_grid;
};

nlohmann::json to_json(const AblationConfig& c);
AblationConfig ablation_config_from_json(const nlohmann::json& j);

struct AblationRun {
  std::uint64_t seed = 0;
  AblationMode mode = AblationMode::plain;
  double lambda = 0.0;
  EvalReport test;
  TrainResult result;
  bool failed = false;
  ErrorCode failure_code = ErrorCode::divergence;
  std::string failure;
};

struct AblationSummaryRow {
  AblationMode mode = AblationMode::plain;
  double mse = 0.0, mse_std = 0.0;
  double ssim = 0.0, ssim_std = 0.0;
  double psnr = 0.0, psnr_std = 0.0;
  std::size_t runs = 0;
  bool failed = false;
};

struct AblationResult {
  std::vector<AblationRun> runs;
  std::vector<AblationSummaryRow> summary;
};

/// Seed s drives the phantom, noise, split, initialization and shuffling of
/// one replicate; every mode of that replicate sees identical data.
DataConfig seeded_data(const DataConfig& base, std::uint64_t seed);
TrainConfig seeded_train(const TrainConfig& base, std::uint64_t seed);

AblationResult run_ablation(const AblationConfig& config);
nlohmann::json to_json(const AblationResult& result);
/// Columns: Model | SVD-Reg | NALA | MSE (x1e-3) | SSIM | PSNR.
std::string ablation_table(const AblationResult& result);

/// Evaluates a trained model on the test slabs in normalized units.
EvalReport evaluate_on_test(const InferenceModel& model, const Dataset& data);

}  // namespace aid
