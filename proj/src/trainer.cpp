#include "aiddti/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "aiddti/dti_fit.hpp"
#include "aiddti/rng.hpp"

namespace aid {

using nlohmann::json;

namespace {

struct Divergence {
  std::string message;
};

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, std::string_view where) {
  if (!j.is_object()) throw Error(ErrorCode::parse, std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw Error(ErrorCode::parse, "unknown key '" + key + "' in " + std::string(where));
  }
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

// Network view of a patch list at a fixed input scale and normalization.
struct PatchTensors {
  Eigen::MatrixXd inputs;                 // input_dim x P
  std::vector<ParamMatrix> targets;       // normalized
  std::vector<Eigen::VectorXd> masks;     // per voxel 0/1
};

PatchTensors to_tensors(const std::vector<Patch>& patches, const InputScaling& scaling, const NormalizationSpec& norm) {
  PatchTensors t;
  if (patches.empty()) return t;
  const std::size_t voxels = patches.front().voxels();
  const std::size_t dim = voxels * patches.front().channels;
  t.inputs.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(patches.size()));
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Patch& p = patches[i];
    fill_input(p, scaling, t.inputs.col(static_cast<Eigen::Index>(i)).data());
    ParamMatrix target(static_cast<Eigen::Index>(voxels), 3);
    Eigen::VectorXd mask(static_cast<Eigen::Index>(voxels));
    for (std::size_t v = 0; v < voxels; ++v) {
      for (std::size_t m = 0; m < 3; ++m)
        target(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(m)) = p.target[v * 3 + m] / norm.scale(m);
      mask(static_cast<Eigen::Index>(v)) = p.mask[v] ? 1.0 : 0.0;
    }
    t.targets.push_back(std::move(target));
    t.masks.push_back(std::move(mask));
  }
  return t;
}

// Column of network output (voxel-major, metric inner) as a masked parameter matrix.
ParamMatrix output_matrix(const Eigen::MatrixXd& out, Eigen::Index col, const Eigen::VectorXd& mask) {
  const Eigen::Index voxels = mask.size();
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> view(out.col(col).data(), voxels, 3);
  ParamMatrix m = view;
  m.array().colwise() *= mask.array();
  return m;
}

LossBreakdown score(const MlpParams& params, const PatchTensors& data, double lambda) {
  LossBreakdown mean;
  mean.lambda = lambda;
  if (data.targets.empty()) return mean;
  const Eigen::Index total = data.inputs.cols();
  constexpr Eigen::Index chunk = 512;
  for (Eigen::Index start = 0; start < total; start += chunk) {
    const Eigen::Index count = std::min(chunk, total - start);
    const Eigen::MatrixXd out = predict(params, data.inputs.middleCols(start, count));
    for (Eigen::Index j = 0; j < count; ++j) {
      const auto i = static_cast<std::size_t>(start + j);
      const LossBreakdown l = loss_only(output_matrix(out, j, data.masks[i]), data.targets[i], lambda);
      mean.data_term += l.data_term;
      mean.reg_term += l.reg_term;
    }
  }
  const double inv = 1.0 / static_cast<double>(total);
  mean.data_term *= inv;
  mean.reg_term *= inv;
  mean.total = mean.data_term + lambda * mean.reg_term;
  return mean;
}

json loss_json(const LossBreakdown& l) {
  return {{"data_term", l.data_term}, {"reg_term", l.reg_term}, {"lambda", l.lambda}, {"total", l.total}};
}

Mask region_mask(const Dataset& d, int split) {
  const Dims& dims = d.sparse.dims;
  Mask m(dims.voxels(), 0);
  for (std::size_t z = 0; z < dims.s; ++z) {
    if (d.slab_split[z / d.slab] != split) continue;
    for (std::size_t i = 0; i < dims.w * dims.h; ++i) {
      const std::size_t v = i + z * dims.w * dims.h;
      m[v] = d.sparse.mask[v];
    }
  }
  return m;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

std::string_view to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::plain: return "plain";
    case AblationMode::svd_reg_fixed: return "svd_reg_fixed";
    case AblationMode::svd_reg_nala: return "svd_reg_nala";
  }
  return "plain";
}

AblationMode parse_mode(std::string_view name) {
  if (name == "plain" || name == "A") return AblationMode::plain;
  if (name == "svd_reg_fixed" || name == "B") return AblationMode::svd_reg_fixed;
  if (name == "svd_reg_nala" || name == "C") return AblationMode::svd_reg_nala;
  throw Error(ErrorCode::parse, "unknown ablation mode '" + std::string(name) + "' (plain|svd_reg_fixed|svd_reg_nala or A|B|C)");
}

char mode_letter(AblationMode mode) {
  return mode == AblationMode::plain ? 'A' : mode == AblationMode::svd_reg_fixed ? 'B' : 'C';
}

void NormalizationSpec::validate() const {
  if (!(fa > 0.0 && md > 0.0 && ad > 0.0)) throw Error(ErrorCode::invalid_argument, "normalization scales must be > 0");
}

MetricMaps NormalizationSpec::normalize(const MetricMaps& maps) const {
  MetricMaps out = maps;
  for (std::size_t m = 0; m < kMetricCount; ++m)
    for (double& v : out.channel(m)) v /= scale(m);
  return out;
}

MetricMaps NormalizationSpec::denormalize(const MetricMaps& maps) const {
  MetricMaps out = maps;
  for (std::size_t m = 0; m < kMetricCount; ++m)
    for (double& v : out.channel(m)) v *= scale(m);
  return out;
}

void TrainConfig::validate() const {
  if (patch < 1 || stride < 1 || batch < 1) throw Error(ErrorCode::invalid_argument, "patch, stride and batch must be >= 1");
  if (inner_epochs < 1) throw Error(ErrorCode::invalid_argument, "inner_epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::invalid_argument, "learning rate must be > 0");
  for (auto h : hidden)
    if (h == 0) throw Error(ErrorCode::invalid_argument, "hidden layer widths must be > 0");
  if (mode == AblationMode::svd_reg_fixed && !(fixed_lambda >= 0.0))
    throw Error(ErrorCode::invalid_argument, "fixed lambda must be >= 0");
  if (mode == AblationMode::svd_reg_nala) nala.validate();
  normalization.validate();
}

json to_json(const DataConfig& c) {
  return {{"dims", {c.dims.w, c.dims.h, c.dims.s}},
          {"preset", c.preset},
          {"phantom_seed", c.phantom_seed},
          {"dense_directions", c.dense_directions},
          {"bval", c.bval},
          {"dense_b0", c.dense_b0},
          {"scheme_seed", c.scheme_seed},
          {"sparse_directions", c.sparse_directions},
          {"restarts", c.restarts},
          {"subsample_seed", c.subsample_seed},
          {"b0_keep", c.b0_keep},
          {"noise_sigma", c.noise_sigma},
          {"noise_seed", c.noise_seed},
          {"split", c.split},
          {"split_seed", c.split_seed},
          {"slab", c.slab}};
}

json to_json(const TrainConfig& c) {
  return {{"patch", c.patch},
          {"stride", c.stride},
          {"batch", c.batch},
          {"epochs", c.epochs},
          {"inner_epochs", c.inner_epochs},
          {"learning_rate", c.learning_rate},
          {"hidden", c.hidden},
          {"mode", to_string(c.mode)},
          {"fixed_lambda", c.fixed_lambda},
          {"nala",
           {{"lambda0", c.nala.lambda},
            {"beta", c.nala.beta},
            {"kappa", c.nala.kappa},
            {"lambda_min", c.nala.lambda_min},
            {"lambda_max", c.nala.lambda_max}}},
          {"init_seed", c.init_seed},
          {"shuffle_seed", c.shuffle_seed},
          {"normalization", {{"fa", c.normalization.fa}, {"md", c.normalization.md}, {"ad", c.normalization.ad}}}};
}

DataConfig data_config_from_json(const json& j) {
  reject_unknown(j,
                 {"dims", "preset", "phantom_seed", "dense_directions", "bval", "dense_b0", "scheme_seed",
                  "sparse_directions", "restarts", "subsample_seed", "b0_keep", "noise_sigma", "noise_seed", "split",
                  "split_seed", "slab"},
                 "data config");
  DataConfig c;
  try {
    if (j.contains("dims")) {
      const auto& d = j.at("dims");
      if (d.is_number()) {
        const auto n = d.get<std::size_t>();
        c.dims = {n, n, n};
      } else {
        const auto v = d.get<std::vector<std::size_t>>();
        if (v.size() != 3) throw Error(ErrorCode::parse, "dims must be a number or three numbers");
        c.dims = {v[0], v[1], v[2]};
      }
    }
    read_key(j, "preset", c.preset);
    read_key(j, "phantom_seed", c.phantom_seed);
    read_key(j, "dense_directions", c.dense_directions);
    read_key(j, "bval", c.bval);
    read_key(j, "dense_b0", c.dense_b0);
    read_key(j, "scheme_seed", c.scheme_seed);
    read_key(j, "sparse_directions", c.sparse_directions);
    read_key(j, "restarts", c.restarts);
    read_key(j, "subsample_seed", c.subsample_seed);
    read_key(j, "b0_keep", c.b0_keep);
    read_key(j, "noise_sigma", c.noise_sigma);
    read_key(j, "noise_seed", c.noise_seed);
    read_key(j, "split", c.split);
    read_key(j, "split_seed", c.split_seed);
    read_key(j, "slab", c.slab);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, std::string("data config: ") + e.what());
  }
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j,
                 {"patch", "stride", "batch", "epochs", "inner_epochs", "learning_rate", "hidden", "mode",
                  "fixed_lambda", "nala", "init_seed", "shuffle_seed", "normalization"},
                 "train config");
  TrainConfig c;
  try {
    read_key(j, "patch", c.patch);
    read_key(j, "stride", c.stride);
    read_key(j, "batch", c.batch);
    read_key(j, "epochs", c.epochs);
    read_key(j, "inner_epochs", c.inner_epochs);
    read_key(j, "learning_rate", c.learning_rate);
    read_key(j, "hidden", c.hidden);
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    read_key(j, "fixed_lambda", c.fixed_lambda);
    if (j.contains("nala")) {
      const auto& n = j.at("nala");
      reject_unknown(n, {"lambda0", "beta", "kappa", "lambda_min", "lambda_max"}, "nala config");
      read_key(n, "lambda0", c.nala.lambda);
      read_key(n, "beta", c.nala.beta);
      read_key(n, "kappa", c.nala.kappa);
      read_key(n, "lambda_min", c.nala.lambda_min);
      read_key(n, "lambda_max", c.nala.lambda_max);
    }
    read_key(j, "init_seed", c.init_seed);
    read_key(j, "shuffle_seed", c.shuffle_seed);
    if (j.contains("normalization")) {
      const auto& n = j.at("normalization");
      reject_unknown(n, {"fa", "md", "ad"}, "normalization");
      read_key(n, "fa", c.normalization.fa);
      read_key(n, "md", c.normalization.md);
      read_key(n, "ad", c.normalization.ad);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, std::string("train config: ") + e.what());
  }
  return c;
}

InputScaling InputScaling::for_volume(const DwiVolume& volume) {
  InputScaling s;
  s.b0_channels = volume.scheme.b0_indices();
  if (s.b0_channels.empty()) throw Error(ErrorCode::invalid_argument, "input volume has no b0 measurement");
  s.b0_scale = volume.mean_b0();
  if (!(s.b0_scale > 0.0)) throw Error(ErrorCode::invalid_argument, "input volume has no positive b0 signal");
  return s;
}

void InputScaling::apply(std::span<double> voxel) const {
  double s0 = 0.0;
  for (auto c : b0_channels) s0 += voxel[c];
  s0 /= static_cast<double>(b0_channels.size());
  if (!(s0 > 0.0) || !std::isfinite(s0)) {
    std::fill(voxel.begin(), voxel.end(), 0.0);
    return;
  }
  std::size_t next_b0 = 0;
  for (std::size_t c = 0; c < voxel.size(); ++c) {
    if (next_b0 < b0_channels.size() && b0_channels[next_b0] == c) {
      voxel[c] /= b0_scale;
      ++next_b0;
    } else {
      voxel[c] /= s0;
    }
  }
}

void fill_input(const Patch& patch, const InputScaling& scaling, double* out) {
  std::copy(patch.signal.begin(), patch.signal.end(), out);
  for (std::size_t v = 0; v < patch.voxels(); ++v) {
    if (patch.mask[v]) scaling.apply({out + v * patch.channels, patch.channels});
  }
}

Dataset prepare_dataset(const TensorField& field, const DataConfig& data, std::size_t patch, std::size_t stride) {
  const GradientScheme dense_scheme = uniform_scheme(data.dense_directions, data.bval, data.dense_b0, data.scheme_seed);
  return prepare_dataset(simulate_dwi(field, dense_scheme), data, patch, stride);
}

Dataset prepare_dataset(const DwiVolume& dense, const DataConfig& data, std::size_t patch, std::size_t stride) {
  const double fsum = data.split[0] + data.split[1] + data.split[2];
  if (std::abs(fsum - 1.0) > 1e-9 || *std::min_element(data.split.begin(), data.split.end()) < 0.0) {
    std::ostringstream os;
    os << "split fractions must be non-negative and sum to 1, got " << data.split[0] << " + " << data.split[1] << " + "
       << data.split[2];
    throw Error(ErrorCode::invalid_argument, os.str());
  }
  if (patch < 1 || stride < 1) throw Error(ErrorCode::invalid_argument, "patch and stride must be >= 1");

  Dataset d;
  d.dense_scheme = dense.scheme;
  d.ground_truth = derive_metrics(fit_tensor_ols(dense).field);
  // The fit can only drop voxels; keep the ground-truth mask authoritative.
  DwiVolume dense_masked = dense;
  dense_masked.mask = d.ground_truth.mask;

  d.selection = select_uniform(dense.scheme, data.sparse_directions, data.restarts, data.subsample_seed);
  d.sparse = add_rician_noise(apply_subsampling(dense_masked, d.selection, data.b0_keep), {data.noise_sigma, data.noise_seed});

  const Dims& dims = dense.dims;
  d.slab = data.slab ? data.slab : 2 * patch;
  const std::size_t slabs = (dims.s + d.slab - 1) / d.slab;
  std::vector<std::size_t> order(slabs);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(data.split_seed);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(data.split[0] * static_cast<double>(slabs)));
  const auto n_val = std::min(slabs - std::min(n_train, slabs),
                              static_cast<std::size_t>(std::llround(data.split[1] * static_cast<double>(slabs))));
  d.slab_split.assign(slabs, 2);
  for (std::size_t i = 0; i < slabs; ++i) {
    if (i < n_train) d.slab_split[order[i]] = 0;
    else if (i < n_train + n_val) d.slab_split[order[i]] = 1;
  }

  for (auto& p : extract_patches(d.sparse, d.ground_truth, patch, stride)) {
    const std::size_t z0 = p.origin[2];
    const std::size_t slab_lo = z0 / d.slab, slab_hi = (z0 + patch - 1) / d.slab;
    if (slab_lo != slab_hi) continue;
    if (std::all_of(p.target.begin(), p.target.end(), [](double v) { return v == 0.0; })) continue;
    switch (d.slab_split[slab_lo]) {
      case 0: d.train.push_back(std::move(p)); break;
      case 1: d.val.push_back(std::move(p)); break;
      default: d.test.push_back(std::move(p)); break;
    }
  }
  d.train_region = region_mask(d, 0);
  d.val_region = region_mask(d, 1);
  d.test_region = region_mask(d, 2);
  return d;
}

Checkpoint InferenceModel::to_checkpoint(const json& extra) const {
  Checkpoint c;
  c.params = params;
  c.meta = extra;
  c.meta["patch"] = patch;
  c.meta["channels"] = channels;
  c.meta["input_scaling"] = "voxel_b0";
  c.meta["normalization"] = {{"fa", normalization.fa}, {"md", normalization.md}, {"ad", normalization.ad}};
  return c;
}

InferenceModel InferenceModel::from_checkpoint(const Checkpoint& ckpt) {
  InferenceModel m;
  m.params = ckpt.params;
  try {
    m.patch = ckpt.meta.at("patch").get<std::size_t>();
    m.channels = ckpt.meta.at("channels").get<std::size_t>();
    const auto& n = ckpt.meta.at("normalization");
    m.normalization = {n.at("fa").get<double>(), n.at("md").get<double>(), n.at("ad").get<double>()};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, std::string("checkpoint metadata: ") + e.what());
  }
  const Architecture arch = m.params.architecture();
  const std::size_t voxels = m.patch * m.patch * m.patch;
  if (arch.input != voxels * m.channels || arch.output != voxels * kMetricCount)
    throw Error(ErrorCode::dimension_mismatch, "checkpoint architecture does not match its patch size and channel count");
  return m;
}

TrainResult train(const TrainConfig& config, const Dataset& data) {
  config.validate();
  if (data.train.empty()) throw Error(ErrorCode::invalid_argument, "training set is empty");
  if (config.mode == AblationMode::svd_reg_nala && data.val.empty())
    throw Error(ErrorCode::invalid_argument, "NALA needs a non-empty validation set");
  if (data.train.front().n != config.patch)
    throw Error(ErrorCode::dimension_mismatch, "dataset patches have edge " + std::to_string(data.train.front().n) +
                                                   ", config asks for " + std::to_string(config.patch));

  const InputScaling scaling = InputScaling::for_volume(data.sparse);
  const PatchTensors train_set = to_tensors(data.train, scaling, config.normalization);
  const PatchTensors val_set = to_tensors(data.val, scaling, config.normalization);

  const std::size_t voxels = config.patch * config.patch * config.patch;
  const std::size_t channels = data.train.front().channels;
  InferenceModel model;
  model.patch = config.patch;
  model.channels = channels;
  model.normalization = config.normalization;
  Architecture arch{voxels * channels, config.hidden, voxels * kMetricCount};
  MlpParams params = init_params(arch, config.init_seed);
  AdamConfig adam_config;
  adam_config.learning_rate = config.learning_rate;
  AdamState adam = AdamState::for_params(params, adam_config);
  Rng shuffle_rng(config.shuffle_seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  NalaState state;
  switch (config.mode) {
    case AblationMode::plain: state = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0}; break;
    case AblationMode::svd_reg_fixed:
      state = {config.fixed_lambda, 0.0, 0.0, 0.0, 0.0, config.fixed_lambda, config.fixed_lambda};
      break;
    case AblationMode::svd_reg_nala: state = config.nala; break;
  }

  TrainResult result;
  result.model = model;
  result.model.params = params;
  const bool has_val = !val_set.targets.empty();
  const LossBreakdown initial_val = has_val ? score(params, val_set, state.lambda) : LossBreakdown{};
  const LossBreakdown initial_train = score(params, train_set, state.lambda);
  if (config.mode == AblationMode::svd_reg_nala) state.prev_reg_value = initial_val.reg_term;
  result.history.push_back({{"epoch", 0}, {"lambda", state.lambda}, {"train", loss_json(initial_train)},
                            {"val", has_val ? loss_json(initial_val) : json(nullptr)}});

  std::size_t epoch = 0;
  LossBreakdown epoch_train;

  NalaHooks hooks;
  hooks.validation_size = has_val ? val_set.targets.size() : train_set.targets.size();
  hooks.inner_epochs = config.inner_epochs;
  hooks.inner_epoch = [&](double lambda) {
    shuffle_rng.shuffle(order);
    LossBreakdown acc;
    acc.lambda = lambda;
    const std::size_t in_dim = voxels * channels;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t count = std::min(config.batch, order.size() - start);
      Eigen::MatrixXd x(static_cast<Eigen::Index>(in_dim), static_cast<Eigen::Index>(count));
      for (std::size_t j = 0; j < count; ++j)
        x.col(static_cast<Eigen::Index>(j)) = train_set.inputs.col(static_cast<Eigen::Index>(order[start + j]));
      auto [out, tape] = forward(params, x);
      std::vector<ParamMatrix> preds, gts;
      preds.reserve(count);
      gts.reserve(count);
      for (std::size_t j = 0; j < count; ++j) {
        const std::size_t i = order[start + j];
        preds.push_back(output_matrix(out, static_cast<Eigen::Index>(j), train_set.masks[i]));
        gts.push_back(train_set.targets[i]);
      }
      auto [loss, grads] = batch_loss(preds, gts, lambda);
      if (!std::isfinite(loss.total)) {
        throw Divergence{"training loss became non-finite at epoch " + std::to_string(epoch + 1) + ", step " +
                         std::to_string(adam.step + 1)};
      }
      Eigen::MatrixXd out_grad(out.rows(), out.cols());
      for (std::size_t j = 0; j < count; ++j) {
        const std::size_t i = order[start + j];
        ParamMatrix g = grads[j];
        g.array().colwise() *= train_set.masks[i].array();
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>(
            out_grad.col(static_cast<Eigen::Index>(j)).data(), static_cast<Eigen::Index>(voxels), 3) = g;
      }
      const MlpParams param_grads = backward(params, tape, out_grad);
      try {
        adam_step(params, param_grads, adam);
      } catch (const Error& e) {
        throw Divergence{e.what()};
      }
      const double w = static_cast<double>(count);
      acc.data_term += loss.data_term * w;
      acc.reg_term += loss.reg_term * w;
    }
    const double inv = 1.0 / static_cast<double>(order.size());
    acc.data_term *= inv;
    acc.reg_term *= inv;
    acc.total = acc.data_term + lambda * acc.reg_term;
    epoch_train = acc;
    ++epoch;
  };
  hooks.validate = [&](double lambda) {
    const LossBreakdown val = has_val ? score(params, val_set, lambda) : epoch_train;
    if (!std::isfinite(val.total)) throw Divergence{"validation loss became non-finite at epoch " + std::to_string(epoch)};
    result.history.push_back({{"epoch", epoch}, {"lambda", lambda}, {"train", loss_json(epoch_train)},
                              {"val", has_val ? loss_json(val) : json(nullptr)}});
    return val;
  };
  hooks.on_best = [&](std::size_t, double lambda) {
    result.model.params = params;
    result.best_epoch = epoch;
    result.best_lambda = lambda;
  };

  try {
    result.nala = alternate(hooks, state, config.epochs);
    // Attach the outer-step record to the epoch it closed.
    for (const auto& rec : result.nala.records) {
      if (config.mode == AblationMode::svd_reg_nala) result.history[rec.step + 1]["nala"] = to_json(rec);
    }
  } catch (const Divergence& d) {
    result.diverged = true;
    result.divergence_message = d.message;
  }
  if (config.epochs == 0) result.best_lambda = state.lambda;
  result.steps = adam.step;
  return result;
}

MetricMaps infer(const InferenceModel& model, const DwiVolume& volume, std::size_t stride) {
  if (volume.directions() != model.channels) {
    throw Error(ErrorCode::dimension_mismatch, "model expects " + std::to_string(model.channels) +
                                                   " measurements per voxel, volume has " +
                                                   std::to_string(volume.directions()));
  }
  const std::size_t n = model.patch;
  if (stride == 0) stride = n;
  const Dims& dims = volume.dims;
  if (dims.w < n || dims.h < n || dims.s < n)
    throw Error(ErrorCode::dimension_mismatch, "volume " + to_string(dims) + " is smaller than the patch edge " + std::to_string(n));
  const InputScaling scaling = InputScaling::for_volume(volume);

  auto origins = [&](std::size_t dim) {
    auto o = patch_origins(dim, n, stride);
    if (o.back() + n < dim) o.push_back(dim - n);
    return o;
  };
  const auto ox = origins(dims.w), oy = origins(dims.h), oz = origins(dims.s);
  const std::size_t voxels = n * n * n;
  const std::size_t channels = volume.directions();

  std::vector<double> sum(dims.voxels() * kMetricCount, 0.0);
  std::vector<std::size_t> hits(dims.voxels(), 0);
  std::vector<std::array<std::size_t, 3>> tiles;
  for (auto z : oz)
    for (auto y : oy)
      for (auto x : ox) tiles.push_back({x, y, z});

  constexpr std::size_t chunk = 512;
  for (std::size_t start = 0; start < tiles.size(); start += chunk) {
    const std::size_t count = std::min(chunk, tiles.size() - start);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(voxels * channels), static_cast<Eigen::Index>(count));
    for (std::size_t j = 0; j < count; ++j) {
      const auto& t = tiles[start + j];
      double* col = x.col(static_cast<Eigen::Index>(j)).data();
      for (std::size_t pz = 0; pz < n; ++pz)
        for (std::size_t py = 0; py < n; ++py)
          for (std::size_t px = 0; px < n; ++px) {
            const std::size_t v = dims.index(t[0] + px, t[1] + py, t[2] + pz);
            if (!volume.mask[v]) continue;
            const std::size_t pv = px + n * (py + n * pz);
            double* cell = col + pv * channels;
            for (std::size_t c = 0; c < channels; ++c) cell[c] = volume.at(v, c);
            scaling.apply({cell, channels});
          }
    }
    const Eigen::MatrixXd out = predict(model.params, x);
    for (std::size_t j = 0; j < count; ++j) {
      const auto& t = tiles[start + j];
      const double* col = out.col(static_cast<Eigen::Index>(j)).data();
      for (std::size_t pz = 0; pz < n; ++pz)
        for (std::size_t py = 0; py < n; ++py)
          for (std::size_t px = 0; px < n; ++px) {
            const std::size_t v = dims.index(t[0] + px, t[1] + py, t[2] + pz);
            if (!volume.mask[v]) continue;
            const std::size_t pv = px + n * (py + n * pz);
            for (std::size_t m = 0; m < kMetricCount; ++m) sum[v * kMetricCount + m] += col[pv * kMetricCount + m];
            ++hits[v];
          }
    }
  }

  MetricMaps maps = MetricMaps::zeros(dims, volume.mask);
  for (std::size_t v = 0; v < dims.voxels(); ++v) {
    if (!volume.mask[v] || hits[v] == 0) continue;
    for (std::size_t m = 0; m < kMetricCount; ++m)
      maps.channel(m)[v] = sum[v * kMetricCount + m] / static_cast<double>(hits[v]) * model.normalization.scale(m);
  }
  return maps;
}

EvalReport evaluate_on_test(const InferenceModel& model, const Dataset& data) {
  const MetricMaps pred = infer(model, data.sparse);
  return evaluate(model.normalization.normalize(pred), model.normalization.normalize(data.ground_truth), data.test_region);
}

json to_json(const AblationConfig& c) {
  json modes = json::array();
  for (auto m : c.modes) modes.push_back(to_string(m));
  return {{"data", to_json(c.data)}, {"train", to_json(c.train)}, {"modes", modes}, {"seeds", c.seeds},
          {"lambda_grid", c.lambda_grid}};
}

AblationConfig ablation_config_from_json(const json& j) {
  reject_unknown(j, {"data", "train", "modes", "seeds", "lambda_grid"}, "ablation config");
  AblationConfig c;
  if (j.contains("data")) c.data = data_config_from_json(j.at("data"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  try {
    if (j.contains("modes")) {
      c.modes.clear();
      for (const auto& m : j.at("modes")) c.modes.push_back(parse_mode(m.get<std::string>()));
    }
    read_key(j, "seeds", c.seeds);
    read_key(j, "lambda_grid", c.lambda_grid);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, std::string("ablation config: ") + e.what());
  }
  if (c.modes.empty()) throw Error(ErrorCode::invalid_argument, "ablation needs at least one mode");
  if (c.seeds.empty()) throw Error(ErrorCode::invalid_argument, "ablation needs at least one seed");
  return c;
}

DataConfig seeded_data(const DataConfig& base, std::uint64_t seed) {
  DataConfig d = base;
  d.phantom_seed = hash_key(seed, 1);
  d.noise_seed = hash_key(seed, 2);
  d.split_seed = hash_key(seed, 3);
  return d;
}

TrainConfig seeded_train(const TrainConfig& base, std::uint64_t seed) {
  TrainConfig t = base;
  t.init_seed = hash_key(seed, 4);
  t.shuffle_seed = hash_key(seed, 5);
  return t;
}

AblationResult run_ablation(const AblationConfig& config) {
  AblationResult result;
  for (auto seed : config.seeds) {
    const DataConfig data_cfg = seeded_data(config.data, seed);
    const TensorField field = make_phantom(data_cfg.dims, data_cfg.preset, data_cfg.phantom_seed);
    const Dataset data = prepare_dataset(field, data_cfg, config.train.patch, config.train.stride);
    for (auto mode : config.modes) {
      AblationRun run;
      run.seed = seed;
      run.mode = mode;
      TrainConfig tc = seeded_train(config.train, seed);
      tc.mode = mode;
      try {
        if (mode == AblationMode::svd_reg_fixed && !config.lambda_grid.empty()) {
          // Pick the weight whose best checkpoint has the lowest validation data term.
          double best_score = std::numeric_limits<double>::infinity();
          for (double lambda : config.lambda_grid) {
            tc.fixed_lambda = lambda;
            TrainResult candidate = train(tc, data);
            const double s = data.val.empty() ? 0.0 : score(candidate.model.params, to_tensors(data.val, InputScaling::for_volume(data.sparse), tc.normalization), 0.0).data_term;
            if (s < best_score) {
              best_score = s;
              run.result = std::move(candidate);
              run.lambda = lambda;
            }
          }
        } else {
          run.result = train(tc, data);
          run.lambda = mode == AblationMode::plain ? 0.0 : run.result.best_lambda;
        }
        if (run.result.diverged) {
          run.failed = true;
          run.failure = run.result.divergence_message;
        }
        run.test = evaluate_on_test(run.result.model, data);
      } catch (const Error& e) {
        run.failed = true;
        run.failure_code = e.code();
        run.failure = e.what();
      }
      result.runs.push_back(std::move(run));
    }
  }

  for (auto mode : config.modes) {
    AblationSummaryRow row;
    row.mode = mode;
    std::vector<double> mse, ssim_v, psnr_v;
    for (const auto& r : result.runs) {
      if (r.mode != mode) continue;
      if (r.failed) {
        row.failed = true;
        continue;
      }
      mse.push_back(r.test.all.mse);
      ssim_v.push_back(r.test.all.ssim);
      psnr_v.push_back(r.test.all.psnr);
    }
    row.runs = mse.size();
    row.mse = mean_of(mse);
    row.mse_std = std_of(mse);
    row.ssim = mean_of(ssim_v);
    row.ssim_std = std_of(ssim_v);
    row.psnr = mean_of(psnr_v);
    row.psnr_std = std_of(psnr_v);
    result.summary.push_back(row);
  }
  return result;
}

json to_json(const AblationResult& result) {
  json runs = json::array();
  for (const auto& r : result.runs) {
    json j = {{"seed", r.seed},
              {"mode", to_string(r.mode)},
              {"lambda", r.lambda},
              {"best_epoch", r.result.best_epoch},
              {"steps", r.result.steps},
              {"failed", r.failed}};
    if (r.failed) {
      j["failure"] = r.failure;
      j["failure_code"] = to_string(r.failure_code);
    }
    else j["test"] = to_json(r.test);
    runs.push_back(std::move(j));
  }
  json summary = json::array();
  for (const auto& s : result.summary) {
    summary.push_back({{"model", std::string(1, mode_letter(s.mode))},
                       {"mode", to_string(s.mode)},
                       {"svd_reg", s.mode != AblationMode::plain},
                       {"nala", s.mode == AblationMode::svd_reg_nala},
                       {"runs", s.runs},
                       {"failed", s.failed},
                       {"mse", s.mse},
                       {"mse_std", s.mse_std},
                       {"ssim", s.ssim},
                       {"ssim_std", s.ssim_std},
                       {"psnr", s.psnr},
                       {"psnr_std", s.psnr_std}});
  }
  return {{"runs", runs}, {"summary", summary}};
}

std::string ablation_table(const AblationResult& result) {
  std::ostringstream os;
  os << std::fixed;
  os << "| Model | SVD-Reg | NALA | MSE (x1e-3) | SSIM | PSNR |\n";
  os << "|---|---|---|---|---|---|\n";
  for (const auto& s : result.summary) {
    os << "| (" << mode_letter(s.mode) << ") | " << (s.mode != AblationMode::plain ? "x" : "") << " | "
       << (s.mode == AblationMode::svd_reg_nala ? "x" : "") << " | ";
    if (s.failed) {
      os << "failed | failed | failed |\n";
      continue;
    }
    os.precision(3);
    os << s.mse * 1e3 << " ± " << s.mse_std * 1e3 << " | ";
    os << s.ssim << " ± " << s.ssim_std << " | ";
    os << s.psnr << " ± " << s.psnr_std << " |\n";
  }
  return os.str();
}

}  // namespace aid
