#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aiddti/core_types.hpp"
#include "aiddti/dti_fit.hpp"
#include "aiddti/mlp.hpp"
#include "aiddti/parallel.hpp"
#include "aiddti/phantom.hpp"
#include "aiddti/quality.hpp"
#include "aiddti/render.hpp"
#include "aiddti/sampling.hpp"
#include "aiddti/trainer.hpp"
#include "aiddti/volume_io.hpp"
#include "run_manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace aid::cli {
namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

/// Runtime failures as opposed to bad input.
bool is_runtime(ErrorCode code) {
  return code == ErrorCode::divergence || code == ErrorCode::non_finite || code == ErrorCode::degenerate_patch;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int report(std::string_view code, const std::string& message, int exit_code) {
  std::cerr << "ERROR[" << code << "]: " << one_line(message) << "\n";
  return exit_code;
}

Dims parse_dims(const std::string& text) {
  std::vector<std::size_t> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, part.find('x') != std::string::npos ? 'x' : ',')) {
    try {
      std::size_t used = 0;
      const long n = std::stol(part, &used);
      if (used != part.size() || n <= 0) throw std::invalid_argument(part);
      v.push_back(static_cast<std::size_t>(n));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::invalid_argument, "bad dims '" + text + "' (use N or W,H,S)");
    }
  }
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw Error(ErrorCode::invalid_argument, "bad dims '" + text + "' (use N or W,H,S)");
}

json read_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, path.string() + ": " + e.what());
  }
}

fs::path manifest_path(const std::optional<std::string>& flag, const fs::path& fallback) {
  return flag ? fs::path(*flag) : fallback;
}

std::pair<fs::path, fs::path> checkpoint_files(const fs::path& prefix) {
  std::string s = prefix.string();
  for (std::string_view suffix : {".ckpt.json", ".ckpt.raw"}) {
    if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
      s.resize(s.size() - suffix.size());
      break;
    }
  }
  return {s + ".ckpt.json", s + ".ckpt.raw"};
}

std::string jsonl(const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) out += r.dump() + "\n";
  return out;
}

struct Common {
  std::optional<std::string> manifest;
  std::string dtype = "float32";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--manifest", c.manifest, "Run-manifest path (default next to the outputs)");
  cmd->add_option("--dtype", c.dtype, "Payload precision for written volumes")->check(CLI::IsMember({"float32", "float64"}));
}

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
  Common common;
  std::string dims = "24";
  std::string preset = "mixed";
  std::uint64_t seed = 7;
  std::string out;
  std::optional<std::string> dwi;
  std::size_t directions = 90;
  double bval = 1000.0;
  std::size_t b0 = 1;
  std::uint64_t scheme_seed = 0;
};

int run_phantom(const PhantomArgs& a) {
  RunManifest manifest("phantom");
  const Dims dims = parse_dims(a.dims);
  const Dtype dtype = parse_dtype(a.common.dtype);
  const TensorField field = make_phantom(dims, a.preset, a.seed);
  json config = {{"dims", {dims.w, dims.h, dims.s}}, {"preset", a.preset}, {"seed", a.seed}, {"out", a.out},
                 {"dtype", a.common.dtype}};
  manifest.add_seed("phantom", a.seed);

  std::optional<DwiVolume> dwi;
  if (a.dwi) {
    const GradientScheme scheme = uniform_scheme(a.directions, a.bval, a.b0, a.scheme_seed);
    dwi = simulate_dwi(field, scheme);
    config["dwi"] = {{"out", *a.dwi}, {"directions", a.directions}, {"bval", a.bval}, {"b0", a.b0},
                     {"scheme_seed", a.scheme_seed}};
    manifest.add_seed("scheme", a.scheme_seed);
  }

  VolumeFile vf = to_volume_file(field);
  vf.attributes = {{"kind", "tensor_field"}, {"preset", a.preset}, {"seed", a.seed}};
  write_volume_file(vf, a.out, dtype);
  manifest.add_volume_output(a.out);
  if (dwi) {
    write_volume(*dwi, *a.dwi, dtype);
    write_scheme(dwi->scheme, *a.dwi + ".bval", *a.dwi + ".bvec");
    manifest.add_volume_output(*a.dwi);
    manifest.add_output(*a.dwi + ".bval");
    manifest.add_output(*a.dwi + ".bvec");
  }
  manifest.set_config(config);
  manifest.write(manifest_path(a.common.manifest, a.out + ".manifest.json"));
  return 0;
}

// ---------------------------------------------------------------- noise

struct NoiseArgs {
  Common common;
  std::string in, out;
  double sigma = 0.025;
  std::uint64_t seed = 11;
};

int run_noise(const NoiseArgs& a) {
  RunManifest manifest("noise");
  const Dtype dtype = parse_dtype(a.common.dtype);
  if (!(a.sigma >= 0.0)) throw Error(ErrorCode::invalid_argument, "sigma must be >= 0");
  manifest.add_volume_input(a.in);
  const DwiVolume noisy = add_rician_noise(read_volume(a.in), {a.sigma, a.seed});
  write_volume(noisy, a.out, dtype);
  manifest.add_volume_output(a.out);
  manifest.add_seed("noise", a.seed);
  manifest.set_config({{"in", a.in}, {"out", a.out}, {"sigma", a.sigma}, {"sigma_reference", "mean_masked_b0"},
                       {"seed", a.seed}, {"dtype", a.common.dtype}});
  manifest.write(manifest_path(a.common.manifest, a.out + ".manifest.json"));
  return 0;
}

// ---------------------------------------------------------------- subsample

struct SubsampleArgs {
  Common common;
  std::optional<std::string> in, bval, bvec;
  std::string out;
  std::size_t k = 6;
  std::size_t restarts = 20;
  std::uint64_t seed = 1;
  std::size_t b0_keep = 1;
};

int run_subsample(const SubsampleArgs& a) {
  RunManifest manifest("subsample");
  const Dtype dtype = parse_dtype(a.common.dtype);
  if (a.in.has_value() == (a.bval.has_value() || a.bvec.has_value()))
    throw Error(ErrorCode::invalid_argument, "give either --in VOLUME or both --bval and --bvec");
  if (!a.in && !(a.bval && a.bvec)) throw Error(ErrorCode::invalid_argument, "--bval and --bvec go together");

  std::optional<DwiVolume> volume;
  GradientScheme scheme;
  if (a.in) {
    manifest.add_volume_input(*a.in);
    volume = read_volume(*a.in);
    scheme = volume->scheme;
  } else {
    manifest.add_input(*a.bval);
    manifest.add_input(*a.bvec);
    scheme = read_scheme(*a.bval, *a.bvec);
  }
  const auto b0 = scheme.b0_indices();
  if (a.b0_keep > b0.size()) {
    throw Error(ErrorCode::invalid_argument, "asked to keep " + std::to_string(a.b0_keep) + " b0 measurements, scheme has " +
                                                 std::to_string(b0.size()));
  }
  const SubsamplingResult sel = select_uniform(scheme, a.k, a.restarts, a.seed);

  GradientScheme kept;
  std::vector<std::size_t> keep(b0.begin(), b0.begin() + static_cast<std::ptrdiff_t>(a.b0_keep));
  keep.insert(keep.end(), sel.selected_indices.begin(), sel.selected_indices.end());
  std::sort(keep.begin(), keep.end());
  for (auto i : keep) {
    kept.bvals.push_back(scheme.bvals[i]);
    kept.bvecs.push_back(scheme.bvecs[i]);
  }
  const json selection = {{"selected_indices", sel.selected_indices},
                          {"kept_indices", keep},
                          {"energy", sel.energy},
                          {"energy_trace", sel.energy_trace},
                          {"k", a.k},
                          {"restarts", a.restarts},
                          {"seed", a.seed}};

  std::optional<DwiVolume> sparse;
  if (volume) sparse = apply_subsampling(*volume, sel, a.b0_keep);

  atomic_write(a.out + ".json", selection.dump(2) + "\n");
  write_scheme(kept, a.out + ".bval", a.out + ".bvec");
  manifest.add_output(a.out + ".json");
  manifest.add_output(a.out + ".bval");
  manifest.add_output(a.out + ".bvec");
  if (sparse) {
    write_volume(*sparse, a.out, dtype);
    manifest.add_volume_output(a.out);
  }
  manifest.add_seed("subsample", a.seed);
  manifest.set_config({{"in", a.in ? json(*a.in) : json(nullptr)},
                       {"k", a.k},
                       {"restarts", a.restarts},
                       {"seed", a.seed},
                       {"b0_keep", a.b0_keep},
                       {"out", a.out}});
  manifest.write(manifest_path(a.common.manifest, a.out + ".manifest.json"));
  return 0;
}

// ---------------------------------------------------------------- fit

struct FitArgs {
  Common common;
  std::string in, out;
  std::optional<std::string> bval, bvec;
  double clamp_fraction = 1e-8;
};

int run_fit(const FitArgs& a) {
  RunManifest manifest("fit");
  const Dtype dtype = parse_dtype(a.common.dtype);
  if (a.bval.has_value() != a.bvec.has_value()) throw Error(ErrorCode::invalid_argument, "--bval and --bvec go together");
  manifest.add_volume_input(a.in);
  VolumeFile vf = read_volume_file(a.in);
  if (a.bval) {
    manifest.add_input(*a.bval);
    manifest.add_input(*a.bvec);
    vf.scheme = read_scheme(*a.bval, *a.bvec);
  }
  if (!vf.scheme) throw Error(ErrorCode::parse, "volume header has no scheme; pass --bval and --bvec");
  if (vf.scheme->size() != vf.channels) {
    throw Error(ErrorCode::size_mismatch, "scheme lists " + std::to_string(vf.scheme->size()) + " measurements, volume has " +
                                              std::to_string(vf.channels) + " channels");
  }
  DwiVolume volume{vf.dims, *vf.scheme, std::move(vf.data), std::move(vf.mask)};
  FitOptions options;
  options.clamp_fraction = a.clamp_fraction;
  const FitResult fit = fit_tensor_ols(volume, options);
  const MetricMaps maps = derive_metrics(fit.field);
  const json fit_report = {{"fitted_voxels", fit.report.fitted_voxels},
                           {"clamped_voxels", fit.report.clamped_voxels},
                           {"flagged_voxels", fit.report.flagged_voxels},
                           {"condition_number", fit.report.condition_number},
                           {"residual_rms_mean", fit.report.residual_rms_mean},
                           {"residual_rms_max", fit.report.residual_rms_max}};

  write_metric_maps(maps, a.out, dtype);
  VolumeFile tensor = to_volume_file(fit.field);
  tensor.attributes = {{"kind", "tensor_field"}, {"source", "ols_fit"}};
  write_volume_file(tensor, a.out + "_tensor", dtype);
  atomic_write(a.out + "_fit.json", fit_report.dump(2) + "\n");
  for (std::size_t m = 0; m < kMetricCount; ++m) manifest.add_volume_output(metric_map_path(a.out, static_cast<Metric>(m)));
  manifest.add_volume_output(a.out + "_tensor");
  manifest.add_output(a.out + "_fit.json");
  manifest.set_config({{"in", a.in}, {"out", a.out}, {"clamp_fraction", a.clamp_fraction}, {"dtype", a.common.dtype}});
  manifest.write(manifest_path(a.common.manifest, a.out + ".manifest.json"));
  return 0;
}

// ---------------------------------------------------------------- train / ablate config

/// Flags that override keys of the data and train sections.
struct ExperimentFlags {
  std::optional<std::string> config;
  std::optional<std::string> dims, preset, mode;
  std::optional<std::uint64_t> phantom_seed, noise_seed, split_seed, subsample_seed, init_seed, shuffle_seed;
  std::optional<double> noise, lr, lambda, lambda0, beta, kappa, lambda_min, lambda_max;
  std::optional<std::size_t> epochs, inner_epochs, patch, stride, batch, sparse_directions, dense_directions;
  std::optional<std::vector<std::size_t>> hidden;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON experiment config");
    cmd->add_option("--dims", dims, "Phantom dims, N or W,H,S");
    cmd->add_option("--preset", preset, "Phantom preset");
    cmd->add_option("--phantom-seed", phantom_seed);
    cmd->add_option("--noise", noise, "Rician sigma as a fraction of mean b0");
    cmd->add_option("--noise-seed", noise_seed);
    cmd->add_option("--split-seed", split_seed);
    cmd->add_option("--subsample-seed", subsample_seed);
    cmd->add_option("--sparse-directions", sparse_directions);
    cmd->add_option("--dense-directions", dense_directions);
    cmd->add_option("--epochs", epochs, "Outer steps");
    cmd->add_option("--inner-epochs", inner_epochs);
    cmd->add_option("--patch", patch);
    cmd->add_option("--stride", stride);
    cmd->add_option("--batch", batch);
    cmd->add_option("--lr", lr);
    cmd->add_option("--hidden", hidden, "Hidden layer widths")->delimiter(',');
    cmd->add_option("--lambda", lambda, "Fixed lambda for svd_reg_fixed");
    cmd->add_option("--lambda0", lambda0, "Initial NALA lambda");
    cmd->add_option("--beta", beta, "NALA momentum");
    cmd->add_option("--kappa", kappa, "NALA step size");
    cmd->add_option("--lambda-min", lambda_min);
    cmd->add_option("--lambda-max", lambda_max);
    cmd->add_option("--init-seed", init_seed);
    cmd->add_option("--shuffle-seed", shuffle_seed);
  }

  void apply(DataConfig& d, TrainConfig& t) const {
    if (dims) d.dims = parse_dims(*dims);
    if (preset) d.preset = *preset;
    if (phantom_seed) d.phantom_seed = *phantom_seed;
    if (noise) d.noise_sigma = *noise;
    if (noise_seed) d.noise_seed = *noise_seed;
    if (split_seed) d.split_seed = *split_seed;
    if (subsample_seed) d.subsample_seed = *subsample_seed;
    if (sparse_directions) d.sparse_directions = *sparse_directions;
    if (dense_directions) d.dense_directions = *dense_directions;
    if (epochs) t.epochs = *epochs;
    if (inner_epochs) t.inner_epochs = *inner_epochs;
    if (patch) t.patch = *patch;
    if (stride) t.stride = *stride;
    if (batch) t.batch = *batch;
    if (lr) t.learning_rate = *lr;
    if (hidden) t.hidden = *hidden;
    if (mode) t.mode = parse_mode(*mode);
    if (lambda) t.fixed_lambda = *lambda;
    if (lambda0) t.nala.lambda = *lambda0;
    if (beta) t.nala.beta = *beta;
    if (kappa) t.nala.kappa = *kappa;
    if (lambda_min) t.nala.lambda_min = *lambda_min;
    if (lambda_max) t.nala.lambda_max = *lambda_max;
    if (init_seed) t.init_seed = *init_seed;
    if (shuffle_seed) t.shuffle_seed = *shuffle_seed;
  }
};

// ---------------------------------------------------------------- train

struct TrainArgs {
  Common common;
  ExperimentFlags flags;
  std::optional<std::string> dense;
  std::string out;
};

int run_train(const TrainArgs& a) {
  RunManifest manifest("train");
  DataConfig data;
  TrainConfig train_cfg;
  if (a.flags.config) {
    manifest.add_input(*a.flags.config);
    const json j = read_json_file(*a.flags.config);
    if (!j.is_object()) throw Error(ErrorCode::parse, "train config must be a JSON object");
    for (const auto& [key, value] : j.items())
      if (key != "data" && key != "train") throw Error(ErrorCode::parse, "unknown key '" + key + "' in train config");
    if (j.contains("data")) data = data_config_from_json(j.at("data"));
    if (j.contains("train")) train_cfg = train_config_from_json(j.at("train"));
  }
  a.flags.apply(data, train_cfg);
  train_cfg.validate();

  Dataset dataset;
  if (a.dense) {
    manifest.add_volume_input(*a.dense);
    dataset = prepare_dataset(read_volume(*a.dense), data, train_cfg.patch, train_cfg.stride);
  } else {
    dataset = prepare_dataset(make_phantom(data.dims, data.preset, data.phantom_seed), data, train_cfg.patch,
                              train_cfg.stride);
  }
  const TrainResult result = train(train_cfg, dataset);
  const EvalReport test = dataset.test.empty() ? EvalReport{} : evaluate_on_test(result.model, dataset);

  const fs::path out(a.out);
  const fs::path model = out / "model";
  json summary = {{"best_epoch", result.best_epoch},
                  {"best_lambda", result.best_lambda},
                  {"steps", result.steps},
                  {"diverged", result.diverged},
                  {"patches", {{"train", dataset.train.size()}, {"val", dataset.val.size()}, {"test", dataset.test.size()}}},
                  {"selected_indices", dataset.selection.selected_indices},
                  {"test", dataset.test.empty() ? json(nullptr) : to_json(test)}};
  if (result.diverged) summary["divergence"] = result.divergence_message;

  write_checkpoint(result.model.to_checkpoint({{"mode", to_string(train_cfg.mode)}, {"best_epoch", result.best_epoch}}),
                   model);
  atomic_write(out / "history.jsonl", jsonl(result.history));
  atomic_write(out / "summary.json", summary.dump(2) + "\n");
  const auto [ckpt_json, ckpt_raw] = checkpoint_files(model);
  manifest.add_output(ckpt_json);
  manifest.add_output(ckpt_raw);
  manifest.add_output(out / "history.jsonl");
  manifest.add_output(out / "summary.json");
  manifest.set_config({{"data", to_json(data)}, {"train", to_json(train_cfg)},
                       {"dense", a.dense ? json(*a.dense) : json(nullptr)}, {"threads", thread_count()}});
  manifest.add_seed("phantom", data.phantom_seed);
  manifest.add_seed("noise", data.noise_seed);
  manifest.add_seed("split", data.split_seed);
  manifest.add_seed("subsample", data.subsample_seed);
  manifest.add_seed("init", train_cfg.init_seed);
  manifest.add_seed("shuffle", train_cfg.shuffle_seed);
  manifest.write(manifest_path(a.common.manifest, out / "manifest.json"));
  if (result.diverged) return report(to_string(ErrorCode::divergence), result.divergence_message, kExitRuntime);
  return 0;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  Common common;
  std::string model, in, out;
  std::size_t stride = 0;
};

int run_infer(const InferArgs& a) {
  RunManifest manifest("infer");
  const Dtype dtype = parse_dtype(a.common.dtype);
  const auto [ckpt_json, ckpt_raw] = checkpoint_files(a.model);
  manifest.add_input(ckpt_json);
  manifest.add_input(ckpt_raw);
  manifest.add_volume_input(a.in);
  const InferenceModel model = InferenceModel::from_checkpoint(read_checkpoint(a.model));
  const MetricMaps maps = infer(model, read_volume(a.in), a.stride);
  write_metric_maps(maps, a.out, dtype);
  for (std::size_t m = 0; m < kMetricCount; ++m) manifest.add_volume_output(metric_map_path(a.out, static_cast<Metric>(m)));
  manifest.set_config({{"model", a.model}, {"in", a.in}, {"out", a.out}, {"stride", a.stride ? a.stride : model.patch}});
  manifest.write(manifest_path(a.common.manifest, a.out + ".manifest.json"));
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  Common common;
  std::string pred, gt, out;
  std::optional<std::string> mask, table, label;
  std::optional<double> fa_scale, md_scale, ad_scale;
};

int run_eval(const EvalArgs& a) {
  RunManifest manifest("eval");
  NormalizationSpec norm;
  if (a.fa_scale) norm.fa = *a.fa_scale;
  if (a.md_scale) norm.md = *a.md_scale;
  if (a.ad_scale) norm.ad = *a.ad_scale;
  norm.validate();
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    manifest.add_volume_input(metric_map_path(a.pred, static_cast<Metric>(m)));
    manifest.add_volume_input(metric_map_path(a.gt, static_cast<Metric>(m)));
  }
  const MetricMaps pred = read_metric_maps(a.pred);
  const MetricMaps gt = read_metric_maps(a.gt);
  if (!(pred.dims == gt.dims))
    throw Error(ErrorCode::dimension_mismatch, "prediction " + to_string(pred.dims) + " vs ground truth " + to_string(gt.dims));
  Mask mask = gt.mask;
  if (a.mask) {
    manifest.add_volume_input(*a.mask);
    const VolumeFile mv = read_volume_file(*a.mask);
    if (!(mv.dims == gt.dims))
      throw Error(ErrorCode::dimension_mismatch, "mask " + to_string(mv.dims) + " vs maps " + to_string(gt.dims));
    mask = mv.mask;
  }
  const EvalReport rep = evaluate(norm.normalize(pred), norm.normalize(gt), mask);
  atomic_write(a.out, to_json(rep).dump(2) + "\n");
  manifest.add_output(a.out);
  if (a.table) {
    atomic_write(*a.table, markdown_table({{a.label.value_or("pred"), rep}}));
    manifest.add_output(*a.table);
  }
  manifest.set_config({{"pred", a.pred},
                       {"gt", a.gt},
                       {"mask", a.mask ? json(*a.mask) : json(nullptr)},
                       {"normalization", {{"fa", norm.fa}, {"md", norm.md}, {"ad", norm.ad}}}});
  manifest.write(manifest_path(a.common.manifest, a.out + ".manifest.json"));
  return 0;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  Common common;
  ExperimentFlags flags;
  std::optional<std::vector<std::string>> modes;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::vector<double>> lambda_grid;
  std::string out;
};

int run_ablate(const AblateArgs& a) {
  RunManifest manifest("ablate");
  AblationConfig cfg;
  if (a.flags.config) {
    manifest.add_input(*a.flags.config);
    cfg = ablation_config_from_json(read_json_file(*a.flags.config));
  }
  if (a.flags.mode) throw Error(ErrorCode::invalid_argument, "ablate takes --modes, not --mode");
  a.flags.apply(cfg.data, cfg.train);
  if (a.modes) {
    cfg.modes.clear();
    for (const auto& m : *a.modes) cfg.modes.push_back(parse_mode(m));
  }
  if (a.seeds) cfg.seeds = *a.seeds;
  if (a.lambda_grid) cfg.lambda_grid = *a.lambda_grid;
  if (cfg.modes.empty() || cfg.seeds.empty()) throw Error(ErrorCode::invalid_argument, "need at least one mode and one seed");
  for (auto m : cfg.modes) {
    TrainConfig probe = cfg.train;
    probe.mode = m;
    probe.validate();
  }

  const AblationResult result = run_ablation(cfg);
  const fs::path out(a.out);
  std::vector<fs::path> written;
  for (const auto& run : result.runs) {
    const fs::path h = out / "history" / ("seed" + std::to_string(run.seed) + "_" + std::string(to_string(run.mode)) + ".jsonl");
    atomic_write(h, jsonl(run.result.history));
    written.push_back(h);
  }
  json report_json = to_json(result);
  report_json["config"] = to_json(cfg);
  std::string table = ablation_table(result);
  for (const auto& run : result.runs)
    if (run.failed)
      table += "\nfailed: seed " + std::to_string(run.seed) + " mode " + std::string(to_string(run.mode)) + ": " +
               one_line(run.failure) + "\n";
  atomic_write(out / "report.json", report_json.dump(2) + "\n");
  atomic_write(out / "table.md", table);
  written.push_back(out / "report.json");
  written.push_back(out / "table.md");
  for (const auto& p : written) manifest.add_output(p);
  manifest.set_config({{"ablation", to_json(cfg)}, {"threads", thread_count()}});
  for (auto s : cfg.seeds) manifest.add_seed("replicate_" + std::to_string(s), s);
  manifest.write(manifest_path(a.common.manifest, out / "manifest.json"));
  std::cout << table;

  for (const auto& run : result.runs)
    if (run.failed) return report(to_string(run.failure_code), "ablation incomplete, see table.md", kExitRuntime);
  return 0;
}

// ---------------------------------------------------------------- render

struct RenderArgs {
  Common common;
  std::string in, out, axis = "z";
  std::size_t slice = 0;
  std::size_t channel = 0;
  std::optional<double> range;
  std::optional<std::string> reference, residual;
};

int run_render(const RenderArgs& a) {
  RunManifest manifest("render");
  if (a.reference.has_value() != a.residual.has_value())
    throw Error(ErrorCode::invalid_argument, "--reference and --residual go together");
  const Axis axis = parse_axis(a.axis);
  manifest.add_volume_input(a.in);
  const VolumeFile vf = read_volume_file(a.in);
  if (a.channel >= vf.channels) {
    throw Error(ErrorCode::out_of_range, "channel " + std::to_string(a.channel) + " but volume has " +
                                             std::to_string(vf.channels));
  }
  const std::size_t n = vf.dims.voxels();
  const std::span<const double> channel(vf.data.data() + a.channel * n, n);
  const Image2D img = extract_slice(channel, vf.dims, axis, a.slice);

  double range = 0.0;
  if (a.range) {
    range = *a.range;
  } else {
    for (std::size_t v = 0; v < n; ++v)
      if (vf.mask[v]) range = std::max(range, channel[v]);
    if (!(range > 0.0)) range = 1.0;
  }

  std::optional<Image2D> resid;
  if (a.reference) {
    manifest.add_volume_input(*a.reference);
    const VolumeFile ref = read_volume_file(*a.reference);
    if (!(ref.dims == vf.dims) || a.channel >= ref.channels)
      throw Error(ErrorCode::dimension_mismatch, "reference volume does not match " + to_string(vf.dims));
    const std::span<const double> rc(ref.data.data() + a.channel * n, n);
    resid = abs_difference(img, extract_slice(rc, ref.dims, axis, a.slice));
  }

  atomic_write(a.out, encode_pgm16(img, range));
  manifest.add_output(a.out);
  if (resid) {
    atomic_write(*a.residual, encode_pgm16(*resid, range));
    manifest.add_output(*a.residual);
  }
  manifest.set_config({{"in", a.in}, {"axis", a.axis}, {"slice", a.slice}, {"channel", a.channel}, {"data_range", range},
                       {"reference", a.reference ? json(*a.reference) : json(nullptr)}});
  manifest.write(manifest_path(a.common.manifest, a.out + ".manifest.json"));
  return 0;
}

}  // namespace
}  // namespace aid::cli

int main(int argc, char** argv) {
  using namespace aid::cli;
  CLI::App app{"Sparse-measurement DTI metric estimation with SVD-regularized learning"};
  app.require_subcommand(1);
  std::optional<std::size_t> threads;
  app.add_option("--threads", threads, "Worker threads for per-voxel work (default $AIDDTI_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  PhantomArgs phantom;
  auto* c_phantom = app.add_subcommand("phantom", "Generate a synthetic tensor-field phantom");
  add_common(c_phantom, phantom.common);
  c_phantom->add_option("--dims", phantom.dims, "N or W,H,S");
  c_phantom->add_option("--preset", phantom.preset, "iso-only | fiber-x | mixed");
  c_phantom->add_option("--seed", phantom.seed);
  c_phantom->add_option("--out", phantom.out, "Tensor-field volume prefix")->required();
  c_phantom->add_option("--dwi", phantom.dwi, "Also simulate a noiseless DWI volume here");
  c_phantom->add_option("--directions", phantom.directions, "Diffusion-weighted directions for --dwi");
  c_phantom->add_option("--bval", phantom.bval);
  c_phantom->add_option("--b0", phantom.b0, "Number of b0 measurements");
  c_phantom->add_option("--scheme-seed", phantom.scheme_seed, "Rotation of the direction set (0 = none)");

  NoiseArgs noise;
  auto* c_noise = app.add_subcommand("noise", "Add Rician noise to a DWI volume");
  add_common(c_noise, noise.common);
  c_noise->add_option("--in", noise.in)->required();
  c_noise->add_option("--out", noise.out)->required();
  c_noise->add_option("--sigma", noise.sigma, "Fraction of the mean masked b0");
  c_noise->add_option("--seed", noise.seed);

  SubsampleArgs sub;
  auto* c_sub = app.add_subcommand("subsample", "Pick a near-uniform subset of gradient directions");
  add_common(c_sub, sub.common);
  c_sub->add_option("--in", sub.in, "DWI volume (scheme from its header)");
  c_sub->add_option("--bval", sub.bval);
  c_sub->add_option("--bvec", sub.bvec);
  c_sub->add_option("--out", sub.out, "Output prefix")->required();
  c_sub->add_option("-k,--directions", sub.k);
  c_sub->add_option("--restarts", sub.restarts);
  c_sub->add_option("--seed", sub.seed);
  c_sub->add_option("--b0-keep", sub.b0_keep);

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Least-squares tensor fit and FA/MD/AD maps");
  add_common(c_fit, fit.common);
  c_fit->add_option("--in", fit.in)->required();
  c_fit->add_option("--out", fit.out, "Output prefix")->required();
  c_fit->add_option("--bval", fit.bval);
  c_fit->add_option("--bvec", fit.bvec);
  c_fit->add_option("--clamp-fraction", fit.clamp_fraction);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the patch network on a synthetic or supplied dense volume");
  add_common(c_train, tr.common);
  tr.flags.add_to(c_train);
  c_train->add_option("--mode", tr.flags.mode, "plain | svd_reg_fixed | svd_reg_nala (or A|B|C)");
  c_train->add_option("--dense", tr.dense, "Dense noiseless DWI volume instead of a generated phantom");
  c_train->add_option("--out", tr.out, "Output directory")->required();

  InferArgs inf;
  auto* c_infer = app.add_subcommand("infer", "Predict metric maps from a sparse DWI volume");
  add_common(c_infer, inf.common);
  c_infer->add_option("--model", inf.model, "Checkpoint prefix")->required();
  c_infer->add_option("--in", inf.in)->required();
  c_infer->add_option("--out", inf.out, "Output prefix")->required();
  c_infer->add_option("--stride", inf.stride, "Tiling stride (0 = patch size)");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Compare predicted and reference metric maps");
  add_common(c_eval, ev.common);
  c_eval->add_option("--pred", ev.pred, "Prediction prefix")->required();
  c_eval->add_option("--gt", ev.gt, "Reference prefix")->required();
  c_eval->add_option("--mask", ev.mask, "Volume whose mask to use (default: reference mask)");
  c_eval->add_option("--out", ev.out, "Report JSON")->required();
  c_eval->add_option("--table", ev.table, "Markdown table output");
  c_eval->add_option("--label", ev.label, "Row label in the table");
  c_eval->add_option("--fa-scale", ev.fa_scale);
  c_eval->add_option("--md-scale", ev.md_scale);
  c_eval->add_option("--ad-scale", ev.ad_scale);

  AblateArgs ab;
  auto* c_ablate = app.add_subcommand("ablate", "Train modes A/B/C on shared seeded data and compare");
  add_common(c_ablate, ab.common);
  ab.flags.add_to(c_ablate);
  c_ablate->add_option("--modes", ab.modes, "Subset of A,B,C")->delimiter(',');
  c_ablate->add_option("--seeds", ab.seeds)->delimiter(',');
  c_ablate->add_option("--lambda-grid", ab.lambda_grid, "Candidate fixed lambdas for mode B")->delimiter(',');
  c_ablate->add_option("--out", ab.out, "Output directory")->required();

  RenderArgs rd;
  auto* c_render = app.add_subcommand("render", "Write a slice as a 16-bit PGM");
  add_common(c_render, rd.common);
  c_render->add_option("--in", rd.in)->required();
  c_render->add_option("--out", rd.out, "PGM path")->required();
  c_render->add_option("--slice", rd.slice)->required();
  c_render->add_option("--axis", rd.axis, "x | y | z");
  c_render->add_option("--channel", rd.channel);
  c_render->add_option("--range", rd.range, "Intensity mapped to white (default: masked max)");
  c_render->add_option("--reference", rd.reference, "Volume for the residual map");
  c_render->add_option("--residual", rd.residual, "Residual PGM path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ERROR[usage]: " << one_line(e.what()) << "\n" << app.help();
    return kExitValidation;
  }

  try {
    if (threads) aid::set_thread_count(*threads);
    if (c_phantom->parsed()) return run_phantom(phantom);
    if (c_noise->parsed()) return run_noise(noise);
    if (c_sub->parsed()) return run_subsample(sub);
    if (c_fit->parsed()) return run_fit(fit);
    if (c_train->parsed()) return run_train(tr);
    if (c_infer->parsed()) return run_infer(inf);
    if (c_eval->parsed()) return run_eval(ev);
    if (c_ablate->parsed()) return run_ablate(ab);
    if (c_render->parsed()) return run_render(rd);
  } catch (const aid::Error& e) {
    return report(aid::to_string(e.code()), e.what(), is_runtime(e.code()) ? kExitRuntime : kExitValidation);
  } catch (const std::exception& e) {
    return report("internal", e.what(), kExitRuntime);
  }
  return kExitValidation;
}
