#include <doctest.h>

#include <cmath>
#include <set>

#include "aiddti/core_types.hpp"
#include "aiddti/phantom.hpp"
#include "aiddti/trainer.hpp"

using namespace aid;

namespace {

DataConfig small_data(Dims dims = {10, 10, 12}) {
  DataConfig d;
  d.dims = dims;
  d.dense_directions = 30;
  d.restarts = 2;
  d.noise_sigma = 0.0;
  return d;
}

TrainConfig small_train(AblationMode mode) {
  TrainConfig t;
  t.hidden = {16};
  t.epochs = 3;
  t.batch = 16;
  t.stride = 2;
  t.mode = mode;
  return t;
}

Dataset small_dataset(const DataConfig& d, std::size_t stride = 2) {
  return prepare_dataset(make_phantom(d.dims, d.preset, d.phantom_seed), d, 3, stride);
}

const Dataset& shared_dataset() {
  static const Dataset d = small_dataset(small_data());
  return d;
}

bool same_params(const MlpParams& a, const MlpParams& b) {
  for (std::size_t l = 0; l < a.weights.size(); ++l)
    if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
  return true;
}

/// Slabs used by a set of patches.
std::set<std::size_t> slabs_of(const std::vector<Patch>& patches, std::size_t slab) {
  std::set<std::size_t> s;
  for (const auto& p : patches) s.insert(p.origin[2] / slab);
  return s;
}

}  // namespace

TEST_CASE("modes parse from letters and names") {
  CHECK(parse_mode("A") == AblationMode::plain);
  CHECK(parse_mode("svd_reg_fixed") == AblationMode::svd_reg_fixed);
  CHECK(parse_mode("C") == AblationMode::svd_reg_nala);
  CHECK(mode_letter(AblationMode::svd_reg_fixed) == 'B');
  CHECK_THROWS_AS(parse_mode("D"), Error);
}

TEST_CASE("configs round trip through JSON and reject unknown keys") {
  TrainConfig t = small_train(AblationMode::svd_reg_fixed);
  t.fixed_lambda = 0.25;
  const TrainConfig back = train_config_from_json(to_json(t));
  CHECK(back.fixed_lambda == 0.25);
  CHECK(back.hidden == t.hidden);
  CHECK(back.mode == t.mode);
  const DataConfig d = data_config_from_json(to_json(small_data()));
  CHECK(d.dims == Dims{10, 10, 12});
  CHECK(d.dense_directions == 30);
  try {
    (void)train_config_from_json({{"epochz", 3}});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::parse);
    CHECK(std::string(e.what()).find("epochz") != std::string::npos);
  }
}

TEST_CASE("a split of (1, 0, 0) puts every patch in training") {
  DataConfig d = small_data();
  d.split = {1.0, 0.0, 0.0};
  const Dataset ds = small_dataset(d);
  CHECK_FALSE(ds.train.empty());
  CHECK(ds.val.empty());
  CHECK(ds.test.empty());
}

TEST_CASE("splits are disjoint slabs and deterministic") {
  const DataConfig d = small_data({10, 10, 24});
  const Dataset a = small_dataset(d), b = small_dataset(d);
  CHECK(a.slab == 6);
  REQUIRE(a.slab_split.size() == 4);
  CHECK(std::count(a.slab_split.begin(), a.slab_split.end(), 0) == 2);
  CHECK(std::count(a.slab_split.begin(), a.slab_split.end(), 1) == 1);
  CHECK(std::count(a.slab_split.begin(), a.slab_split.end(), 2) == 1);
  CHECK(a.slab_split == b.slab_split);
  CHECK(a.train.size() == b.train.size());

  const auto tr = slabs_of(a.train, a.slab), va = slabs_of(a.val, a.slab), te = slabs_of(a.test, a.slab);
  for (auto s : tr) CHECK(a.slab_split[s] == 0);
  for (auto s : va) CHECK(a.slab_split[s] == 1);
  for (auto s : te) CHECK(a.slab_split[s] == 2);
  for (const auto& p : a.train) CHECK(p.origin[2] / a.slab == (p.origin[2] + 2) / a.slab);
  for (std::size_t v = 0; v < a.test_region.size(); ++v) CHECK(!(a.test_region[v] && a.train_region[v]));
}

TEST_CASE("split fractions must sum to one") {
  DataConfig d = small_data();
  d.split = {0.5, 0.5, 0.5};
  try {
    (void)small_dataset(d);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_argument);
    CHECK(std::string(e.what()).find("sum to 1") != std::string::npos);
  }
}

TEST_CASE("the regularizer at weight zero changes nothing") {
  const Dataset& ds = shared_dataset();
  TrainConfig b = small_train(AblationMode::svd_reg_fixed);
  b.fixed_lambda = 0.0;
  const TrainResult ra = train(small_train(AblationMode::plain), ds);
  const TrainResult rb = train(b, ds);
  CHECK(same_params(ra.model.params, rb.model.params));
  CHECK(ra.best_epoch == rb.best_epoch);
  REQUIRE(ra.history.size() == rb.history.size());
  for (std::size_t e = 0; e < ra.history.size(); ++e)
    CHECK(ra.history[e].at("train").at("data_term") == rb.history[e].at("train").at("data_term"));
}

TEST_CASE("NALA with zero step size follows fixed-weight training") {
  const Dataset& ds = shared_dataset();
  TrainConfig b = small_train(AblationMode::svd_reg_fixed);
  b.fixed_lambda = 0.3;
  TrainConfig c = small_train(AblationMode::svd_reg_nala);
  c.nala.lambda = 0.3;
  c.nala.kappa = 0.0;
  const TrainResult rb = train(b, ds), rc = train(c, ds);
  CHECK(same_params(rb.model.params, rc.model.params));
  for (std::size_t e = 1; e < rc.history.size(); ++e) {
    CHECK(rc.history[e].at("lambda") == 0.3);
    CHECK(rc.history[e].at("val").at("total") == rb.history[e].at("val").at("total"));
    CHECK(rc.history[e].contains("nala"));
  }
}

TEST_CASE("training reduces the validation loss on noiseless data") {
  TrainConfig t = small_train(AblationMode::plain);
  t.epochs = 8;
  t.learning_rate = 3e-3;
  const TrainResult r = train(t, shared_dataset());
  CHECK_FALSE(r.diverged);
  CHECK(r.history.size() == 9);
  const double first = r.history.front().at("val").at("data_term").get<double>();
  const double best = r.history.at(r.best_epoch).at("val").at("data_term").get<double>();
  CHECK(best < 0.5 * first);
  CHECK(r.steps > 0);
}

TEST_CASE("training validates its inputs") {
  Dataset ds = shared_dataset();
  TrainConfig t = small_train(AblationMode::svd_reg_nala);
  t.patch = 5;
  CHECK_THROWS_AS(train(t, ds), Error);
  ds.val.clear();
  try {
    (void)train(small_train(AblationMode::svd_reg_nala), ds);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_argument);
  }
}

TEST_CASE("inference zeroes masked-out voxels and stitches constants exactly") {
  const Dataset& ds = shared_dataset();
  InferenceModel m;
  m.patch = 3;
  m.channels = ds.sparse.directions();
  m.params = init_params(Architecture{27 * m.channels, {4}, 27 * 3}, 1);
  for (auto& w : m.params.weights) w.setZero();
  m.params.biases.back().setConstant(0.5);
  for (std::size_t stride : {1, 2, 3}) {
    const MetricMaps out = infer(m, ds.sparse, stride);
    for (std::size_t v = 0; v < out.mask.size(); ++v) {
      if (ds.sparse.mask[v]) {
        CHECK(out.fa[v] == 0.5);
        CHECK(std::abs(out.md[v] - 0.5 * 3e-3) < 1e-18);
      } else {
        CHECK(out.fa[v] == 0.0);
        CHECK(out.ad[v] == 0.0);
      }
    }
  }
}

TEST_CASE("inference rejects a volume with the wrong number of measurements") {
  InferenceModel m;
  m.patch = 3;
  m.channels = 9;
  m.params = init_params(Architecture{27 * 9, {}, 27 * 3}, 1);
  try {
    (void)infer(m, shared_dataset().sparse);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::dimension_mismatch);
    const std::string msg = e.what();
    CHECK(msg.find('9') != std::string::npos);
    CHECK(msg.find('7') != std::string::npos);
  }
}

TEST_CASE("training and inference feed channels in the same order") {
  const Dataset& ds = shared_dataset();
  const std::size_t c = ds.sparse.directions();
  const std::size_t probe = 3;
  InferenceModel m;
  m.patch = 3;
  m.channels = c;
  // FA of each voxel echoes its own scaled measurement `probe`.
  m.params.weights = {Eigen::MatrixXd::Zero(27 * 3, 27 * c)};
  m.params.biases = {Eigen::VectorXd::Zero(27 * 3)};
  for (std::size_t v = 0; v < 27; ++v) m.params.weights[0](v * 3, v * c + probe) = 1.0;

  const InputScaling scaling = InputScaling::for_volume(ds.sparse);
  const MetricMaps out = infer(m, ds.sparse, 1);
  for (std::size_t v = 0; v < out.mask.size(); ++v) {
    if (!ds.sparse.mask[v]) continue;
    std::vector<double> cell(c);
    for (std::size_t k = 0; k < c; ++k) cell[k] = ds.sparse.at(v, k);
    scaling.apply(cell);
    CHECK(out.fa[v] == doctest::Approx(cell[probe]).epsilon(1e-12));
  }

  const Patch& p = ds.train.front();
  std::vector<double> flat(p.signal.size());
  fill_input(p, scaling, flat.data());
  for (std::size_t v = 0; v < p.voxels(); ++v) {
    if (!p.mask[v]) continue;
    const std::size_t x = p.origin[0] + v % 3, y = p.origin[1] + (v / 3) % 3, z = p.origin[2] + v / 9;
    const std::size_t gv = ds.sparse.dims.index(x, y, z);
    std::vector<double> cell(c);
    for (std::size_t k = 0; k < c; ++k) cell[k] = ds.sparse.at(gv, k);
    scaling.apply(cell);
    for (std::size_t k = 0; k < c; ++k) CHECK(flat[v * c + k] == cell[k]);
  }
}

TEST_CASE("input scaling divides by the voxel b0") {
  InputScaling s;
  s.b0_channels = {0};
  s.b0_scale = 2.0;
  std::vector<double> cell{4.0, 2.0, 1.0};
  s.apply(cell);
  CHECK(cell == std::vector<double>{2.0, 0.5, 0.25});
  std::vector<double> dead{0.0, 3.0, 1.0};
  s.apply(dead);
  CHECK(dead == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("normalization round trips") {
  MetricMaps m = MetricMaps::zeros({2, 2, 1}, Mask(4, 1));
  m.fa = {0.1, 0.2, 0.3, 0.9};
  m.md = {1e-3, 2e-3, 0.5e-3, 0.7e-3};
  m.ad = {1.5e-3, 2.5e-3, 0.8e-3, 1.7e-3};
  const NormalizationSpec n;
  const MetricMaps norm = n.normalize(m);
  CHECK(norm.md[1] == doctest::Approx(2.0 / 3.0));
  const MetricMaps back = n.denormalize(norm);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back.fa[i] == doctest::Approx(m.fa[i]).epsilon(1e-15));
    CHECK(back.md[i] == doctest::Approx(m.md[i]).epsilon(1e-15));
    CHECK(back.ad[i] == doctest::Approx(m.ad[i]).epsilon(1e-15));
  }
}

TEST_CASE("model checkpoints carry what inference needs") {
  InferenceModel m;
  m.patch = 3;
  m.channels = 7;
  m.normalization.md = 2e-3;
  m.params = init_params(Architecture{27 * 7, {5}, 27 * 3}, 4);
  const InferenceModel back = InferenceModel::from_checkpoint(m.to_checkpoint());
  CHECK(back.patch == 3);
  CHECK(back.channels == 7);
  CHECK(back.normalization.md == 2e-3);
  CHECK(same_params(back.params, m.params));

  Checkpoint bad = m.to_checkpoint();
  bad.meta["channels"] = 8;
  CHECK_THROWS_AS(InferenceModel::from_checkpoint(bad), Error);
}

TEST_CASE("replicate seeds change the data but not the protocol") {
  const DataConfig base = small_data();
  const DataConfig a = seeded_data(base, 1), b = seeded_data(base, 2);
  CHECK(a.phantom_seed != b.phantom_seed);
  CHECK(a.noise_seed != b.noise_seed);
  CHECK(a.dims == base.dims);
  CHECK(a.noise_sigma == base.noise_sigma);
  CHECK(seeded_data(base, 1).split_seed == a.split_seed);
  CHECK(seeded_train(small_train(AblationMode::plain), 1).init_seed !=
        seeded_train(small_train(AblationMode::plain), 2).init_seed);
}

TEST_CASE("a one-mode ablation produces one summary row") {
  AblationConfig c;
  c.data = small_data({12, 12, 24});
  c.train = small_train(AblationMode::plain);
  c.train.epochs = 2;
  c.modes = {AblationMode::plain};
  c.seeds = {1};
  const AblationResult r = run_ablation(c);
  REQUIRE(r.summary.size() == 1);
  CHECK(r.runs.size() == 1);
  CHECK_FALSE(r.summary[0].failed);
  CHECK(r.runs[0].failure.empty());
  const std::string table = ablation_table(r);
  CHECK(table.find("| Model | SVD-Reg | NALA |") != std::string::npos);
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);
  const auto back = ablation_config_from_json(to_json(c));
  CHECK(back.seeds == c.seeds);
}
