#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aiddti/svd_loss.hpp"

namespace aid {

/// Outer-loop state for the regularization weight.
struct NalaState {
  double lambda = 0.1;
  double momentum = 0.0;
  /// R(theta_t) from the previous outer step.
  double prev_reg_value = 0.0;
  double beta = 0.9;
  double kappa = 1e-3;
  double lambda_min = 0.0;
  double lambda_max = 10.0;

  void validate() const;
};

struct OuterStepRecord {
  std::size_t step = 0;
  double reg_value = 0.0;
  double reg_delta = 0.0;
  double momentum = 0.0;
  double lambda_before = 0.0;
  double lambda_after = 0.0;
  bool clamped = false;
  double val_data_term = 0.0;
  double val_total = 0.0;
};

nlohmann::json to_json(const OuterStepRecord& r);

/// d Loss / d lambda with theta frozen; the loss is linear in lambda so this is R itself.
double hyper_gradient(double reg_value);

/// m' = beta m + R + beta (R - R_prev);  lambda' = clamp(lambda - kappa m', bounds).
/// Throws on non-finite R and leaves the input state untouched.
std::pair<NalaState, OuterStepRecord> nala_update(const NalaState& state, double reg_value);

/// Callbacks the alternating loop drives. `inner_epoch` runs the inner
/// optimizer at a fixed lambda; `validate` scores the current network on the
/// validation split at that lambda; `on_best` fires whenever the validation
/// total improves, so the caller can snapshot the weights.
struct NalaHooks {
  std::size_t validation_size = 0;
  std::size_t inner_epochs = 1;
  std::function<void(double lambda)> inner_epoch;
  std::function<LossBreakdown(double lambda)> validate;
  std::function<void(std::size_t step, double lambda)> on_best;
};

struct NalaHistory {
  std::vector<OuterStepRecord> records;
  NalaState final_state;
  std::optional<std::size_t> best_step;
  double best_lambda = 0.0;
  double best_val_total = 0.0;
};

/// Alternates inner training at lambda_t with a validation-driven update of
/// lambda, for `outer_steps` rounds. Keeps the lambda whose network scored the
/// lowest validation total.
NalaHistory alternate(const NalaHooks& hooks, NalaState state, std::size_t outer_steps);

}  // namespace aid
