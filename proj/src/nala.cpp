#include "aiddti/nala.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "aiddti/core_types.hpp"

namespace aid {

void NalaState::validate() const {
  if (!(beta >= 0.0 && beta < 1.0)) throw Error(ErrorCode::invalid_argument, "NALA beta must lie in [0, 1)");
  if (!(kappa >= 0.0)) throw Error(ErrorCode::invalid_argument, "NALA kappa must be >= 0");
  if (!(lambda_min <= lambda_max)) throw Error(ErrorCode::invalid_argument, "NALA bounds are inverted");
  if (!(lambda >= lambda_min && lambda <= lambda_max))
    throw Error(ErrorCode::out_of_range, "lambda " + std::to_string(lambda) + " lies outside its bounds");
  if (!std::isfinite(momentum) || !std::isfinite(prev_reg_value))
    throw Error(ErrorCode::non_finite, "NALA momentum or previous regularizer value is not finite");
}

nlohmann::json to_json(const OuterStepRecord& r) {
  return {{"step", r.step},
          {"reg_value", r.reg_value},
          {"reg_delta", r.reg_delta},
          {"momentum", r.momentum},
          {"lambda_before", r.lambda_before},
          {"lambda_after", r.lambda_after},
          {"clamped", r.clamped},
          {"val_data_term", r.val_data_term},
          {"val_total", r.val_total}};
}

double hyper_gradient(double reg_value) {
  if (!std::isfinite(reg_value)) throw Error(ErrorCode::non_finite, "regularizer value is not finite");
  return reg_value;
}

std::pair<NalaState, OuterStepRecord> nala_update(const NalaState& state, double reg_value) {
  const double grad = hyper_gradient(reg_value);
  NalaState next = state;
  OuterStepRecord rec;
  rec.reg_value = reg_value;
  rec.reg_delta = reg_value - state.prev_reg_value;
  next.momentum = state.beta * state.momentum + grad + state.beta * rec.reg_delta;
  const double proposed = state.lambda - state.kappa * next.momentum;
  next.lambda = std::clamp(proposed, state.lambda_min, state.lambda_max);
  next.prev_reg_value = reg_value;
  rec.momentum = next.momentum;
  rec.lambda_before = state.lambda;
  rec.lambda_after = next.lambda;
  rec.clamped = next.lambda != proposed;
  return {next, rec};
}

NalaHistory alternate(const NalaHooks& hooks, NalaState state, std::size_t outer_steps) {
  state.validate();
  if (hooks.validation_size == 0) throw Error(ErrorCode::invalid_argument, "validation set is empty");
  NalaHistory history;
  for (std::size_t t = 0; t < outer_steps; ++t) {
    for (std::size_t e = 0; e < hooks.inner_epochs; ++e) hooks.inner_epoch(state.lambda);
    const LossBreakdown val = hooks.validate(state.lambda);
    if (!history.best_step || val.total < history.best_val_total) {
      history.best_step = t;
      history.best_lambda = state.lambda;
      history.best_val_total = val.total;
      if (hooks.on_best) hooks.on_best(t, state.lambda);
    }
    auto [next, rec] = nala_update(state, val.reg_term);
    rec.step = t;
    rec.val_data_term = val.data_term;
    rec.val_total = val.total;
    history.records.push_back(rec);
    state = next;
  }
  if (!history.best_step) history.best_lambda = state.lambda;
  history.final_state = state;
  return history;
}

}  // namespace aid
