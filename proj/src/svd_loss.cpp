#include "aiddti/svd_loss.hpp"

#include <algorithm>
#include <cmath>

#include "aiddti/core_types.hpp"
#include "aiddti/dti_fit.hpp"

namespace aid {

namespace {

// Orthonormal completion for left vectors whose singular value vanished.
void complete_left(ParamMatrix& left, const std::array<bool, 3>& defined) {
  const Eigen::Index rows = left.rows();
  for (Eigen::Index k = 0; k < 3; ++k) {
    if (defined[static_cast<std::size_t>(k)]) continue;
    Eigen::VectorXd best;
    double best_norm = -1.0;
    for (Eigen::Index e = 0; e < rows; ++e) {
      Eigen::VectorXd cand = Eigen::VectorXd::Unit(rows, e);
      for (Eigen::Index j = 0; j < 3; ++j) {
        if (j == k || (!defined[static_cast<std::size_t>(j)] && j > k)) continue;
        cand -= left.col(j).dot(cand) * left.col(j);
      }
      const double n = cand.norm();
      if (n > best_norm) {
        best_norm = n;
        best = cand;
      }
      if (n > 0.5) break;
    }
    left.col(k) = best_norm > 1e-8 ? Eigen::VectorXd(best / best_norm) : Eigen::VectorXd::Zero(rows);
  }
}

}  // namespace

SingularTriple svd_3col(const ParamMatrix& a) {
  SingularTriple out;
  const Eigen::Matrix3d gram = a.transpose() * a;
  const EigenSystem eig = eigen3_sym({gram(0, 0), gram(1, 1), gram(2, 2), gram(0, 1), gram(0, 2), gram(1, 2)});

  std::array<std::pair<double, Eigen::Vector3d>, 3> pairs;
  for (std::size_t k = 0; k < 3; ++k) {
    const Eigen::Vector3d v(eig.vectors[k][0], eig.vectors[k][1], eig.vectors[k][2]);
    pairs[k] = {(a * v).norm(), v};
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) { return x.first > y.first; });

  out.left = ParamMatrix::Zero(a.rows(), 3);
  std::array<bool, 3> defined{};
  for (std::size_t k = 0; k < 3; ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    out.values(col) = pairs[k].first;
    out.right.col(col) = pairs[k].second;
    if (pairs[k].first > kSingularFloor) {
      out.left.col(col) = a * pairs[k].second / pairs[k].first;
      defined[k] = true;
    }
  }
  if (a.rows() >= 3) complete_left(out.left, defined);
  return out;
}

namespace {

std::pair<LossBreakdown, ParamMatrix> evaluate(const ParamMatrix& pred, const ParamMatrix& gt, double lambda,
                                               bool with_grad) {
  if (pred.rows() != gt.rows())
    throw Error(ErrorCode::dimension_mismatch, "prediction has " + std::to_string(pred.rows()) +
                                                   " rows, ground truth " + std::to_string(gt.rows()));
  const double gt_norm2 = gt.squaredNorm();
  if (!(gt_norm2 > 0.0)) throw Error(ErrorCode::degenerate_patch, "ground-truth patch is identically zero");

  const SingularTriple s_gt = svd_3col(gt);
  const SingularTriple s_pred = svd_3col(pred);
  const double sigma_norm2 = s_gt.values.squaredNorm();
  const Eigen::Vector3d sigma_diff = s_gt.values - s_pred.values;

  LossBreakdown loss;
  loss.lambda = lambda;
  const ParamMatrix residual = gt - pred;
  loss.data_term = residual.squaredNorm() / gt_norm2;
  loss.reg_term = sigma_diff.squaredNorm() / sigma_norm2;
  loss.total = loss.data_term + lambda * loss.reg_term;

  ParamMatrix grad;
  if (with_grad) {
    grad = (-2.0 / gt_norm2) * residual;
    if (lambda != 0.0) {
      for (Eigen::Index k = 0; k < 3; ++k) {
        if (s_pred.values(k) < kSingularFloor && s_gt.values(k) < kSingularFloor) continue;
        const double coeff = lambda * (-2.0 * sigma_diff(k) / sigma_norm2);
        grad.noalias() += coeff * s_pred.left.col(k) * s_pred.right.col(k).transpose();
      }
    }
  }
  return {loss, std::move(grad)};
}

}  // namespace

std::pair<LossBreakdown, ParamMatrix> loss_and_grad(const ParamMatrix& pred, const ParamMatrix& gt, double lambda) {
  return evaluate(pred, gt, lambda, true);
}

LossBreakdown loss_only(const ParamMatrix& pred, const ParamMatrix& gt, double lambda) {
  return evaluate(pred, gt, lambda, false).first;
}

std::pair<LossBreakdown, std::vector<ParamMatrix>> batch_loss(const std::vector<ParamMatrix>& preds,
                                                              const std::vector<ParamMatrix>& gts, double lambda) {
  if (preds.empty()) throw Error(ErrorCode::invalid_argument, "empty batch");
  if (preds.size() != gts.size())
    throw Error(ErrorCode::size_mismatch, "batch has " + std::to_string(preds.size()) + " predictions and " +
                                              std::to_string(gts.size()) + " targets");
  const double inv = 1.0 / static_cast<double>(preds.size());
  LossBreakdown mean;
  mean.lambda = lambda;
  std::vector<ParamMatrix> grads;
  grads.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto [loss, grad] = loss_and_grad(preds[i], gts[i], lambda);
    mean.data_term += loss.data_term;
    mean.reg_term += loss.reg_term;
    grads.push_back(grad * inv);
  }
  mean.data_term *= inv;
  mean.reg_term *= inv;
  mean.total = mean.data_term + lambda * mean.reg_term;
  return {mean, std::move(grads)};
}

}  // namespace aid
