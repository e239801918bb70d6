#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace aid {

/// One patch's metric maps, one voxel per row, columns (FA, MD, AD).
using ParamMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// Thin SVD of an (n x 3) matrix. Singular values descend; `right` holds
/// v_k as columns and `left` holds u_k as columns. Left vectors of
/// vanishing singular values are completed to an orthonormal set.
struct SingularTriple {
  Eigen::Vector3d values = Eigen::Vector3d::Zero();
  Eigen::Matrix3d right = Eigen::Matrix3d::Identity();
  ParamMatrix left;
};

/// Singular values below this are treated as zero.
inline constexpr double kSingularFloor = 1e-12;

/// Via the eigensystem of the 3x3 Gram matrix A^T A; sigma_k = |A v_k| and
/// u_k = A v_k / sigma_k.
SingularTriple svd_3col(const ParamMatrix& a);

struct LossBreakdown {
  double data_term = 0.0;
  double reg_term = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

/// data = |gt - pred|_F^2 / |gt|_F^2
/// reg  = sum_k (s_k(gt) - s_k(pred))^2 / sum_k s_k(gt)^2
/// total = data + lambda * reg, with its gradient with respect to pred using
/// d s_k / d pred = u_k v_k^T. Throws degenerate_patch when gt is all zero.
std::pair<LossBreakdown, ParamMatrix> loss_and_grad(const ParamMatrix& pred, const ParamMatrix& gt, double lambda);
LossBreakdown loss_only(const ParamMatrix& pred, const ParamMatrix& gt, double lambda);

/// Equal-weight mean over patches; each gradient is scaled by 1/batch.
std::pair<LossBreakdown, std::vector<ParamMatrix>> batch_loss(const std::vector<ParamMatrix>& preds,
                                                              const std::vector<ParamMatrix>& gts, double lambda);

}  // namespace aid
