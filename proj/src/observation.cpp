#include "projda/observation.hpp"

#include <algorithm>
#include <set>
#include <string>

namespace projda {

ObservationModel::ObservationModel(Matrix h, Matrix r)
    : h_(std::move(h)), r_(std::move(r)) {
  const Eigen::Index m = h_.rows();
  const Eigen::Index n = h_.cols();
  require(m >= 1 && n >= 1, ErrorCode::Dimension, "observation operator is empty");
  require(m <= n, ErrorCode::Dimension,
          "more observations (" + std::to_string(m) + ") than state variables (" +
              std::to_string(n) + ")");
  require(r_.rows() == m && r_.cols() == m, ErrorCode::Dimension,
          "R must be M x M");
  require(h_.allFinite() && r_.allFinite(), ErrorCode::Config,
          "observation model has non-finite entries");
  const double r_scale = std::max(1.0, max_abs(r_));
  require(max_abs(r_ - r_.transpose()) <= 1e-12 * r_scale, ErrorCode::Config,
          "R is not symmetric");
  require(linalg::numeric_rank(h_) == m, ErrorCode::Config,
          "H does not have full row rank");

  const Matrix hht = h_ * h_.transpose();
  Eigen::LLT<Matrix> llt(hht);
  require(llt.info() == Eigen::Success, ErrorCode::IllConditioned,
          "H H^T is not positive definite");
  hdag_ = llt.solve(h_).transpose();
  ph_ = linalg::symmetrize(hdag_ * h_);

  r_inv_ = linalg::symmetric_pinv(r_);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(r_);
  require(eig.eigenvalues().minCoeff() >= -1e-10 * r_scale, ErrorCode::Config,
          "R is not positive semi-definite");
  r_sqrt_ = linalg::symmetric_sqrt(r_);
  lifted_trace_ = (hdag_ * r_sqrt_).squaredNorm();
}

ObservationModel ObservationModel::selector(int state_dim,
                                            const std::vector<int>& indices,
                                            double noise_var) {
  require(!indices.empty(), ErrorCode::Config, "no observed indices");
  require(noise_var >= 0.0, ErrorCode::Config, "observation noise variance < 0");
  std::set<int> seen;
  Matrix h = Matrix::Zero(static_cast<Eigen::Index>(indices.size()), state_dim);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int idx = indices[k];
    require(idx >= 0 && idx < state_dim, ErrorCode::Config,
            "observed index " + std::to_string(idx) + " outside [0, " +
                std::to_string(state_dim) + ")");
    require(seen.insert(idx).second, ErrorCode::Config,
            "observed index " + std::to_string(idx) + " listed twice");
    h(static_cast<Eigen::Index>(k), idx) = 1.0;
  }
  const auto m = static_cast<Eigen::Index>(indices.size());
  return ObservationModel(std::move(h), noise_var * Matrix::Identity(m, m));
}

Vector ObservationModel::lift(const Vector& y) const {
  require(y.size() == obs_dim(), ErrorCode::Dimension,
          "observation has length " + std::to_string(y.size()) + ", expected " +
              std::to_string(obs_dim()));
  return hdag_ * y;
}

}  // namespace projda
