#include "projda/linalg.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <vector>

namespace projda {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config: return "config";
    case ErrorCode::Dimension: return "dimension";
    case ErrorCode::IntegrationBlowup: return "integration-blowup";
    case ErrorCode::SubspaceCollapse: return "subspace-collapse";
    case ErrorCode::DegenerateProjection: return "degenerate-projection";
    case ErrorCode::WeightCollapse: return "weight-collapse";
    case ErrorCode::IllConditioned: return "ill-conditioned-update";
    case ErrorCode::Length: return "length";
    case ErrorCode::Io: return "io";
    case ErrorCode::Gap: return "gap";
    case ErrorCode::Internal: return "internal";
  }
  return "unknown";
}

namespace linalg {
namespace {

// One MGS sweep. Returns false on a collapsed column.
bool mgs_pass(const Matrix& w, Matrix& q, Matrix& r) {
  const Eigen::Index p = w.cols();
  q = w;
  r = Matrix::Zero(p, p);
  double scale = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) scale = std::max(scale, w.col(j).norm());
  if (!(scale > 0.0)) return false;
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      const double proj = q.col(i).dot(q.col(j));
      r(i, j) = proj;
      q.col(j) -= proj * q.col(i);
    }
    const double nrm = q.col(j).norm();
    if (!(nrm > 1e-13 * scale)) return false;
    r(j, j) = nrm;
    q.col(j) /= nrm;
  }
  return true;
}

}  // namespace

QrFactors mgs_qr(const Matrix& w) {
  QrFactors out;
  if (!mgs_pass(w, out.q, out.r))
    throw Error(ErrorCode::SubspaceCollapse,
                "tangent image is numerically rank deficient");
  if (orthonormality_error(out.q) > 1e-10) {
    Matrix q2, r2;
    if (!mgs_pass(out.q, q2, r2))
      throw Error(ErrorCode::SubspaceCollapse,
                  "re-orthonormalization lost a column");
    out.q = std::move(q2);
    out.r = (r2 * out.r).triangularView<Eigen::Upper>();
  }
  return out;
}

double orthonormality_error(const Matrix& q) {
  const Matrix g = q.transpose() * q - Matrix::Identity(q.cols(), q.cols());
  return max_abs(g);
}

Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

SymmetricPseudoInverse symmetric_pinv(const Matrix& a, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(a));
  if (eig.info() != Eigen::Success)
    throw Error(ErrorCode::IllConditioned, "symmetric eigendecomposition failed");
  const Vector& vals = eig.eigenvalues();
  const Matrix& vecs = eig.eigenvectors();
  SymmetricPseudoInverse out;
  out.largest = vals.size() ? std::max(vals.maxCoeff(), 0.0) : 0.0;
  const double cutoff = rel_tol * out.largest;
  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < vals.size(); ++i)
    if (out.largest > 0.0 && vals(i) > cutoff) kept.push_back(i);
  out.rank = static_cast<int>(kept.size());
  out.whitener = Matrix::Zero(out.rank, a.rows());
  out.smallest_retained = out.largest;
  for (int k = 0; k < out.rank; ++k) {
    const double v = vals(kept[k]);
    out.smallest_retained = std::min(out.smallest_retained, v);
    out.whitener.row(k) = vecs.col(kept[k]).transpose() / std::sqrt(v);
  }
  out.inverse = out.whitener.transpose() * out.whitener;
  return out;
}

Matrix symmetric_sqrt(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(a));
  if (eig.info() != Eigen::Success)
    throw Error(ErrorCode::IllConditioned, "symmetric eigendecomposition failed");
  const Vector roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

Matrix pinv(const Matrix& a, double rel_tol) {
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double cutoff = s.size() ? rel_tol * s(0) : 0.0;
  Vector inv = Vector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cutoff && s(i) > 0.0) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

int numeric_rank(const Matrix& a, double rel_tol) {
  if (a.size() == 0) return 0;
  Eigen::BDCSVD<Matrix> svd(a);
  const Vector& s = svd.singularValues();
  if (!(s(0) > 0.0)) return 0;
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) ++rank;
  return rank;
}

Matrix expm(const Matrix& a) { return a.exp(); }

Matrix random_orthogonal(int n, RandomStream& rng) {
  const Matrix g = rng.normal_matrix(n, n);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

Matrix orthogonal_complement(const Matrix& u) {
  const Eigen::Index n = u.rows();
  const Eigen::Index p = u.cols();
  Eigen::HouseholderQR<Matrix> qr(u);
  const Matrix q = qr.householderQ();
  return q.rightCols(n - p);
}

double log_det_spd(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::IllConditioned, "matrix is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace linalg
}  // namespace projda
