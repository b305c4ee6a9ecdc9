#include "projda/projection.hpp"

#include "projda/linalg.hpp"

#include <cmath>
#include <string>

namespace projda {

SubspaceBasis::SubspaceBasis(Matrix u) : u_(std::move(u)) {
  require(u_.cols() >= 1 && u_.rows() >= u_.cols(), ErrorCode::Dimension,
          "basis must be N x p with 1 <= p <= N");
  require(u_.allFinite(), ErrorCode::Dimension, "basis has non-finite entries");
  if (linalg::orthonormality_error(u_) > 1e-10) u_ = linalg::mgs_qr(u_).q;
}

SubspaceBasis SubspaceBasis::identity(int n) {
  return SubspaceBasis(Matrix::Identity(n, n));
}

SubspaceBasis SubspaceBasis::coordinate(int n, int p) {
  return SubspaceBasis(Matrix::Identity(n, n).leftCols(p));
}

// ---------------------------------------------------------------------------

QrTracker QrTracker::init(int n, int p, RandomStream& rng) {
  require(p >= 1 && p <= n, ErrorCode::Config,
          "projection rank must satisfy 1 <= p <= N");
  for (int attempt = 0;; ++attempt) {
    try {
      return QrTracker(SubspaceBasis(linalg::mgs_qr(rng.normal_matrix(n, p)).q));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SubspaceCollapse || attempt >= 8) throw;
    }
  }
}

QrTracker::QrTracker(SubspaceBasis basis)
    : basis_(std::move(basis)),
      last_t_(Matrix::Identity(basis_.rank(), basis_.rank())),
      log_sums_(Vector::Zero(basis_.rank())) {}

void QrTracker::step(const Model& model, const Vector& u, double eps) {
  require(u.allFinite(), ErrorCode::Dimension, "linearization point not finite");
  if (eps <= 0.0) eps = default_fd_epsilon(u);
  advance(tangent_apply(model, u, basis_.u(), eps));
}

void QrTracker::advance(const Matrix& tangent_image) {
  require(tangent_image.rows() == basis_.dim() &&
              tangent_image.cols() == basis_.rank(),
          ErrorCode::Dimension, "tangent image has the wrong shape");
  linalg::QrFactors f = linalg::mgs_qr(tangent_image);
  basis_ = SubspaceBasis(std::move(f.q));
  log_sums_ += f.r.diagonal().array().log().matrix();
  last_t_ = std::move(f.r);
  ++steps_;
}

Vector QrTracker::exponents(double dt) const {
  if (steps_ == 0) return Vector::Zero(log_sums_.size());
  return log_sums_ / (static_cast<double>(steps_) * dt);
}

// ---------------------------------------------------------------------------

Vector lift_observation(const ObservationModel& obs, const Vector& y) {
  return obs.lift(y);
}

ProjectedObservationModel build_projected_model(const ObservationModel& obs,
                                                const SubspaceBasis& basis) {
  require(basis.dim() == obs.state_dim(), ErrorCode::Dimension,
          "basis dimension " + std::to_string(basis.dim()) +
              " does not match state dimension " +
              std::to_string(obs.state_dim()));
  const Matrix& u = basis.u();
  ProjectedObservationModel pm;
  pm.hq = u.transpose() * obs.projector();
  const Matrix lifted = obs.pseudo_inverse().transpose() * u;  // M x p
  pm.rq = linalg::symmetrize(lifted.transpose() * obs.r() * lifted);

  const auto inv = linalg::symmetric_pinv(pm.rq);
  if (!(inv.largest > 1e-12 * obs.lifted_noise_trace()) || inv.rank == 0)
    throw Error(ErrorCode::DegenerateProjection,
                "projected noise covariance vanishes: the basis misses the "
                "observed subspace");
  pm.rank_rq = inv.rank;
  pm.rq_inverse = inv.inverse;
  pm.rq_whitener = inv.whitener;
  pm.rq_condition = inv.largest / inv.smallest_retained;
  return pm;
}

Vector project_observation(const ProjectedObservationModel& pm,
                           const SubspaceBasis& basis,
                           const ObservationModel& obs, const Vector& y) {
  require(pm.rank() == basis.rank(), ErrorCode::Dimension,
          "projected model and basis ranks differ");
  return basis.u().transpose() * obs.lift(y);
}

Vector projected_log_likelihood_columns(const ProjectedObservationModel& pm,
                                        const Vector& yq, const Matrix& states) {
  require(yq.size() == pm.rank(), ErrorCode::Dimension,
          "projected observation has the wrong length");
  require(states.rows() == pm.hq.cols(), ErrorCode::Dimension,
          "state dimension does not match H^q");
  Matrix innov = -(pm.hq * states);
  innov.colwise() += yq;
  const Matrix white = pm.rq_whitener * innov;
  return -0.5 * white.colwise().squaredNorm().transpose();
}

double projected_log_likelihood(const ProjectedObservationModel& pm,
                                const Vector& yq, const Vector& u) {
  return projected_log_likelihood_columns(pm, yq, u)(0);
}

// ---------------------------------------------------------------------------

Matrix JointProjectedModel::joint_covariance() const {
  const Eigen::Index p = rq.rows();
  const Eigen::Index q = rq_perp.rows();
  Matrix c(p + q, p + q);
  c.topLeftCorner(p, p) = rq;
  c.topRightCorner(p, q) = r12;
  c.bottomLeftCorner(q, p) = r21;
  c.bottomRightCorner(q, q) = rq_perp;
  return c;
}

JointProjectedModel build_orthogonal_model(const ObservationModel& obs,
                                           const SubspaceBasis& basis) {
  require(basis.dim() == obs.state_dim(), ErrorCode::Dimension,
          "basis dimension does not match state dimension");
  require(basis.rank() < basis.dim(), ErrorCode::Config,
          "orthogonal model needs p < N");
  const Matrix& u = basis.u();
  JointProjectedModel jm;
  jm.u_perp = linalg::orthogonal_complement(u);
  jm.hq = u.transpose() * obs.projector();
  jm.hq_perp = jm.u_perp.transpose() * obs.projector();

  const Matrix a = obs.pseudo_inverse().transpose() * u;
  const Matrix b = obs.pseudo_inverse().transpose() * jm.u_perp;
  jm.rq = linalg::symmetrize(a.transpose() * obs.r() * a);
  jm.rq_perp = linalg::symmetrize(b.transpose() * obs.r() * b);
  jm.r12 = a.transpose() * obs.r() * b;
  jm.r21 = jm.r12.transpose();

  Eigen::SelfAdjointEigenSolver<Matrix> eig(jm.joint_covariance(),
                                            Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  require(eig.eigenvalues().minCoeff() >= -1e-8 * scale, ErrorCode::Internal,
          "joint projected covariance is not positive semi-definite");
  return jm;
}

// ---------------------------------------------------------------------------

namespace {

int projector_rank(const Matrix& p) {
  return static_cast<int>(std::lround(p.trace()));
}

void check_projector(const Matrix& p, const char* name) {
  require(p.rows() == p.cols(), ErrorCode::Dimension,
          std::string(name) + " must be square");
  require(max_abs(p - p.transpose()) <= 1e-8, ErrorCode::Config,
          std::string(name) + " is not symmetric");
  require(max_abs(p * p - p) <= 1e-8, ErrorCode::Config,
          std::string(name) + " is not idempotent");
}

// Symmetrize and round the spectrum to {0, 1}.
Matrix clean_projector(const Matrix& x) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(linalg::symmetrize(x));
  const Matrix& v = eig.eigenvectors();
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (eig.eigenvalues()(i) > 0.5) out += v.col(i) * v.col(i).transpose();
  return out;
}

IntersectionResult start(const Matrix& pa, const Matrix& pb, int max_iter,
                         double tol) {
  check_projector(pa, "PA");
  check_projector(pb, "PB");
  require(pa.rows() == pb.rows(), ErrorCode::Dimension,
          "projectors act on different spaces");
  require(max_iter >= 1 && tol > 0.0, ErrorCode::Config,
          "max_iter must be >= 1 and tol > 0");
  IntersectionResult r;
  r.transversal =
      projector_rank(pa) + projector_rank(pb) - static_cast<int>(pa.rows()) > 0;
  return r;
}

}  // namespace

IntersectionResult intersect_projectors_dykstra(const Matrix& pa, const Matrix& pb,
                                                int max_iter, double tol) {
  IntersectionResult result = start(pa, pb, max_iter, tol);
  const Eigen::Index n = pa.rows();
  Matrix x = Matrix::Identity(n, n);
  Matrix p = Matrix::Zero(n, n);
  Matrix q = Matrix::Zero(n, n);
  for (int k = 0; k < max_iter; ++k) {
    const Matrix y = pa * (x + p);
    p = x + p - y;
    const Matrix x_next = pb * (y + q);
    q = y + q - x_next;
    const double change = max_abs(x_next - x);
    x = x_next;
    result.iterations = k + 1;
    if (change < tol) {
      result.converged = true;
      break;
    }
  }
  result.projector = clean_projector(x);
  return result;
}

IntersectionResult intersect_projectors_vonneumann(const Matrix& pa,
                                                   const Matrix& pb,
                                                   int max_iter, double tol) {
  IntersectionResult result = start(pa, pb, max_iter, tol);
  const Eigen::Index n = pa.rows();
  const Matrix product = pa * pb;
  Matrix x = Matrix::Identity(n, n);
  for (int k = 0; k < max_iter; ++k) {
    const Matrix x_next = product * x;
    const double change = max_abs(x_next - x);
    x = x_next;
    result.iterations = k + 1;
    if (change < tol) {
      result.converged = true;
      break;
    }
  }
  result.projector = clean_projector(x);
  return result;
}

}  // namespace projda
