#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace projda {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class ErrorCode {
  Config,
  Dimension,
  IntegrationBlowup,
  SubspaceCollapse,
  DegenerateProjection,
  WeightCollapse,
  IllConditioned,
  Length,
  Io,
  Gap,
  Internal,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Seeded source of uniform and Gaussian variates. Copying a stream clones
/// its full state, so a copy replays the same draws as the original.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  void fill_normal(Eigen::Ref<Matrix> out, double stddev = 1.0) {
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      for (Eigen::Index i = 0; i < out.rows(); ++i)
        out(i, j) = stddev * normal_(engine_);
  }

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols,
                       double stddev = 1.0) {
    Matrix m(rows, cols);
    fill_normal(m, stddev);
    return m;
  }

  Vector normal_vector(Eigen::Index n, double stddev = 1.0) {
    Vector v(n);
    fill_normal(v, stddev);
    return v;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline double max_abs(const Eigen::Ref<const Matrix>& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace projda
