#include "protosphere/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace proto {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

} // namespace

RandomSource::RandomSource(std::uint64_t seed) : seed_(seed), engine_(seed) {}

double RandomSource::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RandomSource::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t RandomSource::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("below: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

std::uint64_t RandomSource::child_seed(std::uint64_t stream) const {
  return splitmix64(seed_ ^ splitmix64(stream + 1));
}

RandomSource RandomSource::child(std::uint64_t stream) const {
  return RandomSource(child_seed(stream));
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("empty reduction");
  const double m = *std::max_element(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

double log_sum_exp(const Vector& values) {
  return log_sum_exp(std::span<const double>(values.data(),
                                             static_cast<std::size_t>(values.size())));
}

Vector sym_eigenvalues(const Matrix& S) {
  if (S.rows() != S.cols()) {
    throw std::invalid_argument("sym_eigenvalues: matrix is not square");
  }
  const double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
  if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw std::invalid_argument("sym_eigenvalues: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(S, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("sym_eigenvalues: eigensolver failed");
  }
  Vector v = solver.eigenvalues().reverse();
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] < 0.0 && v[i] >= -1e-10 * scale) v[i] = 0.0;
  }
  return v;
}

Vector singular_values(const Matrix& A) {
  if (!A.allFinite()) {
    throw std::invalid_argument("singular_values: non-finite input");
  }
  Eigen::JacobiSVD<Matrix> svd(A);
  return svd.singularValues();
}

Matrix covariance(const Matrix& X) {
  if (X.rows() < 1) throw std::invalid_argument("covariance: no samples");
  const RowVector mean = X.colwise().mean();
  const Matrix centered = X.rowwise() - mean;
  return centered.transpose() * centered / static_cast<double>(X.rows());
}

Matrix gaussian_matrix(RandomSource& rng, Index rows, Index cols) {
  if (rows < 1 || cols < 1) {
    throw std::invalid_argument("gaussian_matrix: rows and cols must be >= 1");
  }
  Matrix A(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      A(i, j) = rng.normal();
    }
  }
  return A;
}

} // namespace proto
