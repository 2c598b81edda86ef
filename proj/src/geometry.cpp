#include "protosphere/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace proto {

void EmbeddingBatch::validate() const {
  if (features.rows() < 1 || features.cols() < 1) {
    throw std::invalid_argument("EmbeddingBatch: empty feature matrix");
  }
  if (static_cast<Index>(labels.size()) != features.rows()) {
    throw std::invalid_argument("EmbeddingBatch: label count != row count");
  }
  if (num_classes < 1) {
    throw std::invalid_argument("EmbeddingBatch: num_classes must be >= 1");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw std::invalid_argument("EmbeddingBatch: label out of range");
    }
  }
  if (!features.allFinite()) {
    throw std::invalid_argument("EmbeddingBatch: non-finite feature");
  }
}

bool EmbeddingBatch::rows_normalized(double tol) const {
  for (Index i = 0; i < features.rows(); ++i) {
    if (std::abs(features.row(i).norm() - 1.0) > tol) return false;
  }
  return true;
}

void EmbeddingBatch::require_normalized(double tol) const {
  if (!rows_normalized(tol)) {
    throw std::invalid_argument("EmbeddingBatch: rows are not unit norm");
  }
}

PrototypeSet::PrototypeSet(Matrix w) : weights(std::move(w)) {
  for (Index c = 0; c < weights.rows(); ++c) {
    if (std::abs(weights.row(c).norm() - 1.0) > 1e-9) {
      throw std::invalid_argument("PrototypeSet: row " + std::to_string(c) +
                                  " is not unit norm");
    }
  }
}

Matrix normalize_rows(const Matrix& A) {
  Matrix out(A.rows(), A.cols());
  for (Index i = 0; i < A.rows(); ++i) {
    const double n = A.row(i).norm();
    if (n < 1e-12) {
      throw std::invalid_argument("degenerate direction in row " +
                                  std::to_string(i));
    }
    out.row(i) = A.row(i) / n;
  }
  return out;
}

Matrix class_means(const EmbeddingBatch& batch) {
  batch.validate();
  const int K = batch.num_classes;
  Matrix means = Matrix::Zero(K, batch.dim());
  std::vector<int> counts(K, 0);
  for (Index i = 0; i < batch.size(); ++i) {
    means.row(batch.labels[i]) += batch.features.row(i);
    ++counts[batch.labels[i]];
  }
  for (int c = 0; c < K; ++c) {
    if (counts[c] == 0) {
      throw std::invalid_argument("class without samples: " +
                                  std::to_string(c));
    }
    means.row(c) /= static_cast<double>(counts[c]);
  }
  return means;
}

namespace {

// Orthonormal basis of the hyperplane orthogonal to the all-ones vector,
// K x (K-1), computed by Gram-Schmidt on e_1..e_{K-1} against 1/sqrt(K).
Matrix ones_complement_basis(int K) {
  Matrix B(K, K - 1);
  const Vector ones = Vector::Constant(K, 1.0 / std::sqrt(double(K)));
  for (int j = 0; j < K - 1; ++j) {
    Vector v = Vector::Zero(K);
    v[j] = 1.0;
    v -= ones.dot(v) * ones;
    for (int p = 0; p < j; ++p) {
      v -= B.col(p).dot(v) * B.col(p);
    }
    v.normalize();
    if (v[j] < 0.0) v = -v;
    B.col(j) = v;
  }
  return B;
}

// Orthonormal d x m map from a seeded Gaussian draw (modified Gram-Schmidt,
// sign-fixed so the result is a deterministic function of the rng stream).
Matrix random_orthonormal_map(RandomSource& rng, int d, int m) {
  Matrix G = gaussian_matrix(rng, d, m);
  for (int j = 0; j < m; ++j) {
    for (int p = 0; p < j; ++p) {
      G.col(j) -= G.col(p).dot(G.col(j)) * G.col(p);
    }
    const double n = G.col(j).norm();
    if (n < 1e-8) {
      // Astronomically unlikely for Gaussian columns; redraw deterministically.
      for (int r = 0; r < d; ++r) G(r, j) = rng.normal();
      --j;
      continue;
    }
    G.col(j) /= n;
  }
  for (int j = 0; j < m; ++j) {
    if (G(0, j) < 0.0) G.col(j) = -G.col(j);
  }
  return G;
}

} // namespace

EtfFrame simplex_etf(int K, int d, RandomSource& rng) {
  if (K < 2) throw std::invalid_argument("simplex_etf: K must be >= 2");
  if (d < K - 1) throw std::invalid_argument("dimension too small for simplex");

  // Rows of sqrt(K/(K-1)) (I - 11^T/K) are the simplex vertices in K dims;
  // their span is the hyperplane orthogonal to the all-ones vector.
  const double scale = std::sqrt(double(K) / double(K - 1));
  Matrix M = scale * (Matrix::Identity(K, K) -
                      Matrix::Constant(K, K, 1.0 / double(K)));
  const Matrix B = ones_complement_basis(K);  // K x (K-1)
  const Matrix C = M * B;                     // vertices in K-1 coordinates
  const Matrix Q = random_orthonormal_map(rng, d, K - 1);

  EtfFrame frame;
  frame.directions = C * Q.transpose();
  frame.pairwise_target = -1.0 / double(K - 1);
  return frame;
}

EtfReport is_simplex_etf(const Matrix& M, double tol) {
  const Index K = M.rows();
  if (K < 2) throw std::invalid_argument("is_simplex_etf: need >= 2 rows");
  EtfReport report;
  const double target = -1.0 / double(K - 1);
  const Matrix G = M * M.transpose();
  for (Index c = 0; c < K; ++c) {
    report.max_norm_dev =
        std::max(report.max_norm_dev, std::abs(M.row(c).norm() - 1.0));
    for (Index c2 = 0; c2 < K; ++c2) {
      if (c2 == c) continue;
      report.max_gram_dev =
          std::max(report.max_gram_dev, std::abs(G(c, c2) - target));
    }
  }
  report.centering_norm = M.colwise().sum().norm();
  report.pass = report.max_norm_dev <= tol && report.max_gram_dev <= tol &&
                report.centering_norm <= tol;
  return report;
}

Matrix gram(const Matrix& A, bool trace_normalize) {
  Matrix G = A * A.transpose();
  if (trace_normalize) {
    const double tr = G.trace();
    if (tr <= 0.0) {
      throw std::invalid_argument("gram: zero trace, cannot normalize");
    }
    G /= tr;
  }
  return G;
}

} // namespace proto
