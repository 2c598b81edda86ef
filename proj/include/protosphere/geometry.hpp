#pragma once

#include <vector>

#include "protosphere/numerics.hpp"
#include "protosphere/types.hpp"

namespace proto {

// A batch of M feature rows in d dimensions with class labels in [0, K).
struct EmbeddingBatch {
  Matrix features;          // M x d
  std::vector<int> labels;  // size M
  int num_classes = 0;

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }

  // Checks shape/label invariants, throws on violation.
  void validate() const;
  // True when every row is unit norm to within tol.
  bool rows_normalized(double tol = 1e-9) const;
  void require_normalized(double tol = 1e-9) const;
};

// K unit rows acting as class prototypes.
struct PrototypeSet {
  Matrix weights;  // K x d, unit rows

  PrototypeSet() = default;
  explicit PrototypeSet(Matrix w);

  Index num_classes() const { return weights.rows(); }
  Index dim() const { return weights.cols(); }
};

// K unit directions forming a centered regular simplex: rows sum to zero and
// every off-diagonal Gram entry equals -1/(K-1).
struct EtfFrame {
  Matrix directions;       // K x d
  double pairwise_target;  // -1/(K-1)
};

struct EtfReport {
  double max_norm_dev = 0.0;
  double max_gram_dev = 0.0;
  double centering_norm = 0.0;
  bool pass = false;
};

// Row-wise u_i = z_i / ||z_i||. Rows with norm below 1e-12 are an error.
Matrix normalize_rows(const Matrix& A);

// Per-class feature means, K x d. Every class in [0, K) must be populated.
Matrix class_means(const EmbeddingBatch& batch);

// Centered regular simplex of K unit vectors embedded in d dimensions
// (d >= K-1) through a seeded random orthonormal map.
EtfFrame simplex_etf(int K, int d, RandomSource& rng);

// Measures how far M's rows are from a simplex ETF.
EtfReport is_simplex_etf(const Matrix& M, double tol);

// G = A A^T, optionally divided by its trace so that trace(G) = 1.
Matrix gram(const Matrix& A, bool trace_normalize = false);

} // namespace proto
