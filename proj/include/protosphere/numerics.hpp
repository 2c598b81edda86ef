#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "protosphere/types.hpp"

namespace proto {

// Deterministic seeded random source. All randomness in the project flows
// through this class so that a run is reproducible bit-for-bit from its seed.
// std::mt19937_64 has a fully specified output sequence; the uniform and
// normal transforms below are hand-rolled because the std distributions are
// implementation-defined. Single-owner: do not share one instance across
// concurrent callers, derive child seeds instead.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform();

  // Standard normal via Box-Muller (pairs cached).
  double normal();

  // Uniform integer in [0, n), rejection-sampled so the result is unbiased.
  std::uint64_t below(std::uint64_t n);

  // Derived seed for an independent child stream.
  std::uint64_t child_seed(std::uint64_t stream) const;
  RandomSource child(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// log(sum_i exp(v_i)), max-shifted so nothing overflows for |v_i| <= 1e4.
// Throws std::invalid_argument("empty reduction") on an empty input.
double log_sum_exp(std::span<const double> values);
double log_sum_exp(const Vector& values);

// Eigenvalues of a symmetric matrix, sorted descending, with negatives in
// [-1e-10, 0) clamped to zero. Input must be square and symmetric to 1e-10.
Vector sym_eigenvalues(const Matrix& S);

// Singular values of A, descending (equivalently sqrt of eig(A^T A)).
Vector singular_values(const Matrix& A);

// Biased covariance (1/m) sum (x_i - mean)(x_i - mean)^T of row samples.
Matrix covariance(const Matrix& X);

// rows x cols matrix of i.i.d. standard normals drawn from rng.
Matrix gaussian_matrix(RandomSource& rng, Index rows, Index cols);

} // namespace proto
