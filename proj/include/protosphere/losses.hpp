#pragma once

#include <functional>
#include <optional>

#include "protosphere/geometry.hpp"
#include "protosphere/types.hpp"

namespace proto {

// Softmax temperature; similarities are divided by tau before exponentiation.
struct Temperature {
  double tau;
  explicit Temperature(double t);
};

// Loss value plus analytic gradients. grad_features is ambient (the rows are
// treated as free variables, no renormalization on the feature side).
// grad_prototypes is with respect to the *raw* prototype rows: the losses
// normalize prototypes internally, so the gradient carries the normalization
// Jacobian (I - w_hat w_hat^T)/||w||.
struct LossEval {
  double value = 0.0;
  Matrix grad_features;
  std::optional<Matrix> grad_prototypes;
  std::optional<Vector> grad_bias;
};

// Softmax cross-entropy on raw features with bias: mean over the batch of
// -log softmax_{y_i}(W z_i + b).
LossEval ce_loss(const EmbeddingBatch& batch, const Matrix& W, const Vector& b);

// Normalized softmax (NormFace): unit features against K normalized
// prototypes, logits u_i . w_hat_c / tau.
LossEval normface_loss(const EmbeddingBatch& batch, const Matrix& prototypes,
                       Temperature tau);

// Temperature-scaled cross entropy with the anchor prototype w_hat_{y_i}
// contrasted against all M batch features in the denominator.
LossEval ntce_loss(const EmbeddingBatch& batch, const Matrix& prototypes,
                   Temperature tau);

// Negatives-only variant: the denominator sums over out-of-class features
// only. Every anchor needs at least one out-of-class sample.
LossEval nonl_loss(const EmbeddingBatch& batch, const Matrix& prototypes,
                   Temperature tau);

// Supervised contrastive loss over 2M unit rows; positives are same-class
// rows, the denominator excludes only the anchor itself.
LossEval scl_loss(const EmbeddingBatch& batch, Temperature tau);

// Prototype-softmax loss: prototypes are the in-batch class means (raw, not
// re-normalized), denominator -e^{a.mu_y/tau} + sum_c n_c e^{a.mu_c/tau}.
LossEval proto_loss(const EmbeddingBatch& batch, Temperature tau);

// Shared lower bound of the SCL and prototype losses:
// (1/2M) sum_i [-a_i.mu_{y_i}/tau + log(sum_c n_c e^{a_i.mu_c/tau} - e^{1/tau})].
double lstar_loss(const EmbeddingBatch& batch, Temperature tau);

// Class-level reductions over K class means and K prototypes, with n samples
// per class folded into the denominator.
double class_level_ntce(const Matrix& means, const Matrix& prototypes,
                        Temperature tau, int n);
double class_level_nonl(const Matrix& means, const Matrix& prototypes,
                        Temperature tau, int n);

// Central finite differences (f(x+h) - f(x-h)) / 2h per coordinate;
// independent oracle for every analytic gradient above.
Matrix finite_diff_gradient(const std::function<double(const Matrix&)>& f,
                            const Matrix& at, double h);

} // namespace proto
