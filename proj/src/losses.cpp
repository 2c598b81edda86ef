#include "protosphere/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "protosphere/numerics.hpp"

namespace proto {

namespace {

void check_dims(const EmbeddingBatch& batch, const Matrix& prototypes) {
  batch.validate();
  if (prototypes.rows() != batch.num_classes) {
    throw std::invalid_argument("prototype rows != num_classes");
  }
  if (prototypes.cols() != batch.dim()) {
    throw std::invalid_argument("prototype/feature dimension mismatch");
  }
}

std::vector<int> class_counts(const EmbeddingBatch& batch) {
  std::vector<int> counts(batch.num_classes, 0);
  for (int y : batch.labels) ++counts[y];
  return counts;
}

// Maps a gradient with respect to normalized rows back to the raw rows:
// g_raw = (I - w_hat w_hat^T) g_hat / ||w||.
Matrix through_row_normalization(const Matrix& raw, const Matrix& normalized,
                                 const Matrix& grad_normalized) {
  Matrix out(raw.rows(), raw.cols());
  for (Index c = 0; c < raw.rows(); ++c) {
    const double norm = raw.row(c).norm();
    const RowVector w_hat = normalized.row(c);
    const RowVector g = grad_normalized.row(c);
    out.row(c) = (g - g.dot(w_hat) * w_hat) / norm;
  }
  return out;
}

// Row-wise softmax of logits (with max-shift). Also accumulates the mean of
// (lse_i - logit_{i, target_i}) into *value when targets are given.
Matrix row_softmax(const Matrix& logits, const std::vector<int>* targets,
                   double* value) {
  Matrix probs(logits.rows(), logits.cols());
  double acc = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
    const double z = e.sum();
    probs.row(i) = (e / z).matrix();
    if (targets) acc += m + std::log(z) - logits(i, (*targets)[i]);
  }
  if (value) *value = acc / static_cast<double>(logits.rows());
  return probs;
}

} // namespace

Temperature::Temperature(double t) : tau(t) {
  if (!(t > 0.0)) throw std::invalid_argument("temperature must be positive");
}

LossEval ce_loss(const EmbeddingBatch& batch, const Matrix& W,
                 const Vector& b) {
  check_dims(batch, W);
  if (b.size() != W.rows()) {
    throw std::invalid_argument("bias length != num_classes");
  }
  const Index M = batch.size();
  Matrix logits = batch.features * W.transpose();
  logits.rowwise() += b.transpose();

  LossEval eval;
  Matrix P = row_softmax(logits, &batch.labels, &eval.value);
  for (Index i = 0; i < M; ++i) P(i, batch.labels[i]) -= 1.0;
  P /= static_cast<double>(M);

  eval.grad_features = P * W;
  eval.grad_prototypes = P.transpose() * batch.features;
  eval.grad_bias = P.colwise().sum().transpose();
  return eval;
}

LossEval normface_loss(const EmbeddingBatch& batch, const Matrix& prototypes,
                       Temperature tau) {
  check_dims(batch, prototypes);
  batch.require_normalized();
  const Index M = batch.size();
  const Matrix W_hat = normalize_rows(prototypes);
  const Matrix logits = batch.features * W_hat.transpose() / tau.tau;

  LossEval eval;
  Matrix P = row_softmax(logits, &batch.labels, &eval.value);
  for (Index i = 0; i < M; ++i) P(i, batch.labels[i]) -= 1.0;
  P /= static_cast<double>(M) * tau.tau;

  eval.grad_features = P * W_hat;
  eval.grad_prototypes = through_row_normalization(
      prototypes, W_hat, P.transpose() * batch.features);
  return eval;
}

LossEval ntce_loss(const EmbeddingBatch& batch, const Matrix& prototypes,
                   Temperature tau) {
  check_dims(batch, prototypes);
  batch.require_normalized();
  const Index M = batch.size();
  const int K = batch.num_classes;
  const std::vector<int> counts = class_counts(batch);
  const Matrix W_hat = normalize_rows(prototypes);
  // sims(c, j) = w_hat_c . u_j; anchors of class c share the softmax row.
  const Matrix sims = W_hat * batch.features.transpose();
  const Matrix R = row_softmax(sims / tau.tau, nullptr, nullptr);

  Vector lse_row(K);
  for (int c = 0; c < K; ++c) {
    if (counts[c] > 0) {
      lse_row[c] = log_sum_exp(Vector(sims.row(c).transpose() / tau.tau));
    }
  }
  double value = 0.0;
  for (Index i = 0; i < M; ++i) {
    const int c = batch.labels[i];
    value += lse_row[c] - sims(c, i) / tau.tau;
  }
  LossEval eval;
  eval.value = value / static_cast<double>(M);

  // D(c, j) = dL/dsims(c, j) = (n_c R(c,j) - [y_j = c]) / (M tau).
  Matrix D = R;
  for (int c = 0; c < K; ++c) D.row(c) *= static_cast<double>(counts[c]);
  for (Index j = 0; j < M; ++j) D(batch.labels[j], j) -= 1.0;
  D /= static_cast<double>(M) * tau.tau;

  eval.grad_features = D.transpose() * W_hat;
  eval.grad_prototypes =
      through_row_normalization(prototypes, W_hat, D * batch.features);
  return eval;
}

LossEval nonl_loss(const EmbeddingBatch& batch, const Matrix& prototypes,
                   Temperature tau) {
  check_dims(batch, prototypes);
  batch.require_normalized();
  const Index M = batch.size();
  const int K = batch.num_classes;
  const std::vector<int> counts = class_counts(batch);
  for (int c = 0; c < K; ++c) {
    if (counts[c] > 0 && counts[c] == M) {
      throw std::invalid_argument("no negatives for anchor");
    }
  }
  const Matrix W_hat = normalize_rows(prototypes);
  const Matrix sims = W_hat * batch.features.transpose();

  // Per anchor class c: log-sum-exp and softmax over out-of-class columns.
  Matrix R = Matrix::Zero(K, M);
  Vector lse_neg(K);
  for (int c = 0; c < K; ++c) {
    if (counts[c] == 0) continue;
    double m = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < M; ++j) {
      if (batch.labels[j] != c) m = std::max(m, sims(c, j) / tau.tau);
    }
    double z = 0.0;
    for (Index j = 0; j < M; ++j) {
      if (batch.labels[j] != c) z += std::exp(sims(c, j) / tau.tau - m);
    }
    lse_neg[c] = m + std::log(z);
    for (Index j = 0; j < M; ++j) {
      if (batch.labels[j] != c) {
        R(c, j) = std::exp(sims(c, j) / tau.tau - m) / z;
      }
    }
  }

  double value = 0.0;
  for (Index i = 0; i < M; ++i) {
    const int c = batch.labels[i];
    value += lse_neg[c] - sims(c, i) / tau.tau;
  }
  LossEval eval;
  eval.value = value / static_cast<double>(M);

  Matrix D = R;
  for (int c = 0; c < K; ++c) D.row(c) *= static_cast<double>(counts[c]);
  for (Index j = 0; j < M; ++j) D(batch.labels[j], j) -= 1.0;
  D /= static_cast<double>(M) * tau.tau;

  eval.grad_features = D.transpose() * W_hat;
  eval.grad_prototypes =
      through_row_normalization(prototypes, W_hat, D * batch.features);
  return eval;
}

LossEval scl_loss(const EmbeddingBatch& batch, Temperature tau) {
  batch.validate();
  batch.require_normalized();
  const Index N = batch.size();  // 2M rows
  const std::vector<int> counts = class_counts(batch);
  for (Index i = 0; i < N; ++i) {
    if (counts[batch.labels[i]] < 2) {
      throw std::invalid_argument("isolated anchor " + std::to_string(i));
    }
  }
  const Matrix sims = batch.features * batch.features.transpose();

  double value = 0.0;
  Matrix D = Matrix::Zero(N, N);
  for (Index i = 0; i < N; ++i) {
    const double pos_count = static_cast<double>(counts[batch.labels[i]] - 1);
    // Self-excluded log-sum-exp over the full batch.
    double m = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < N; ++j) {
      if (j != i) m = std::max(m, sims(i, j) / tau.tau);
    }
    double z = 0.0;
    for (Index j = 0; j < N; ++j) {
      if (j != i) z += std::exp(sims(i, j) / tau.tau - m);
    }
    double pos_mean = 0.0;
    for (Index j = 0; j < N; ++j) {
      if (j == i) continue;
      const double p = std::exp(sims(i, j) / tau.tau - m) / z;
      const bool positive = batch.labels[j] == batch.labels[i];
      D(i, j) = (p - (positive ? 1.0 / pos_count : 0.0)) / tau.tau;
      if (positive) pos_mean += sims(i, j);
    }
    value += m + std::log(z) - pos_mean / (pos_count * tau.tau);
  }

  LossEval eval;
  eval.value = value / static_cast<double>(N);
  eval.grad_features =
      (D + D.transpose()) * batch.features / static_cast<double>(N);
  return eval;
}

namespace {

// Shared setup for the prototype-style losses: in-batch class means and the
// similarity matrix h(i, c) = a_i . mu_c.
struct ProtoParts {
  Matrix means;  // K x d, raw
  Matrix h;      // N x K
  std::vector<int> counts;
};

ProtoParts proto_parts(const EmbeddingBatch& batch) {
  batch.validate();
  batch.require_normalized();
  ProtoParts parts;
  parts.counts = class_counts(batch);
  int present = 0;
  for (int c : parts.counts) present += c > 0 ? 1 : 0;
  if (present < 2) {
    throw std::invalid_argument("no contrast possible: single-class batch");
  }
  parts.means = class_means(batch);
  parts.h = batch.features * parts.means.transpose();
  return parts;
}

} // namespace

LossEval proto_loss(const EmbeddingBatch& batch, Temperature tau) {
  const ProtoParts parts = proto_parts(batch);
  const Index N = batch.size();
  const int K = batch.num_classes;

  double value = 0.0;
  Matrix C(N, K);  // C(i, c) = dl_i / dh(i, c)
  for (Index i = 0; i < N; ++i) {
    const int y = batch.labels[i];
    const double m = parts.h.row(i).maxCoeff() / tau.tau;
    double denom = -std::exp(parts.h(i, y) / tau.tau - m);
    for (int c = 0; c < K; ++c) {
      denom += parts.counts[c] * std::exp(parts.h(i, c) / tau.tau - m);
    }
    if (!(denom > 0.0)) {
      throw std::runtime_error("degenerate prototype denominator at anchor " +
                               std::to_string(i));
    }
    value += -parts.h(i, y) / tau.tau + m + std::log(denom);
    for (int c = 0; c < K; ++c) {
      double num = parts.counts[c] * std::exp(parts.h(i, c) / tau.tau - m);
      if (c == y) num -= std::exp(parts.h(i, y) / tau.tau - m);
      C(i, c) = num / (tau.tau * denom);
    }
    C(i, y) -= 1.0 / tau.tau;
  }

  LossEval eval;
  eval.value = value / static_cast<double>(N);
  // Features enter both directly (through a_i) and through the class means.
  const Matrix V = C.transpose() * batch.features;  // K x d
  Matrix grad = C * parts.means;
  for (Index k = 0; k < N; ++k) {
    const int c = batch.labels[k];
    grad.row(k) += V.row(c) / static_cast<double>(parts.counts[c]);
  }
  eval.grad_features = grad / static_cast<double>(N);
  return eval;
}

double lstar_loss(const EmbeddingBatch& batch, Temperature tau) {
  const ProtoParts parts = proto_parts(batch);
  const Index N = batch.size();
  const int K = batch.num_classes;

  double value = 0.0;
  for (Index i = 0; i < N; ++i) {
    const int y = batch.labels[i];
    const double m = std::max(parts.h.row(i).maxCoeff(), 1.0) / tau.tau;
    double arg = -std::exp(1.0 / tau.tau - m);
    for (int c = 0; c < K; ++c) {
      arg += parts.counts[c] * std::exp(parts.h(i, c) / tau.tau - m);
    }
    if (!(arg > 0.0)) {
      throw std::runtime_error("lstar: non-positive log argument at anchor " +
                               std::to_string(i));
    }
    value += -parts.h(i, y) / tau.tau + m + std::log(arg);
  }
  return value / static_cast<double>(N);
}

namespace {

double class_level_impl(const Matrix& means, const Matrix& prototypes,
                        Temperature tau, int n, bool exclude_self) {
  const Index K = means.rows();
  if (K < 2) throw std::invalid_argument("class-level loss needs K >= 2");
  if (prototypes.rows() != K || prototypes.cols() != means.cols()) {
    throw std::invalid_argument("class-level loss: shape mismatch");
  }
  if (n < 1) throw std::invalid_argument("class-level loss: n must be >= 1");
  const Matrix W_hat = normalize_rows(prototypes);
  const Matrix S = W_hat * means.transpose();  // S(c, c') = w_hat_c . mu_c'

  double align = 0.0;
  double contrast = 0.0;
  for (Index c = 0; c < K; ++c) {
    align += S(c, c);
    std::vector<double> terms;
    terms.reserve(K);
    for (Index c2 = 0; c2 < K; ++c2) {
      if (exclude_self && c2 == c) continue;
      terms.push_back(S(c, c2) / tau.tau);
    }
    contrast += std::log(static_cast<double>(n)) + log_sum_exp(terms);
  }
  return -align / (K * tau.tau) + contrast / K;
}

} // namespace

double class_level_ntce(const Matrix& means, const Matrix& prototypes,
                        Temperature tau, int n) {
  return class_level_impl(means, prototypes, tau, n, false);
}

double class_level_nonl(const Matrix& means, const Matrix& prototypes,
                        Temperature tau, int n) {
  return class_level_impl(means, prototypes, tau, n, true);
}

Matrix finite_diff_gradient(const std::function<double(const Matrix&)>& f,
                            const Matrix& at, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) {
    throw std::invalid_argument("finite_diff_gradient: h outside [1e-7, 1e-3]");
  }
  Matrix grad(at.rows(), at.cols());
  Matrix x = at;
  for (Index i = 0; i < at.rows(); ++i) {
    for (Index j = 0; j < at.cols(); ++j) {
      x(i, j) = at(i, j) + h;
      const double fp = f(x);
      x(i, j) = at(i, j) - h;
      const double fm = f(x);
      x(i, j) = at(i, j);
      grad(i, j) = (fp - fm) / (2.0 * h);
    }
  }
  return grad;
}

} // namespace proto
