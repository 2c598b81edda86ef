#include "protosphere/classify.hpp"

#include <stdexcept>

#include "protosphere/losses.hpp"
#include "protosphere/manifold.hpp"
#include "protosphere/numerics.hpp"

namespace proto {

std::string to_string(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::fixed_prototypes: return "fixed_prototypes";
    case ClassifierKind::normalized_probe: return "normalized_probe";
    case ClassifierKind::ce_probe: return "ce_probe";
  }
  throw std::logic_error("unreachable classifier kind");
}

ClassifierKind classifier_kind_from_string(const std::string& name) {
  if (name == "fixed_prototypes") return ClassifierKind::fixed_prototypes;
  if (name == "normalized_probe") return ClassifierKind::normalized_probe;
  if (name == "ce_probe") return ClassifierKind::ce_probe;
  throw std::invalid_argument("unknown classifier kind: " + name);
}

Classifier fixed_prototypes(const EmbeddingBatch& batch) {
  batch.validate();
  Classifier clf;
  clf.kind = ClassifierKind::fixed_prototypes;
  clf.weights = normalize_rows(class_means(batch));
  return clf;
}

std::vector<int> predict(const Classifier& clf, const EmbeddingBatch& batch) {
  batch.validate();
  if (clf.weights.cols() != batch.dim()) {
    throw std::invalid_argument("predict: dimension mismatch");
  }
  std::vector<int> out(batch.size());
  for (Index i = 0; i < batch.size(); ++i) {
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < clf.weights.rows(); ++c) {
      double score = batch.features.row(i).dot(clf.weights.row(c));
      if (clf.bias) score += (*clf.bias)[c];
      if (score > best_score) {
        best_score = score;
        best = static_cast<int>(c);
      }
    }
    out[i] = best;
  }
  return out;
}

double accuracy(const std::vector<int>& predicted,
                const std::vector<int>& labels) {
  if (predicted.size() != labels.size() || predicted.empty()) {
    throw std::invalid_argument("accuracy: size mismatch");
  }
  long correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

Classifier train_normalized_probe(const EmbeddingBatch& frozen,
                                  const ProbeConfig& config) {
  frozen.validate();
  frozen.require_normalized();
  RandomSource rng(config.seed);
  Matrix W = normalize_rows(
      gaussian_matrix(rng, frozen.num_classes, frozen.dim()));
  const Temperature tau{config.tau};

  OptimConfig schedule;
  schedule.steps = config.steps;
  schedule.base_lr = config.base_lr;
  schedule.min_lr_factor = config.min_lr_factor;
  schedule.warmup_steps = config.warmup_steps;
  schedule.warmup_start_lr = config.warmup_start_lr;
  for (long t = 0; t < config.steps; ++t) {
    const LossEval eval = normface_loss(frozen, W, tau);
    const double lr = warmup_then_cosine(t, schedule);
    for (Index c = 0; c < W.rows(); ++c) {
      const Vector p = W.row(c).transpose();
      const Vector g =
          tangent_project(eval.grad_prototypes->row(c).transpose(), p);
      W.row(c) = retract(p, lr * g).transpose();
    }
  }

  Classifier clf;
  clf.kind = ClassifierKind::normalized_probe;
  clf.weights = W;
  clf.tau = config.tau;
  return clf;
}

Classifier train_ce_probe(const EmbeddingBatch& frozen,
                          const ProbeConfig& config) {
  frozen.validate();
  RandomSource rng(config.seed);
  Matrix W = 0.01 * gaussian_matrix(rng, frozen.num_classes, frozen.dim());
  Vector b = Vector::Zero(frozen.num_classes);

  for (long t = 0; t < config.steps; ++t) {
    const LossEval eval = ce_loss(frozen, W, b);
    const double lr = cosine_schedule(t, config.steps, config.base_lr,
                                      config.base_lr * config.min_lr_factor);
    W -= lr * *eval.grad_prototypes;
    b -= lr * *eval.grad_bias;
  }

  Classifier clf;
  clf.kind = ClassifierKind::ce_probe;
  clf.weights = W;
  clf.bias = b;
  return clf;
}

} // namespace proto
