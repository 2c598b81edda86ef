#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "protosphere/geometry.hpp"
#include "protosphere/types.hpp"

namespace proto {

enum class ClassifierKind { fixed_prototypes, normalized_probe, ce_probe };

std::string to_string(ClassifierKind kind);
ClassifierKind classifier_kind_from_string(const std::string& name);

struct Classifier {
  ClassifierKind kind = ClassifierKind::fixed_prototypes;
  Matrix weights;  // K x d
  std::optional<Vector> bias;
  double tau = 1.0;
};

struct ProbeConfig {
  long steps = 3000;
  // The normalized-softmax probe saturates at small tau (gradients shrink
  // exponentially with the classification margin), so its default rate is
  // large and warmed up; only K prototype rows move.
  double base_lr = 150.0;
  double min_lr_factor = 0.001;
  long warmup_steps = 300;
  double warmup_start_lr = 0.5;
  double tau = 0.1;
  std::uint64_t seed = 42;
};

// Classifier whose weights are the normalized class-mean embeddings; no
// training, one pass over the batch.
Classifier fixed_prototypes(const EmbeddingBatch& batch);

// argmax_c (w_c . u_i + b_c), ties broken toward the lowest class index.
std::vector<int> predict(const Classifier& clf, const EmbeddingBatch& batch);

double accuracy(const std::vector<int>& predicted,
                const std::vector<int>& labels);

// Prototypes trained with the normalized softmax loss on frozen embeddings
// (Riemannian descent on the prototype rows only).
Classifier train_normalized_probe(const EmbeddingBatch& frozen,
                                  const ProbeConfig& config);

// Linear classifier with bias trained by cross entropy on the frozen raw
// embeddings, plain SGD.
Classifier train_ce_probe(const EmbeddingBatch& frozen,
                          const ProbeConfig& config);

} // namespace proto
