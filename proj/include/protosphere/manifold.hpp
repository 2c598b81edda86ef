#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "protosphere/losses.hpp"
#include "protosphere/metrics.hpp"
#include "protosphere/types.hpp"

namespace proto {

enum class LossKind { ce, normface, ntce, nonl, scl, proto_softmax };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

// Free features and prototypes on the product of unit spheres (CE runs keep
// them raw in ambient space instead and carry a bias).
struct UfmState {
  Matrix features;          // M x d
  Matrix prototypes;        // K x d
  std::vector<int> labels;  // size M
  double tau = 0.1;
  Vector bias;              // K, CE only

  int num_classes() const { return static_cast<int>(prototypes.rows()); }
  EmbeddingBatch batch() const;
};

struct OptimConfig {
  LossKind loss_kind = LossKind::nonl;
  long steps = 5000;
  double base_lr = 0.5;
  double min_lr_factor = 0.001;  // eta_min = base_lr * min_lr_factor
  long warmup_steps = 0;
  double warmup_start_lr = 0.0;
  std::uint64_t seed = 42;
  long eval_every = 50;
  double weight_decay = 1e-4;  // CE ambient runs only
};

struct RunTrace {
  std::vector<TraceRecord> records;
  std::map<std::string, std::string> manifest;
};

struct UfmResult {
  UfmState state;
  RunTrace trace;
};

// g - (g . p) p; the component of g tangent to the sphere at p.
Vector tangent_project(const Vector& grad, const Vector& point);

// normalize(point - step); throws when the retraction target degenerates.
Vector retract(const Vector& point, const Vector& step);

// eta_min + (eta0 - eta_min) (1 + cos(pi t / T)) / 2, for 0 <= t <= T.
double cosine_schedule(long t, long T, double eta0, double eta_min);

// Linear ramp from warmup_start_lr to base_lr over warmup_steps, then the
// cosine schedule over the remaining horizon.
double warmup_then_cosine(long t, const OptimConfig& config);

// Random balanced state on the product of spheres: K classes, n samples per
// class, dimension d. CE callers get the same state interpreted as raw.
UfmState random_ufm_state(int K, int n, int d, double tau, std::uint64_t seed);

// Projected gradient descent over the state. Normalized losses take tangent
// steps with retraction per row; CE descends in ambient space with weight
// decay. Metrics are logged every eval_every steps and at the final step.
UfmResult ufm_optimize(const OptimConfig& config, UfmState init);

// Loss value + gradients for the state under the given objective.
LossEval evaluate_ufm_loss(LossKind kind, const UfmState& state);

// Prototypes used for reporting: the state's own rows for prototype-bearing
// losses, normalized class means (fixed prototypes) for SCL-style losses,
// always unit rows.
PrototypeSet reporting_prototypes(LossKind kind, const UfmState& state);

} // namespace proto
