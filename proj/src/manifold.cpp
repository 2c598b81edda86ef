#include "protosphere/manifold.hpp"

#include <cmath>
#include <stdexcept>

#include "protosphere/numerics.hpp"

namespace proto {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::ce: return "ce";
    case LossKind::normface: return "normface";
    case LossKind::ntce: return "ntce";
    case LossKind::nonl: return "nonl";
    case LossKind::scl: return "scl";
    case LossKind::proto_softmax: return "proto";
  }
  throw std::logic_error("unreachable loss kind");
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "ce") return LossKind::ce;
  if (name == "normface") return LossKind::normface;
  if (name == "ntce") return LossKind::ntce;
  if (name == "nonl") return LossKind::nonl;
  if (name == "scl") return LossKind::scl;
  if (name == "proto") return LossKind::proto_softmax;
  throw std::invalid_argument("unknown loss kind: " + name);
}

EmbeddingBatch UfmState::batch() const {
  EmbeddingBatch b;
  b.features = features;
  b.labels = labels;
  b.num_classes = num_classes();
  return b;
}

Vector tangent_project(const Vector& grad, const Vector& point) {
  return grad - grad.dot(point) * point;
}

Vector retract(const Vector& point, const Vector& step) {
  const Vector target = point - step;
  const double n = target.norm();
  if (n <= 1e-12) {
    throw std::runtime_error("retract: degenerate retraction target");
  }
  return target / n;
}

double cosine_schedule(long t, long T, double eta0, double eta_min) {
  if (t < 0 || t > T) {
    throw std::invalid_argument("cosine_schedule: t outside [0, T]");
  }
  if (T == 0) return eta_min;
  const double phase =
      M_PI * static_cast<double>(t) / static_cast<double>(T);
  return eta_min + 0.5 * (eta0 - eta_min) * (1.0 + std::cos(phase));
}

double warmup_then_cosine(long t, const OptimConfig& config) {
  const double eta_min = config.base_lr * config.min_lr_factor;
  if (config.warmup_steps > 0 && t < config.warmup_steps) {
    const double frac =
        static_cast<double>(t) / static_cast<double>(config.warmup_steps);
    return config.warmup_start_lr +
           (config.base_lr - config.warmup_start_lr) * frac;
  }
  return cosine_schedule(t - config.warmup_steps,
                         config.steps - config.warmup_steps, config.base_lr,
                         eta_min);
}

UfmState random_ufm_state(int K, int n, int d, double tau,
                          std::uint64_t seed) {
  if (K < 1 || n < 1 || d < 1) {
    throw std::invalid_argument("random_ufm_state: K, n, d must be >= 1");
  }
  RandomSource rng(seed);
  RandomSource feature_rng = rng.child(0);
  RandomSource proto_rng = rng.child(1);

  UfmState state;
  state.features = normalize_rows(gaussian_matrix(feature_rng, K * n, d));
  state.prototypes = normalize_rows(gaussian_matrix(proto_rng, K, d));
  state.labels.resize(K * n);
  for (int c = 0; c < K; ++c) {
    for (int j = 0; j < n; ++j) state.labels[c * n + j] = c;
  }
  state.tau = tau;
  state.bias = Vector::Zero(K);
  return state;
}

LossEval evaluate_ufm_loss(LossKind kind, const UfmState& state) {
  const EmbeddingBatch batch = state.batch();
  const Temperature tau{state.tau};
  switch (kind) {
    case LossKind::ce:
      return ce_loss(batch, state.prototypes, state.bias);
    case LossKind::normface:
      return normface_loss(batch, state.prototypes, tau);
    case LossKind::ntce:
      return ntce_loss(batch, state.prototypes, tau);
    case LossKind::nonl:
      return nonl_loss(batch, state.prototypes, tau);
    case LossKind::scl:
      return scl_loss(batch, tau);
    case LossKind::proto_softmax:
      return proto_loss(batch, tau);
  }
  throw std::logic_error("unreachable loss kind");
}

PrototypeSet reporting_prototypes(LossKind kind, const UfmState& state) {
  if (kind == LossKind::scl || kind == LossKind::proto_softmax) {
    EmbeddingBatch unit = state.batch();
    unit.features = normalize_rows(unit.features);
    return PrototypeSet(normalize_rows(class_means(unit)));
  }
  return PrototypeSet(normalize_rows(state.prototypes));
}

namespace {

// CE train accuracy uses the full affine logits; spherical losses use the
// cosine rule that nc_report already applies.
double ce_train_accuracy(const UfmState& state) {
  Matrix logits = state.features * state.prototypes.transpose();
  logits.rowwise() += state.bias.transpose();
  long correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best;
    logits.row(i).maxCoeff(&best);
    if (best == state.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

TraceRecord make_record(LossKind kind, const UfmState& state, long iteration,
                        double loss_value) {
  TraceRecord rec;
  rec.iteration = iteration;
  rec.loss = loss_value;
  rec.report = nc_report(state.batch(), reporting_prototypes(kind, state));
  if (kind == LossKind::ce) {
    rec.report.train_accuracy = ce_train_accuracy(state);
  }
  return rec;
}

void riemannian_rows_step(Matrix& points, const Matrix& grads, double lr) {
  for (Index i = 0; i < points.rows(); ++i) {
    const Vector p = points.row(i).transpose();
    const Vector g = tangent_project(grads.row(i).transpose(), p);
    points.row(i) = retract(p, lr * g).transpose();
  }
}

} // namespace

UfmResult ufm_optimize(const OptimConfig& config, UfmState init) {
  if (config.steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (!(config.base_lr > 0.0)) throw std::invalid_argument("base_lr must be > 0");
  if (config.warmup_steps >= config.steps) {
    throw std::invalid_argument("warmup_steps must be < steps");
  }
  const bool spherical = config.loss_kind != LossKind::ce;
  const bool has_prototypes = config.loss_kind == LossKind::ce ||
                              config.loss_kind == LossKind::normface ||
                              config.loss_kind == LossKind::ntce ||
                              config.loss_kind == LossKind::nonl;

  UfmResult result;
  result.state = std::move(init);
  UfmState& state = result.state;
  if (state.bias.size() == 0) {
    state.bias = Vector::Zero(state.num_classes());
  }

  for (long t = 0; t <= config.steps; ++t) {
    LossEval eval;
    try {
      eval = evaluate_ufm_loss(config.loss_kind, state);
    } catch (const std::exception& e) {
      throw std::runtime_error("ufm step " + std::to_string(t) + ": " +
                               e.what());
    }
    if (t % config.eval_every == 0 || t == config.steps) {
      result.trace.records.push_back(
          make_record(config.loss_kind, state, t, eval.value));
    }
    if (t == config.steps) break;

    const double lr = warmup_then_cosine(t, config);
    if (spherical) {
      riemannian_rows_step(state.features, eval.grad_features, lr);
      if (has_prototypes) {
        riemannian_rows_step(state.prototypes, *eval.grad_prototypes, lr);
      }
    } else {
      state.features -=
          lr * (eval.grad_features + config.weight_decay * state.features);
      state.prototypes -=
          lr * (*eval.grad_prototypes + config.weight_decay * state.prototypes);
      state.bias -= lr * *eval.grad_bias;
    }
  }

  result.trace.manifest["loss"] = to_string(config.loss_kind);
  result.trace.manifest["steps"] = std::to_string(config.steps);
  result.trace.manifest["base_lr"] = std::to_string(config.base_lr);
  result.trace.manifest["seed"] = std::to_string(config.seed);
  result.trace.manifest["tau"] = std::to_string(state.tau);
  return result;
}

} // namespace proto
