#include "protosphere/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "protosphere/numerics.hpp"

namespace proto {

void MlpSpec::validate() const {
  if (widths.size() < 2) {
    throw std::invalid_argument("MlpSpec: need at least input and output widths");
  }
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("MlpSpec: widths must be >= 1");
  }
  if (embed_dim() < 2) {
    throw std::invalid_argument("MlpSpec: embedding dimension must be >= 2");
  }
}

MlpParams init_mlp(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  RandomSource rng(seed);
  MlpParams params;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.widths[l];
    const int fan_out = spec.widths[l + 1];
    const double gain = spec.activation == Activation::relu ? 2.0 : 1.0;
    const double scale = std::sqrt(gain / static_cast<double>(fan_in));
    params.weights.push_back(scale * gaussian_matrix(rng, fan_out, fan_in));
    params.biases.push_back(Vector::Zero(fan_out));
  }
  return params;
}

SyntheticDataset make_blobs(int K, int per_class, int input_dim,
                            double separation, double noise_sigma,
                            std::uint64_t seed) {
  if (K < 2 || per_class < 1) {
    throw std::invalid_argument("make_blobs: need K >= 2 and per_class >= 1");
  }
  RandomSource rng(seed);
  RandomSource center_rng = rng.child(0);
  RandomSource noise_rng = rng.child(1);

  // Unit center directions with pairwise angle >= 60 degrees.
  Matrix dirs(K, input_dim);
  int placed = 0;
  for (int tries = 0; placed < K; ++tries) {
    if (tries >= 1000) {
      throw std::runtime_error("cannot place centers");
    }
    Vector cand(input_dim);
    for (int j = 0; j < input_dim; ++j) cand[j] = center_rng.normal();
    const double norm = cand.norm();
    if (norm < 1e-12) continue;
    cand /= norm;
    bool ok = true;
    for (int c = 0; c < placed; ++c) {
      if (dirs.row(c).dot(cand) > 0.5) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    dirs.row(placed++) = cand.transpose();
  }

  SyntheticDataset data;
  data.num_classes = K;
  data.per_class = per_class;
  data.separation = separation;
  data.noise_sigma = noise_sigma;
  data.seed = seed;
  data.centers = separation * dirs;
  data.inputs.resize(static_cast<Index>(K) * per_class, input_dim);
  data.labels.resize(static_cast<std::size_t>(K) * per_class);
  Index row = 0;
  for (int c = 0; c < K; ++c) {
    for (int s = 0; s < per_class; ++s, ++row) {
      for (int j = 0; j < input_dim; ++j) {
        data.inputs(row, j) = data.centers(c, j) + noise_sigma * noise_rng.normal();
      }
      data.labels[row] = c;
    }
  }
  return data;
}

std::pair<SyntheticDataset, SyntheticDataset> split_dataset(
    const SyntheticDataset& data, int train_per_class) {
  if (train_per_class < 1 || train_per_class >= data.per_class) {
    throw std::invalid_argument("split_dataset: bad train_per_class");
  }
  SyntheticDataset train = data;
  SyntheticDataset val = data;
  const int val_per_class = data.per_class - train_per_class;
  const Index d = data.inputs.cols();
  train.inputs.resize(static_cast<Index>(data.num_classes) * train_per_class, d);
  train.labels.assign(static_cast<std::size_t>(data.num_classes) * train_per_class, 0);
  train.per_class = train_per_class;
  val.inputs.resize(static_cast<Index>(data.num_classes) * val_per_class, d);
  val.labels.assign(static_cast<std::size_t>(data.num_classes) * val_per_class, 0);
  val.per_class = val_per_class;
  Index tr = 0;
  Index vr = 0;
  for (int c = 0; c < data.num_classes; ++c) {
    for (int s = 0; s < data.per_class; ++s) {
      const Index src = static_cast<Index>(c) * data.per_class + s;
      if (s < train_per_class) {
        train.inputs.row(tr) = data.inputs.row(src);
        train.labels[tr++] = c;
      } else {
        val.inputs.row(vr) = data.inputs.row(src);
        val.labels[vr++] = c;
      }
    }
  }
  return {train, val};
}

RowVector augment(const RowVector& x, double sigma_aug, RandomSource& rng) {
  if (sigma_aug < 0.0) {
    throw std::invalid_argument("augment: sigma must be >= 0");
  }
  if (sigma_aug == 0.0) return x;
  RowVector out = x;
  for (Index j = 0; j < x.size(); ++j) out[j] += sigma_aug * rng.normal();
  return out;
}

ForwardCache forward(const MlpSpec& spec, const MlpParams& params,
                     const Matrix& X) {
  spec.validate();
  if (X.cols() != spec.input_dim()) {
    throw std::invalid_argument("forward: input width mismatch");
  }
  ForwardCache cache;
  cache.input = X;
  Matrix h = X;
  for (int l = 0; l < spec.num_layers(); ++l) {
    Matrix pre = h * params.weights[l].transpose();
    pre.rowwise() += params.biases[l].transpose();
    cache.pre.push_back(pre);
    if (l + 1 < spec.num_layers()) {
      Matrix post = spec.activation == Activation::tanh
                        ? Matrix(pre.array().tanh())
                        : Matrix(pre.cwiseMax(0.0));
      cache.post.push_back(post);
      h = post;
    } else {
      cache.raw = pre;
    }
  }
  cache.norms = cache.raw.rowwise().norm();
  for (Index i = 0; i < cache.norms.size(); ++i) {
    if (cache.norms[i] < 1e-12) {
      throw std::runtime_error("forward: embedding row collapsed to zero");
    }
  }
  cache.embeddings = cache.raw.array().colwise() / cache.norms.array();
  return cache;
}

namespace {

MlpGrads backprop(const MlpSpec& spec, const MlpParams& params,
                  const ForwardCache& cache, Matrix delta) {
  MlpGrads grads;
  grads.weights.resize(spec.num_layers());
  grads.biases.resize(spec.num_layers());
  for (int l = spec.num_layers() - 1; l >= 0; --l) {
    const Matrix& layer_in = l == 0 ? cache.input : cache.post[l - 1];
    grads.weights[l] = delta.transpose() * layer_in;
    grads.biases[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    Matrix upstream = delta * params.weights[l];
    const Matrix& pre = cache.pre[l - 1];
    if (spec.activation == Activation::tanh) {
      const Matrix t = pre.array().tanh();
      delta = upstream.cwiseProduct(
          Matrix((1.0 - t.array().square()).matrix()));
    } else {
      delta = upstream.cwiseProduct(
          Matrix((pre.array() > 0.0).cast<double>().matrix()));
    }
  }
  return grads;
}

} // namespace

MlpGrads backward(const MlpSpec& spec, const MlpParams& params,
                  const ForwardCache& cache, const Matrix& grad_embeddings) {
  if (grad_embeddings.rows() != cache.embeddings.rows() ||
      grad_embeddings.cols() != cache.embeddings.cols()) {
    throw std::invalid_argument("backward: gradient shape mismatch");
  }
  // (I - u u^T) g / ||z|| per row.
  Matrix delta(grad_embeddings.rows(), grad_embeddings.cols());
  for (Index i = 0; i < grad_embeddings.rows(); ++i) {
    const RowVector u = cache.embeddings.row(i);
    const RowVector g = grad_embeddings.row(i);
    delta.row(i) = (g - g.dot(u) * u) / cache.norms[i];
  }
  return backprop(spec, params, cache, std::move(delta));
}

MlpGrads backward_from_raw(const MlpSpec& spec, const MlpParams& params,
                           const ForwardCache& cache, const Matrix& grad_raw) {
  if (grad_raw.rows() != cache.raw.rows() ||
      grad_raw.cols() != cache.raw.cols()) {
    throw std::invalid_argument("backward_from_raw: gradient shape mismatch");
  }
  return backprop(spec, params, cache, grad_raw);
}

namespace {

struct Momentum {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Matrix head;
  Vector head_bias;
};

// Stratified order: per-class shuffles dealt round-robin, so any contiguous
// batch of size >= 2 sees >= 2 classes whenever K >= 2.
std::vector<int> stratified_order(const SyntheticDataset& data,
                                  RandomSource& rng) {
  std::vector<std::vector<int>> per_class(data.num_classes);
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    per_class[data.labels[i]].push_back(static_cast<int>(i));
  }
  for (auto& v : per_class) rng.shuffle(v);
  std::vector<int> order;
  order.reserve(data.labels.size());
  std::size_t round = 0;
  for (bool any = true; any; ++round) {
    any = false;
    for (int c = 0; c < data.num_classes; ++c) {
      if (round < per_class[c].size()) {
        order.push_back(per_class[c][round]);
        any = true;
      }
    }
  }
  return order;
}

void sgd_step(Matrix& param, Matrix& velocity, const Matrix& grad, double lr,
              double momentum, double weight_decay) {
  if (velocity.size() == 0) velocity = Matrix::Zero(param.rows(), param.cols());
  velocity = momentum * velocity + grad + weight_decay * param;
  param -= lr * velocity;
}

void sgd_step(Vector& param, Vector& velocity, const Vector& grad, double lr,
              double momentum) {
  if (velocity.size() == 0) velocity = Vector::Zero(param.size());
  velocity = momentum * velocity + grad;
  param -= lr * velocity;
}

} // namespace

TrainResult train_encoder(const SyntheticDataset& data, const MlpSpec& spec,
                          const TrainConfig& config) {
  spec.validate();
  const Index N = data.inputs.rows();
  if (config.batch_size < 1 || config.batch_size > N) {
    throw std::invalid_argument("train_encoder: bad batch size");
  }
  if (config.epochs < 1) throw std::invalid_argument("train_encoder: epochs < 1");
  const int K = data.num_classes;
  const int d = spec.embed_dim();
  const bool two_views = config.loss_kind == LossKind::scl ||
                         config.loss_kind == LossKind::proto_softmax;

  RandomSource root(config.seed);
  TrainResult result;
  result.params = init_mlp(spec, root.child_seed(0));
  RandomSource proto_rng = root.child(1);
  RandomSource batch_rng = root.child(2);
  RandomSource aug_rng = root.child(3);
  result.prototypes = normalize_rows(gaussian_matrix(proto_rng, K, d));
  RandomSource head_rng = root.child(4);
  result.ce_weights = 0.01 * gaussian_matrix(head_rng, K, d);
  result.ce_bias = Vector::Zero(K);

  Momentum vel;
  vel.weights.resize(spec.num_layers());
  vel.biases.resize(spec.num_layers());
  Matrix proto_vel;
  const Temperature tau{config.tau};

  OptimConfig sched;
  sched.steps = config.epochs;
  sched.base_lr = config.base_lr;
  sched.min_lr_factor = config.min_lr_factor;
  sched.warmup_steps = config.warmup_epochs;
  sched.warmup_start_lr = config.warmup_start_lr;

  long steps_done = 0;
  auto evaluate = [&](long iteration) {
    const ForwardCache cache = forward(spec, result.params, data.inputs);
    EmbeddingBatch batch{cache.embeddings, data.labels, K};
    double loss_value = 0.0;
    PrototypeSet report_protos;
    NCReport report;
    switch (config.loss_kind) {
      case LossKind::ce: {
        EmbeddingBatch raw{cache.raw, data.labels, K};
        loss_value = ce_loss(raw, result.ce_weights, result.ce_bias).value;
        report_protos = PrototypeSet(normalize_rows(result.ce_weights));
        report = nc_report(batch, report_protos);
        Matrix logits = cache.raw * result.ce_weights.transpose();
        logits.rowwise() += result.ce_bias.transpose();
        long correct = 0;
        for (Index i = 0; i < N; ++i) {
          Index best;
          logits.row(i).maxCoeff(&best);
          if (best == data.labels[i]) ++correct;
        }
        report.train_accuracy = static_cast<double>(correct) / N;
        break;
      }
      case LossKind::normface:
      case LossKind::ntce:
      case LossKind::nonl: {
        if (config.loss_kind == LossKind::normface) {
          loss_value = normface_loss(batch, result.prototypes, tau).value;
        } else if (config.loss_kind == LossKind::ntce) {
          loss_value = ntce_loss(batch, result.prototypes, tau).value;
        } else {
          loss_value = nonl_loss(batch, result.prototypes, tau).value;
        }
        report_protos = PrototypeSet(normalize_rows(result.prototypes));
        report = nc_report(batch, report_protos);
        break;
      }
      case LossKind::scl:
      case LossKind::proto_softmax: {
        // Duplicated clean views for the evaluation loss.
        EmbeddingBatch doubled;
        doubled.features.resize(2 * N, d);
        doubled.features << cache.embeddings, cache.embeddings;
        doubled.labels = data.labels;
        doubled.labels.insert(doubled.labels.end(), data.labels.begin(),
                              data.labels.end());
        doubled.num_classes = K;
        loss_value = config.loss_kind == LossKind::scl
                         ? scl_loss(doubled, tau).value
                         : proto_loss(doubled, tau).value;
        report_protos = PrototypeSet(normalize_rows(class_means(batch)));
        report = nc_report(batch, report_protos);
        break;
      }
    }
    result.trace.records.push_back(TraceRecord{iteration, loss_value, report});
  };

  evaluate(0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = warmup_then_cosine(epoch, sched);
    const std::vector<int> order = stratified_order(data, batch_rng);
    std::vector<std::vector<int>> batches;
    for (std::size_t pos = 0; pos < order.size();
         pos += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), pos + static_cast<std::size_t>(config.batch_size));
      batches.emplace_back(order.begin() + pos, order.begin() + end);
    }
    // A trailing singleton cannot carry a contrastive anchor; merge it.
    if (batches.size() > 1 && batches.back().size() < 2) {
      auto tail = batches.back();
      batches.pop_back();
      batches.back().insert(batches.back().end(), tail.begin(), tail.end());
    }

    for (const auto& idx : batches) {
      const int B = static_cast<int>(idx.size());
      Matrix X(two_views ? 2 * B : B, spec.input_dim());
      std::vector<int> labels(two_views ? 2 * B : B);
      for (int r = 0; r < B; ++r) {
        X.row(r) = augment(data.inputs.row(idx[r]), config.augment_sigma, aug_rng);
        labels[r] = data.labels[idx[r]];
        if (two_views) {
          X.row(B + r) =
              augment(data.inputs.row(idx[r]), config.augment_sigma, aug_rng);
          labels[B + r] = labels[r];
        }
      }

      ForwardCache cache;
      try {
        cache = forward(spec, result.params, X);
        EmbeddingBatch batch{cache.embeddings, labels, K};
        MlpGrads grads;
        switch (config.loss_kind) {
          case LossKind::ce: {
            EmbeddingBatch raw{cache.raw, labels, K};
            LossEval eval = ce_loss(raw, result.ce_weights, result.ce_bias);
            grads = backward_from_raw(spec, result.params, cache,
                                      eval.grad_features);
            sgd_step(result.ce_weights, vel.head, *eval.grad_prototypes, lr,
                     config.momentum, config.weight_decay);
            sgd_step(result.ce_bias, vel.head_bias, *eval.grad_bias, lr,
                     config.momentum);
            break;
          }
          case LossKind::normface:
          case LossKind::ntce:
          case LossKind::nonl: {
            LossEval eval =
                config.loss_kind == LossKind::normface
                    ? normface_loss(batch, result.prototypes, tau)
                    : config.loss_kind == LossKind::ntce
                          ? ntce_loss(batch, result.prototypes, tau)
                          : nonl_loss(batch, result.prototypes, tau);
            grads = backward(spec, result.params, cache, eval.grad_features);
            // Prototype rows live on the sphere through the loss's internal
            // normalization; no weight decay on them.
            sgd_step(result.prototypes, proto_vel, *eval.grad_prototypes, lr,
                     config.momentum, 0.0);
            break;
          }
          case LossKind::scl:
          case LossKind::proto_softmax: {
            LossEval eval = config.loss_kind == LossKind::scl
                                ? scl_loss(batch, tau)
                                : proto_loss(batch, tau);
            grads = backward(spec, result.params, cache, eval.grad_features);
            break;
          }
        }
        for (int l = 0; l < spec.num_layers(); ++l) {
          sgd_step(result.params.weights[l], vel.weights[l], grads.weights[l],
                   lr, config.momentum, config.weight_decay);
          sgd_step(result.params.biases[l], vel.biases[l], grads.biases[l], lr,
                   config.momentum);
        }
      } catch (const std::exception& e) {
        throw std::runtime_error("epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(steps_done) + ": " + e.what());
      }
      ++steps_done;
    }
    if ((epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs) {
      evaluate(steps_done);
    }
  }

  result.trace.manifest["loss"] = to_string(config.loss_kind);
  result.trace.manifest["epochs"] = std::to_string(config.epochs);
  result.trace.manifest["batch_size"] = std::to_string(config.batch_size);
  result.trace.manifest["seed"] = std::to_string(config.seed);
  return result;
}

} // namespace proto
