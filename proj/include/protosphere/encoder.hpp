#pragma once

#include <cstdint>
#include <vector>

#include "protosphere/manifold.hpp"
#include "protosphere/types.hpp"

namespace proto {

enum class Activation { tanh, relu };

// Feed-forward encoder: affine + activation per hidden layer, final affine,
// then row normalization onto the unit sphere.
struct MlpSpec {
  std::vector<int> widths;  // input_dim, hidden..., d
  Activation activation = Activation::tanh;

  int input_dim() const { return widths.front(); }
  int embed_dim() const { return widths.back(); }
  int num_layers() const { return static_cast<int>(widths.size()) - 1; }
  void validate() const;
};

struct MlpParams {
  std::vector<Matrix> weights;  // layer l: widths[l+1] x widths[l]
  std::vector<Vector> biases;
};

struct MlpGrads {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

// Activations cached by forward() for the matching backward() call.
struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre;   // pre-activations per layer, M x width
  std::vector<Matrix> post;  // post-activations per hidden layer
  Matrix raw;                // final affine output z, M x d
  Vector norms;              // ||z_i||
  Matrix embeddings;         // u = z / ||z||
};

struct SyntheticDataset {
  Matrix inputs;
  std::vector<int> labels;
  int num_classes = 0;
  // Generator parameters, kept so a dataset is reproducible from its seed.
  int per_class = 0;
  double separation = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  Matrix centers;  // K x input_dim
};

struct TrainConfig {
  LossKind loss_kind = LossKind::nonl;
  int epochs = 50;
  int batch_size = 128;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double tau = 0.1;
  double augment_sigma = 0.0;
  std::uint64_t seed = 42;
  int eval_every = 1;  // epochs between full-dataset metric evaluations
  double min_lr_factor = 0.001;
  int warmup_epochs = 0;
  double warmup_start_lr = 0.0;
};

struct TrainResult {
  MlpParams params;
  Matrix prototypes;  // K x d raw rows (normface/ntce/nonl)
  Matrix ce_weights;  // K x d (ce)
  Vector ce_bias;     // K (ce)
  RunTrace trace;
};

MlpParams init_mlp(const MlpSpec& spec, std::uint64_t seed);

// Gaussian class blobs around well-separated centers (pairwise angle >= 60
// degrees, rejection-sampled).
SyntheticDataset make_blobs(int K, int per_class, int input_dim,
                            double separation, double noise_sigma,
                            std::uint64_t seed);

// Stratified split into the first train_per_class samples of each class and
// the rest, preserving generator metadata.
std::pair<SyntheticDataset, SyntheticDataset> split_dataset(
    const SyntheticDataset& data, int train_per_class);

// x + Gaussian noise of scale sigma_aug.
RowVector augment(const RowVector& x, double sigma_aug, RandomSource& rng);

ForwardCache forward(const MlpSpec& spec, const MlpParams& params,
                     const Matrix& X);

// Backprop from a gradient with respect to the unit embeddings u (the chain
// passes through the normalization Jacobian (I - u u^T)/||z||).
MlpGrads backward(const MlpSpec& spec, const MlpParams& params,
                  const ForwardCache& cache, const Matrix& grad_embeddings);

// Backprop from a gradient with respect to the raw pre-normalization output
// z (used by CE, which never sees the sphere).
MlpGrads backward_from_raw(const MlpSpec& spec, const MlpParams& params,
                           const ForwardCache& cache, const Matrix& grad_raw);

// SGD with momentum, weight decay on affine weights, cosine learning-rate
// schedule over epochs; stratified batches; deterministic given config.seed.
TrainResult train_encoder(const SyntheticDataset& data, const MlpSpec& spec,
                          const TrainConfig& config);

} // namespace proto
