#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "protosphere/encoder.hpp"
#include "protosphere/manifold.hpp"

namespace proto {

struct DatasetConfig {
  int num_classes = 10;
  int per_class = 100;
  int input_dim = 20;
  double separation = 4.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 42;
  int val_per_class = 0;  // carved off the end of each class when > 0
};

struct UfmConfig {
  OptimConfig optim;
  int num_classes = 10;
  int per_class = 20;
  int dim = 16;
  double tau = 0.1;
};

struct EncoderRunConfig {
  TrainConfig train;
  std::vector<int> hidden = {32};
  int embed_dim = 16;
  Activation activation = Activation::tanh;
  bool evaluate_probes = true;
  long probe_steps = 3000;
  double probe_lr = 150.0;
};

struct SweepConfig {
  std::vector<double> taus;
  std::vector<int> batch_sizes;
  std::vector<std::uint64_t> seeds;
  int workers = 1;
};

struct ExperimentConfig {
  std::string mode = "ufm";  // ufm | encoder | sweep | verify | metrics | etf
  std::string output_dir;
  UfmConfig ufm;
  EncoderRunConfig encoder;
  DatasetConfig dataset;
  SweepConfig sweep;
};

// Strict parse: unknown keys and type mismatches are errors that name the
// key and its line in the file.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin = "<string>");

// Canonical JSON serialization; parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

MlpSpec mlp_spec_from(const EncoderRunConfig& encoder, int input_dim);

} // namespace proto
