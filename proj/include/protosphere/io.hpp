#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "protosphere/geometry.hpp"
#include "protosphere/metrics.hpp"
#include "protosphere/types.hpp"

namespace proto {

// Plain-text interchange formats. Floats are printed with 17 significant
// digits so a round trip through text is exact.

std::string format_double(double v);

// Embeddings table: header "label,f0,...,f{d-1}", one row per sample.
void write_embeddings(const std::filesystem::path& path, const Matrix& features,
                      const std::vector<int>& labels);
EmbeddingBatch read_embeddings(const std::filesystem::path& path);

// Weights table: same layout with the class index as the label; an optional
// trailing "bias" column serializes affine classifiers.
void write_weights(const std::filesystem::path& path, const Matrix& weights,
                   const std::optional<Vector>& bias = std::nullopt);
struct WeightsFile {
  Matrix weights;
  std::optional<Vector> bias;
};
WeightsFile read_weights(const std::filesystem::path& path);

// Trace table with the fixed metric column set.
extern const char* kTraceHeader;
void write_trace(const std::filesystem::path& path,
                 const std::vector<TraceRecord>& records);
std::vector<TraceRecord> read_trace(const std::filesystem::path& path);

// Manifest: flat string key-value document (JSON object).
void write_manifest(const std::filesystem::path& path,
                    const std::map<std::string, std::string>& entries);
std::map<std::string, std::string> read_manifest(
    const std::filesystem::path& path);

} // namespace proto
