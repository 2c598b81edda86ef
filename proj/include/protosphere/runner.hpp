#pragma once

#include <filesystem>
#include <string>

#include "protosphere/config.hpp"
#include "protosphere/metrics.hpp"
#include "protosphere/verify.hpp"

namespace proto {

// Output directory resolution, in priority order: explicit CLI flag, the
// config's output_dir, $PROTOSPHERE_OUT_ROOT/<name>, ./out/<name>.
std::filesystem::path resolve_output_dir(const std::string& cli_flag,
                                         const std::string& config_dir,
                                         const std::string& default_name);

// Full UFM run: trace + manifest + final embeddings/weights on disk,
// summary NCReport returned (and printed by the CLI).
NCReport run_ufm(const ExperimentConfig& config,
                 const std::filesystem::path& out_dir);

// Encoder training run; writes the trace, final embeddings, classifier
// file(s) and, when enabled, the three-way probe comparison table.
NCReport run_encoder(const ExperimentConfig& config,
                     const std::filesystem::path& out_dir);

// Grid of encoder runs over (tau, batch, seed); one directory per cell,
// resumable, aggregated into aggregate.csv.
void run_sweep(const ExperimentConfig& config,
               const std::filesystem::path& out_dir);

// NC metric report for an embeddings file, against the given weights file or
// the embeddings' own class means.
NCReport compute_metrics(const std::filesystem::path& embeddings_path,
                         const std::filesystem::path& weights_path,
                         std::string* prototype_note = nullptr);

// Writes a simplex ETF in embeddings-file format, labels 0..K-1.
void emit_etf(int K, int d, std::uint64_t seed,
              const std::filesystem::path& path);

// Runs the certification suite, writes verify_results.csv, prints one line
// per check; true iff everything passed.
bool run_verify(const VerifyOptions& options,
                const std::filesystem::path& out_dir);

} // namespace proto
