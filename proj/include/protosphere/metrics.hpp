#pragma once

#include <optional>
#include <string>
#include <vector>

#include "protosphere/geometry.hpp"
#include "protosphere/types.hpp"

namespace proto {

// Collapse-geometry metric vector for one evaluation point.
struct NCReport {
  double erank_intra = 0.0;
  double erank_inter = 0.0;
  double erank_weights = 0.0;
  double weight_alignment = 0.0;
  double instance_alignment = 0.0;
  double mir = 0.0;
  double hdr = 0.0;
  double train_accuracy = 0.0;
};

struct TraceRecord {
  long iteration = 0;
  double loss = 0.0;
  NCReport report;
};

// exp of the Shannon entropy of the normalized spectrum. Zero spectrum maps
// to 0 by convention (the collapse optimum).
double effective_rank(const Vector& spectrum);

// Mean over classes of erank(Cov of the class rows).
double erank_intra(const EmbeddingBatch& batch);

// erank(Cov of the class means). Needs K >= 2.
double erank_inter(const EmbeddingBatch& batch);

// erank of the singular spectrum of the weight matrix itself.
double erank_weights(const Matrix& W);

// (1/N) sum ||u_i - w_{y_i}||^2 with rows normalized before comparison.
double weight_alignment(const EmbeddingBatch& batch, const PrototypeSet& W);

// Mean over classes of the mean pairwise squared distance within the class.
// Classes with < 2 samples contribute 0; classes above 200 samples use a
// seeded subsample of 200*199/2 pairs.
double instance_alignment(const EmbeddingBatch& batch);

// von Neumann entropy -sum lambda_i log lambda_i of a trace-normalized PSD
// matrix. Throws when the trace is not within 1e-9 of 1.
double matrix_entropy(const Matrix& G);

// Information metrics over two trace-normalized Grams; the Hadamard product
// is re-trace-normalized before its entropy. Throws "degenerate entropy"
// when the respective denominator vanishes.
double mir(const Matrix& G_W, const Matrix& G_M);
double hdr(const Matrix& G_W, const Matrix& G_M);

// Full metric vector. Features are unit-normalized internally before any
// metric is computed; accuracy is argmax cosine against the prototypes.
NCReport nc_report(const EmbeddingBatch& batch, const PrototypeSet& W);

enum class Direction { maximize, minimize };

// Post-hoc convergence query over a logged metric series (an EWMA
// detector). For maximize the EWMA must reach and keep
// ewma >= target * (1 - tolerance); for minimize it must reach and keep
// ewma <= target + tolerance * initial_value. "Remains" means through the
// end of the trace.
struct ConvergenceQuery {
  std::string metric;
  Direction direction = Direction::minimize;
  double target = 0.0;
  double tolerance = 0.05;  // fraction, in (0, 1)
  double alpha = 0.1;       // EWMA decay, in (0, 1]
};

// 95%-threshold query: target = 0.95 * optimum for maximize metrics,
// target = 0.05 * initial for minimize metrics; tolerance 0.05, alpha 0.1.
ConvergenceQuery nc95_query(const std::string& metric, Direction direction,
                            double optimum_or_initial);

// Earliest logged iteration after which the EWMA stays converged for the
// remainder of the trace; nullopt if never. Unknown metric names throw.
std::optional<long> convergence_iteration(const std::vector<TraceRecord>& records,
                                          const ConvergenceQuery& query);

} // namespace proto
