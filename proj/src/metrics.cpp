#include "protosphere/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "protosphere/numerics.hpp"

namespace proto {

namespace {

double spectrum_entropy(const Vector& s) {
  const double total = s.sum();
  double H = 0.0;
  for (Index i = 0; i < s.size(); ++i) {
    const double p = s[i] / total;
    if (p > 0.0) H -= p * std::log(p);
  }
  return H;
}

std::vector<std::vector<int>> class_index_sets(const EmbeddingBatch& batch) {
  std::vector<std::vector<int>> sets(batch.num_classes);
  for (Index i = 0; i < batch.size(); ++i) {
    sets[batch.labels[i]].push_back(static_cast<int>(i));
  }
  return sets;
}

} // namespace

double effective_rank(const Vector& spectrum) {
  if (spectrum.size() == 0) return 0.0;
  for (Index i = 0; i < spectrum.size(); ++i) {
    if (spectrum[i] < -1e-9) {
      throw std::invalid_argument("effective_rank: negative spectrum entry");
    }
  }
  Vector s = spectrum.cwiseMax(0.0);
  // Spectra here come from unit-scale data; mass below 1e-12 is numerical
  // zero, and the zero spectrum maps to 0 (the collapse optimum).
  if (s.sum() <= 1e-12) return 0.0;
  return std::exp(spectrum_entropy(s));
}

double erank_intra(const EmbeddingBatch& batch) {
  batch.validate();
  const auto sets = class_index_sets(batch);
  double acc = 0.0;
  for (int c = 0; c < batch.num_classes; ++c) {
    if (sets[c].empty()) {
      throw std::invalid_argument("erank_intra: empty class");
    }
    Matrix rows(sets[c].size(), batch.dim());
    for (std::size_t r = 0; r < sets[c].size(); ++r) {
      rows.row(r) = batch.features.row(sets[c][r]);
    }
    acc += effective_rank(sym_eigenvalues(covariance(rows)));
  }
  return acc / batch.num_classes;
}

double erank_inter(const EmbeddingBatch& batch) {
  if (batch.num_classes < 2) {
    throw std::invalid_argument("erank_inter: needs K >= 2");
  }
  const Matrix means = class_means(batch);
  return effective_rank(sym_eigenvalues(covariance(means)));
}

double erank_weights(const Matrix& W) {
  return effective_rank(singular_values(W));
}

double weight_alignment(const EmbeddingBatch& batch, const PrototypeSet& W) {
  batch.validate();
  if (W.num_classes() != batch.num_classes || W.dim() != batch.dim()) {
    throw std::invalid_argument("weight_alignment: shape mismatch");
  }
  const Matrix U = normalize_rows(batch.features);
  double acc = 0.0;
  for (Index i = 0; i < batch.size(); ++i) {
    acc += (U.row(i) - W.weights.row(batch.labels[i])).squaredNorm();
  }
  return acc / static_cast<double>(batch.size());
}

double instance_alignment(const EmbeddingBatch& batch) {
  batch.validate();
  const Matrix U = normalize_rows(batch.features);
  const auto sets = class_index_sets(batch);
  constexpr int kPairCap = 200;
  double acc = 0.0;
  for (int c = 0; c < batch.num_classes; ++c) {
    const auto& idx = sets[c];
    const int n = static_cast<int>(idx.size());
    if (n < 2) continue;
    double sum = 0.0;
    long pairs = 0;
    if (n <= kPairCap) {
      for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
          sum += (U.row(idx[a]) - U.row(idx[b])).squaredNorm();
          ++pairs;
        }
      }
    } else {
      RandomSource rng(0x9e3779b9u + static_cast<std::uint64_t>(c));
      const long want = static_cast<long>(kPairCap) * (kPairCap - 1) / 2;
      for (long p = 0; p < want; ++p) {
        const int a = static_cast<int>(rng.below(n));
        int b = static_cast<int>(rng.below(n - 1));
        if (b >= a) ++b;
        sum += (U.row(idx[a]) - U.row(idx[b])).squaredNorm();
        ++pairs;
      }
    }
    acc += sum / static_cast<double>(pairs);
  }
  return acc / batch.num_classes;
}

double matrix_entropy(const Matrix& G) {
  if (std::abs(G.trace() - 1.0) > 1e-9) {
    throw std::invalid_argument("matrix_entropy: trace != 1");
  }
  const Vector ev = sym_eigenvalues(G);
  if (ev.minCoeff() < -1e-8) {
    throw std::invalid_argument("matrix_entropy: matrix is not PSD");
  }
  double H = 0.0;
  for (Index i = 0; i < ev.size(); ++i) {
    if (ev[i] > 0.0) H -= ev[i] * std::log(ev[i]);
  }
  return H;
}

namespace {

struct EntropyTriple {
  double h_w;
  double h_m;
  double h_prod;
};

EntropyTriple entropy_triple(const Matrix& G_W, const Matrix& G_M) {
  if (G_W.rows() != G_M.rows() || G_W.cols() != G_M.cols()) {
    throw std::invalid_argument("mir/hdr: Gram shape mismatch");
  }
  EntropyTriple t;
  t.h_w = matrix_entropy(G_W);
  t.h_m = matrix_entropy(G_M);
  Matrix P = G_W.cwiseProduct(G_M);
  const double tr = P.trace();
  if (tr <= 0.0) {
    throw std::invalid_argument("mir/hdr: Hadamard product has zero trace");
  }
  t.h_prod = matrix_entropy(Matrix(P / tr));
  return t;
}

} // namespace

double mir(const Matrix& G_W, const Matrix& G_M) {
  const EntropyTriple t = entropy_triple(G_W, G_M);
  const double denom = std::min(t.h_w, t.h_m);
  if (denom <= 0.0) throw std::runtime_error("degenerate entropy");
  return (t.h_w + t.h_m - t.h_prod) / denom;
}

double hdr(const Matrix& G_W, const Matrix& G_M) {
  const EntropyTriple t = entropy_triple(G_W, G_M);
  const double denom = std::max(t.h_w, t.h_m);
  if (denom <= 0.0) throw std::runtime_error("degenerate entropy");
  return std::abs(t.h_w - t.h_m) / denom;
}

NCReport nc_report(const EmbeddingBatch& batch, const PrototypeSet& W) {
  batch.validate();
  EmbeddingBatch unit = batch;
  unit.features = normalize_rows(batch.features);

  NCReport report;
  report.erank_intra = erank_intra(unit);
  report.erank_inter =
      batch.num_classes >= 2 ? erank_inter(unit) : 0.0;
  report.erank_weights = erank_weights(W.weights);
  report.weight_alignment = weight_alignment(unit, W);
  report.instance_alignment = instance_alignment(unit);

  const Matrix G_W = gram(W.weights, true);
  const Matrix G_M = gram(normalize_rows(class_means(unit)), true);
  const EntropyTriple t = entropy_triple(G_W, G_M);
  if (std::max(t.h_w, t.h_m) <= 0.0) {
    // Both Grams rank-1: the fully degenerate pair (K=2 at collapse),
    // reported at its collapse-limit values instead of erroring out of a
    // whole trace.
    report.mir = 1.0;
    report.hdr = 0.0;
  } else if (std::min(t.h_w, t.h_m) <= 0.0) {
    // One rank-1 Gram (transient total-collapse states mid-training). The
    // mir numerator and denominator both vanish at the small-entropy scale;
    // record the limit so a trace survives the transient. hdr stays exact.
    report.mir = 1.0;
    report.hdr = std::abs(t.h_w - t.h_m) / std::max(t.h_w, t.h_m);
  } else {
    report.mir = (t.h_w + t.h_m - t.h_prod) / std::min(t.h_w, t.h_m);
    report.hdr = std::abs(t.h_w - t.h_m) / std::max(t.h_w, t.h_m);
  }

  long correct = 0;
  for (Index i = 0; i < unit.size(); ++i) {
    Index best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < W.num_classes(); ++c) {
      const double score = unit.features.row(i).dot(W.weights.row(c));
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    if (best == unit.labels[i]) ++correct;
  }
  report.train_accuracy =
      static_cast<double>(correct) / static_cast<double>(unit.size());
  return report;
}

ConvergenceQuery nc95_query(const std::string& metric, Direction direction,
                            double optimum_or_initial) {
  ConvergenceQuery q;
  q.metric = metric;
  q.direction = direction;
  q.tolerance = 0.05;
  q.alpha = 0.1;
  q.target = direction == Direction::maximize ? 0.95 * optimum_or_initial
                                              : 0.05 * optimum_or_initial;
  return q;
}

namespace {

double metric_value(const TraceRecord& r, const std::string& name) {
  if (name == "loss") return r.loss;
  if (name == "acc" || name == "train_accuracy") return r.report.train_accuracy;
  if (name == "erank_intra") return r.report.erank_intra;
  if (name == "erank_inter") return r.report.erank_inter;
  if (name == "erank_weights") return r.report.erank_weights;
  if (name == "align_w" || name == "weight_alignment") {
    return r.report.weight_alignment;
  }
  if (name == "align_inst" || name == "instance_alignment") {
    return r.report.instance_alignment;
  }
  if (name == "mir") return r.report.mir;
  if (name == "hdr") return r.report.hdr;
  throw std::invalid_argument("unknown metric name: " + name);
}

} // namespace

std::optional<long> convergence_iteration(
    const std::vector<TraceRecord>& records, const ConvergenceQuery& query) {
  if (records.empty()) {
    throw std::invalid_argument("convergence_iteration: empty trace");
  }
  if (!(query.tolerance > 0.0 && query.tolerance < 1.0)) {
    throw std::invalid_argument("convergence_iteration: tolerance not in (0,1)");
  }
  if (!(query.alpha > 0.0 && query.alpha <= 1.0)) {
    throw std::invalid_argument("convergence_iteration: alpha not in (0,1]");
  }
  const std::size_t n = records.size();
  std::vector<double> ewma(n);
  double acc = metric_value(records[0], query.metric);
  ewma[0] = acc;
  for (std::size_t k = 1; k < n; ++k) {
    acc = query.alpha * metric_value(records[k], query.metric) +
          (1.0 - query.alpha) * acc;
    ewma[k] = acc;
  }

  const double initial = metric_value(records[0], query.metric);
  auto converged = [&](double v) {
    if (query.direction == Direction::maximize) {
      return v >= query.target * (1.0 - query.tolerance);
    }
    return v <= query.target + query.tolerance * initial;
  };

  // Walk backwards to find the start of the final converged suffix.
  if (!converged(ewma[n - 1])) return std::nullopt;
  std::size_t start = n - 1;
  while (start > 0 && converged(ewma[start - 1])) --start;
  return records[start].iteration;
}

} // namespace proto
