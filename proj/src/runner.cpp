#include "protosphere/runner.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "protosphere/classify.hpp"
#include "protosphere/io.hpp"

namespace proto {

namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> base_manifest(const ExperimentConfig& config,
                                                 double wall_seconds) {
  std::map<std::string, std::string> m;
  m["tool"] = "protosphere 0.1.0";
  m["config"] = serialize_config(config);
  m["mode"] = config.mode;
  m["wall_clock_seconds"] = format_double(wall_seconds);
  return m;
}

void print_report(const NCReport& report) {
  std::cout << "erank_intra = " << report.erank_intra << "\n"
            << "erank_inter = " << report.erank_inter << "\n"
            << "erank_weights = " << report.erank_weights << "\n"
            << "weight_alignment = " << report.weight_alignment << "\n"
            << "instance_alignment = " << report.instance_alignment << "\n"
            << "mir = " << report.mir << "\n"
            << "hdr = " << report.hdr << "\n"
            << "train_accuracy = " << report.train_accuracy << "\n";
}

} // namespace

fs::path resolve_output_dir(const std::string& cli_flag,
                            const std::string& config_dir,
                            const std::string& default_name) {
  if (!cli_flag.empty()) return cli_flag;
  if (!config_dir.empty()) return config_dir;
  if (const char* root = std::getenv("PROTOSPHERE_OUT_ROOT")) {
    return fs::path(root) / default_name;
  }
  return fs::path("out") / default_name;
}

NCReport run_ufm(const ExperimentConfig& config, const fs::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  const UfmConfig& ufm = config.ufm;
  UfmState init = random_ufm_state(ufm.num_classes, ufm.per_class, ufm.dim,
                                   ufm.tau, ufm.optim.seed);
  UfmResult result = ufm_optimize(ufm.optim, std::move(init));

  fs::create_directories(out_dir);
  write_trace(out_dir / "trace.csv", result.trace.records);
  write_embeddings(out_dir / "embeddings.csv", result.state.features,
                   result.state.labels);
  if (ufm.optim.loss_kind == LossKind::ce) {
    write_weights(out_dir / "weights.csv", result.state.prototypes,
                  result.state.bias);
  } else {
    write_weights(out_dir / "weights.csv",
                  reporting_prototypes(ufm.optim.loss_kind, result.state).weights);
  }
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  auto manifest = base_manifest(config, wall);
  for (const auto& [k, v] : result.trace.manifest) manifest["run." + k] = v;
  write_manifest(out_dir / "manifest.json", manifest);

  const NCReport summary = result.trace.records.back().report;
  print_report(summary);
  return summary;
}

namespace {

struct EncoderArtifacts {
  TrainResult result;
  SyntheticDataset train;
  SyntheticDataset val;  // empty when no split requested
  bool has_val = false;
};

EncoderArtifacts train_from_config(const ExperimentConfig& config) {
  const DatasetConfig& ds = config.dataset;
  EncoderArtifacts art;
  SyntheticDataset full =
      make_blobs(ds.num_classes, ds.per_class + ds.val_per_class, ds.input_dim,
                 ds.separation, ds.noise_sigma, ds.seed);
  if (ds.val_per_class > 0) {
    auto [train, val] = split_dataset(full, ds.per_class);
    art.train = std::move(train);
    art.val = std::move(val);
    art.has_val = true;
  } else {
    art.train = std::move(full);
  }
  const MlpSpec spec = mlp_spec_from(config.encoder, ds.input_dim);
  art.result = train_encoder(art.train, spec, config.encoder.train);
  return art;
}

// Classifier matching how the run was trained: affine head for CE, trained
// prototypes for the normalized losses, class means for the contrastive ones.
Classifier run_classifier(const EncoderRunConfig& encoder,
                          const TrainResult& result,
                          const EmbeddingBatch& train_embeddings) {
  Classifier clf;
  switch (encoder.train.loss_kind) {
    case LossKind::ce:
      clf.kind = ClassifierKind::ce_probe;
      clf.weights = result.ce_weights;
      clf.bias = result.ce_bias;
      break;
    case LossKind::normface:
    case LossKind::ntce:
    case LossKind::nonl:
      clf.kind = ClassifierKind::normalized_probe;
      clf.weights = normalize_rows(result.prototypes);
      break;
    case LossKind::scl:
    case LossKind::proto_softmax:
      clf = fixed_prototypes(train_embeddings);
      break;
  }
  return clf;
}

} // namespace

NCReport run_encoder(const ExperimentConfig& config, const fs::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  EncoderArtifacts art = train_from_config(config);
  const MlpSpec spec = mlp_spec_from(config.encoder, config.dataset.input_dim);

  const ForwardCache train_cache =
      forward(spec, art.result.params, art.train.inputs);
  EmbeddingBatch train_embed{train_cache.embeddings, art.train.labels,
                             art.train.num_classes};
  EmbeddingBatch train_raw{train_cache.raw, art.train.labels,
                           art.train.num_classes};

  fs::create_directories(out_dir);
  write_trace(out_dir / "trace.csv", art.result.trace.records);
  write_embeddings(out_dir / "embeddings.csv", train_cache.embeddings,
                   art.train.labels);
  const Classifier clf =
      run_classifier(config.encoder, art.result, train_embed);
  if (clf.bias) {
    write_weights(out_dir / "classifier.csv", clf.weights, clf.bias);
  } else {
    write_weights(out_dir / "classifier.csv", clf.weights);
  }

  if (config.encoder.evaluate_probes) {
    ProbeConfig probe;
    probe.steps = config.encoder.probe_steps;
    probe.base_lr = config.encoder.probe_lr;
    probe.tau = config.encoder.train.tau;
    probe.seed = config.encoder.train.seed + 1;

    const Classifier fp = fixed_prototypes(train_embed);
    const Classifier nlp = train_normalized_probe(train_embed, probe);
    const Classifier cep = train_ce_probe(train_raw, probe);
    write_weights(out_dir / "fp.csv", fp.weights);
    write_weights(out_dir / "nlp.csv", nlp.weights);
    write_weights(out_dir / "ce_probe.csv", cep.weights, cep.bias);

    std::ofstream cmp(out_dir / "comparison.csv");
    cmp << "classifier,train_acc,val_acc\n";
    auto emit = [&](const char* name, const Classifier& c, bool raw_inputs) {
      const double train_acc = accuracy(
          predict(c, raw_inputs ? train_raw : train_embed), art.train.labels);
      double val_acc = -1.0;
      if (art.has_val) {
        const ForwardCache vc = forward(spec, art.result.params, art.val.inputs);
        EmbeddingBatch val_embed{vc.embeddings, art.val.labels,
                                 art.val.num_classes};
        EmbeddingBatch val_raw{vc.raw, art.val.labels, art.val.num_classes};
        val_acc = accuracy(predict(c, raw_inputs ? val_raw : val_embed),
                           art.val.labels);
      }
      cmp << name << ',' << format_double(train_acc) << ','
          << format_double(val_acc) << "\n";
    };
    emit("fp", fp, false);
    emit("nlp", nlp, false);
    emit("ce_probe", cep, true);
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  auto manifest = base_manifest(config, wall);
  for (const auto& [k, v] : art.result.trace.manifest) {
    manifest["run." + k] = v;
  }
  write_manifest(out_dir / "manifest.json", manifest);

  const NCReport summary = art.result.trace.records.back().report;
  print_report(summary);
  return summary;
}

namespace {

struct SweepCell {
  double tau;
  int batch;
  std::uint64_t seed;
};

std::string cell_name(const SweepCell& cell) {
  std::ostringstream os;
  os << "tau" << cell.tau << "_b" << cell.batch << "_s" << cell.seed;
  return os.str();
}

} // namespace

void run_sweep(const ExperimentConfig& config, const fs::path& out_dir) {
  std::vector<SweepCell> cells;
  for (double tau : config.sweep.taus) {
    for (int batch : config.sweep.batch_sizes) {
      for (std::uint64_t seed : config.sweep.seeds) {
        cells.push_back({tau, batch, seed});
      }
    }
  }
  fs::create_directories(out_dir / "cells");

  std::mutex failures_mutex;
  std::vector<std::string> failures;
  auto run_cell = [&](const SweepCell& cell) {
    const fs::path cell_dir = out_dir / "cells" / cell_name(cell);
    const fs::path done = cell_dir / "result.csv";
    if (fs::exists(done)) return;  // resume: cell already finished
    try {
      ExperimentConfig cell_config = config;
      cell_config.encoder.train.tau = cell.tau;
      cell_config.encoder.train.batch_size = cell.batch;
      cell_config.encoder.train.seed = cell.seed;
      cell_config.encoder.evaluate_probes = false;

      EncoderArtifacts art = train_from_config(cell_config);
      const MlpSpec spec =
          mlp_spec_from(cell_config.encoder, cell_config.dataset.input_dim);
      const ForwardCache cache =
          forward(spec, art.result.params, art.train.inputs);
      EmbeddingBatch train_embed{cache.embeddings, art.train.labels,
                                 art.train.num_classes};
      const Classifier clf =
          run_classifier(cell_config.encoder, art.result, train_embed);

      double final_acc;
      if (art.has_val) {
        const ForwardCache vc = forward(spec, art.result.params, art.val.inputs);
        const bool raw = cell_config.encoder.train.loss_kind == LossKind::ce;
        EmbeddingBatch val{raw ? vc.raw : vc.embeddings, art.val.labels,
                           art.val.num_classes};
        final_acc = accuracy(predict(clf, val), art.val.labels);
      } else {
        final_acc = art.result.trace.records.back().report.train_accuracy;
      }
      const double final_inter =
          art.result.trace.records.back().report.erank_inter;
      const auto& records = art.result.trace.records;
      const auto iters = convergence_iteration(
          records, nc95_query("erank_intra", Direction::minimize,
                              records.front().report.erank_intra));

      fs::create_directories(cell_dir);
      write_trace(cell_dir / "trace.csv", records);
      write_manifest(cell_dir / "manifest.json",
                     base_manifest(cell_config, 0.0));
      std::ofstream result(done);
      result << "tau,batch,seed,final_acc,final_erank_inter,iters_to_95\n"
             << format_double(cell.tau) << ',' << cell.batch << ',' << cell.seed
             << ',' << format_double(final_acc) << ','
             << format_double(final_inter) << ','
             << (iters ? std::to_string(*iters) : std::string("-1")) << "\n";
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(failures_mutex);
      std::ostringstream os;
      os << format_double(cell.tau) << ',' << cell.batch << ',' << cell.seed
         << ",\"" << e.what() << "\"";
      failures.push_back(os.str());
    }
  };

  const int workers = std::max(1, config.sweep.workers);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= cells.size()) break;
        run_cell(cells[i]);
      }
    });
  }
  for (auto& t : pool) t.join();

  // Aggregate in deterministic grid order from the per-cell files.
  std::ofstream agg(out_dir / "aggregate.csv");
  agg << "tau,batch,seed,final_acc,final_erank_inter,iters_to_95\n";
  for (const SweepCell& cell : cells) {
    const fs::path done = out_dir / "cells" / cell_name(cell) / "result.csv";
    if (!fs::exists(done)) continue;
    std::ifstream in(done);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (!line.empty()) agg << line << "\n";
    }
  }
  if (!failures.empty()) {
    std::ofstream fail(out_dir / "failures.csv");
    fail << "tau,batch,seed,error\n";
    for (const std::string& f : failures) fail << f << "\n";
  }
  write_manifest(out_dir / "manifest.json", base_manifest(config, 0.0));
}

NCReport compute_metrics(const fs::path& embeddings_path,
                         const fs::path& weights_path,
                         std::string* prototype_note) {
  const EmbeddingBatch batch = read_embeddings(embeddings_path);
  PrototypeSet prototypes;
  std::string note;
  if (!weights_path.empty()) {
    const WeightsFile file = read_weights(weights_path);
    if (file.weights.rows() != batch.num_classes) {
      throw std::runtime_error("weights file rows != number of classes");
    }
    if (file.weights.cols() != batch.dim()) {
      throw std::runtime_error("weights file dimension mismatch");
    }
    prototypes = PrototypeSet(normalize_rows(file.weights));
    note = "prototypes: weights file";
  } else {
    EmbeddingBatch unit = batch;
    unit.features = normalize_rows(batch.features);
    prototypes = PrototypeSet(normalize_rows(class_means(unit)));
    note = "prototypes: class means (FP)";
  }
  if (prototype_note) *prototype_note = note;
  return nc_report(batch, prototypes);
}

void emit_etf(int K, int d, std::uint64_t seed, const fs::path& path) {
  RandomSource rng(seed);
  const EtfFrame frame = simplex_etf(K, d, rng);
  std::vector<int> labels(K);
  for (int c = 0; c < K; ++c) labels[c] = c;
  write_embeddings(path, frame.directions, labels);
}

bool run_verify(const VerifyOptions& options, const fs::path& out_dir) {
  const std::vector<CheckResult> results = run_all(options);
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "verify_results.csv");
  out << "name,pass,violation,tolerance,trials,seed\n";
  for (const CheckResult& r : results) {
    out << r.name << ',' << (r.pass ? 1 : 0) << ',' << format_double(r.violation)
        << ',' << format_double(r.tolerance) << ',' << r.trials << ',' << r.seed
        << "\n";
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name
              << "  violation=" << r.violation << "  (" << r.detail << ")\n";
  }
  return all_pass(results);
}

} // namespace proto
