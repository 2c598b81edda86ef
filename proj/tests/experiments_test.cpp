#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "protosphere/io.hpp"
#include "protosphere/numerics.hpp"
#include "protosphere/runner.hpp"

using namespace proto;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("protosphere_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(PROTOSPHERE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

} // namespace

TEST_CASE("doubles survive the text round trip exactly") {
  RandomSource rng(3);
  for (int i = 0; i < 200; ++i) {
    const double v = std::exp(20.0 * rng.normal());
    const double back = std::stod(format_double(v));
    CHECK(back == v);
  }
}

TEST_CASE("embeddings file round trip") {
  const fs::path dir = temp_dir("embeddings");
  RandomSource rng(5);
  const Matrix features = gaussian_matrix(rng, 12, 4);
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) labels.push_back(i % 3);

  write_embeddings(dir / "e.csv", features, labels);
  const EmbeddingBatch batch = read_embeddings(dir / "e.csv");
  CHECK(batch.features == features);  // bit-exact through 17 digits
  CHECK(batch.labels == labels);
  CHECK(batch.num_classes == 3);

  // Ragged row errors with its line number.
  std::ofstream out(dir / "ragged.csv");
  out << "label,f0,f1\n0,1.0,2.0\n1,3.0\n";
  out.close();
  CHECK_THROWS_WITH_AS(read_embeddings(dir / "ragged.csv"),
                       doctest::Contains("ragged.csv:3"), std::runtime_error);

  CHECK_THROWS_AS(read_embeddings(dir / "missing.csv"), std::runtime_error);
}

TEST_CASE("weights file round trip with and without bias") {
  const fs::path dir = temp_dir("weights");
  RandomSource rng(7);
  const Matrix w = gaussian_matrix(rng, 4, 5);

  write_weights(dir / "plain.csv", w);
  const WeightsFile plain = read_weights(dir / "plain.csv");
  CHECK(plain.weights == w);
  CHECK_FALSE(plain.bias.has_value());

  Vector b(4);
  b << 0.5, -1.25, 3.0, 0.0;
  write_weights(dir / "bias.csv", w, b);
  const WeightsFile biased = read_weights(dir / "bias.csv");
  CHECK(biased.weights == w);
  REQUIRE(biased.bias.has_value());
  CHECK(*biased.bias == b);
}

TEST_CASE("trace file round trip and monotonicity enforcement") {
  const fs::path dir = temp_dir("trace");
  std::vector<TraceRecord> records(3);
  for (int i = 0; i < 3; ++i) {
    records[i].iteration = i * 50;
    records[i].loss = 1.0 / (i + 1);
    records[i].report.erank_inter = 3.0 + i;
    records[i].report.mir = 0.9;
  }
  write_trace(dir / "t.csv", records);
  const auto back = read_trace(dir / "t.csv");
  REQUIRE(back.size() == 3);
  CHECK(back[2].loss == records[2].loss);
  CHECK(back[1].report.erank_inter == 4.0);

  std::ofstream out(dir / "bad.csv");
  out << kTraceHeader << "\n";
  out << "50,1,0,0,0,0,0,0,0,0\n10,1,0,0,0,0,0,0,0,0\n";
  out.close();
  CHECK_THROWS_WITH_AS(read_trace(dir / "bad.csv"),
                       doctest::Contains("iterations must increase"),
                       std::runtime_error);
}

TEST_CASE("manifest round trip") {
  const fs::path dir = temp_dir("manifest");
  std::map<std::string, std::string> entries = {
      {"seed", "42"}, {"tool", "protosphere 0.1.0"}, {"mode", "ufm"}};
  write_manifest(dir / "m.json", entries);
  CHECK(read_manifest(dir / "m.json") == entries);
}

TEST_CASE("config parsing: defaults, strictness, round trip") {
  const std::string minimal = R"({"mode": "ufm", "ufm": {"loss": "nonl"}})";
  const ExperimentConfig config = parse_config_text(minimal);
  CHECK(config.mode == "ufm");
  CHECK(config.ufm.optim.loss_kind == LossKind::nonl);
  CHECK(config.ufm.optim.min_lr_factor == 0.001);  // documented default
  CHECK(config.ufm.num_classes == 10);
  CHECK(config.ufm.tau == 0.1);

  // Unknown keys are fatal and name the key with its line.
  const std::string typo = "{\n  \"mode\": \"ufm\",\n  \"ufm\": {\n    \"tua\": 0.2\n  }\n}";
  CHECK_THROWS_WITH_AS(parse_config_text(typo),
                       doctest::Contains("unknown key 'ufm.tua' (line 4)"),
                       std::runtime_error);

  CHECK_THROWS_WITH_AS(
      parse_config_text(R"({"mode": "ufm", "ufm": {"steps": "many"}})"),
      doctest::Contains("type mismatch for key 'ufm.steps'"),
      std::runtime_error);

  CHECK_THROWS_AS(parse_config_text(R"({"mode": "dance"})"),
                  std::runtime_error);
  CHECK_THROWS_AS(parse_config_text("{ not json"), std::runtime_error);
  CHECK_THROWS_AS(
      parse_config_text(R"({"mode": "sweep", "sweep": {"taus": []}})"),
      std::runtime_error);

  // serialize(parse(x)) reparses to an equal config.
  const std::string serialized = serialize_config(config);
  const ExperimentConfig reparsed = parse_config_text(serialized);
  CHECK(serialize_config(reparsed) == serialized);
}

TEST_CASE("emit_etf / compute_metrics pipeline self-consistency") {
  const fs::path dir = temp_dir("etf");
  for (int K : {2, 3, 5, 10, 16, 32}) {
    const fs::path path = dir / ("etf" + std::to_string(K) + ".csv");
    emit_etf(K, K, 7, path);
    std::string note;
    const NCReport report = compute_metrics(path, "", &note);
    CAPTURE(K);
    CHECK(note == "prototypes: class means (FP)");
    CHECK(std::abs(report.erank_inter - (K - 1)) < 1e-6);
    CHECK(report.train_accuracy == 1.0);
    CHECK(report.hdr == 0.0);

    // Reread: text precision keeps the Gram deviations tiny.
    const EmbeddingBatch back = read_embeddings(path);
    const EtfReport etf = is_simplex_etf(back.features, 1e-9);
    CHECK(etf.pass);
  }
  CHECK_THROWS_AS(emit_etf(10, 8, 7, dir / "bad.csv"), std::invalid_argument);

  // K=2, d=1 writes the antipodal pair.
  emit_etf(2, 1, 3, dir / "pair.csv");
  const EmbeddingBatch pair = read_embeddings(dir / "pair.csv");
  CHECK(pair.features(0, 0) == doctest::Approx(1.0));
  CHECK(pair.features(1, 0) == doctest::Approx(-1.0));
}

TEST_CASE("compute_metrics with an explicit weights file") {
  const fs::path dir = temp_dir("metrics");
  emit_etf(4, 6, 11, dir / "embed.csv");
  const EmbeddingBatch batch = read_embeddings(dir / "embed.csv");
  write_weights(dir / "w.csv", batch.features);
  std::string note;
  const NCReport report = compute_metrics(dir / "embed.csv", dir / "w.csv", &note);
  CHECK(note == "prototypes: weights file");
  CHECK(report.train_accuracy == 1.0);

  write_weights(dir / "short.csv", Matrix(batch.features.topRows(2)));
  CHECK_THROWS_WITH_AS(compute_metrics(dir / "embed.csv", dir / "short.csv"),
                       doctest::Contains("rows != number of classes"),
                       std::runtime_error);
}

TEST_CASE("run_ufm writes reproducible artifacts") {
  const fs::path dir = temp_dir("run_ufm");
  ExperimentConfig config;
  config.mode = "ufm";
  config.ufm.optim.loss_kind = LossKind::nonl;
  config.ufm.optim.steps = 200;
  config.ufm.optim.eval_every = 50;
  config.ufm.optim.base_lr = 0.5;
  config.ufm.optim.seed = 3;
  config.ufm.num_classes = 4;
  config.ufm.per_class = 5;
  config.ufm.dim = 6;
  config.ufm.tau = 0.2;

  run_ufm(config, dir / "a");
  run_ufm(config, dir / "b");
  CHECK(fs::exists(dir / "a" / "trace.csv"));
  CHECK(fs::exists(dir / "a" / "manifest.json"));
  CHECK(fs::exists(dir / "a" / "embeddings.csv"));
  CHECK(fs::exists(dir / "a" / "weights.csv"));

  // Byte-identical traces for identical (config, seed).
  CHECK(slurp(dir / "a" / "trace.csv") == slurp(dir / "b" / "trace.csv"));
  const auto records = read_trace(dir / "a" / "trace.csv");
  CHECK(records.size() == 200 / 50 + 1);

  const auto manifest = read_manifest(dir / "a" / "manifest.json");
  CHECK(manifest.count("config") == 1);
  CHECK(manifest.at("run.seed") == "3");

  // The embeddings/weights round trip reproduces the final NC report.
  std::string note;
  const NCReport report =
      compute_metrics(dir / "a" / "embeddings.csv", dir / "a" / "weights.csv",
                      &note);
  CHECK(report.erank_inter ==
        doctest::Approx(records.back().report.erank_inter).epsilon(1e-9));
}

TEST_CASE("run_encoder artifacts: probes table for scl, bias column for ce") {
  const fs::path dir = temp_dir("run_encoder");
  ExperimentConfig config;
  config.mode = "encoder";
  config.dataset = {4, 20, 8, 6.0, 0.5, 13, 0};
  config.encoder.train.loss_kind = LossKind::scl;
  config.encoder.train.epochs = 20;
  config.encoder.train.batch_size = 20;
  config.encoder.train.base_lr = 0.2;
  config.encoder.train.tau = 0.2;
  config.encoder.train.augment_sigma = 0.1;
  config.encoder.train.eval_every = 10;
  config.encoder.hidden = {12};
  config.encoder.embed_dim = 6;
  config.encoder.probe_steps = 500;

  run_encoder(config, dir / "scl");
  // Comparison table carries all three classifiers.
  const std::string cmp = slurp(dir / "scl" / "comparison.csv");
  CHECK(cmp.find("classifier,train_acc,val_acc") == 0);
  CHECK(cmp.find("fp,") != std::string::npos);
  CHECK(cmp.find("nlp,") != std::string::npos);
  CHECK(cmp.find("ce_probe,") != std::string::npos);
  CHECK(fs::exists(dir / "scl" / "fp.csv"));
  CHECK(fs::exists(dir / "scl" / "nlp.csv"));
  CHECK_FALSE(read_weights(dir / "scl" / "classifier.csv").bias.has_value());
  // The CE probe's file has the bias column.
  CHECK(read_weights(dir / "scl" / "ce_probe.csv").bias.has_value());

  config.encoder.train.loss_kind = LossKind::ce;
  config.encoder.evaluate_probes = false;
  run_encoder(config, dir / "ce");
  const WeightsFile clf = read_weights(dir / "ce" / "classifier.csv");
  CHECK(clf.bias.has_value());
  CHECK(clf.weights.rows() == 4);
  CHECK_FALSE(fs::exists(dir / "ce" / "comparison.csv"));
}

TEST_CASE("run_sweep: grid, aggregate, resume") {
  const fs::path dir = temp_dir("sweep");
  ExperimentConfig config;
  config.mode = "sweep";
  config.dataset = {3, 12, 6, 6.0, 0.8, 9, 4};  // K, per_class, dim, sep, noise, seed, val
  config.encoder.train.loss_kind = LossKind::nonl;
  config.encoder.train.epochs = 6;
  config.encoder.train.base_lr = 0.2;
  config.encoder.train.eval_every = 2;
  config.encoder.hidden = {8};
  config.encoder.embed_dim = 4;
  config.sweep.taus = {0.1, 0.5};
  config.sweep.batch_sizes = {12};
  config.sweep.seeds = {1};
  config.sweep.workers = 2;

  run_sweep(config, dir);
  REQUIRE(fs::exists(dir / "aggregate.csv"));
  const std::string agg = slurp(dir / "aggregate.csv");
  CHECK(agg.find("tau,batch,seed,final_acc,final_erank_inter,iters_to_95") == 0);
  int rows = 0;
  for (char ch : agg) rows += ch == '\n' ? 1 : 0;
  CHECK(rows == 3);  // header + one row per cell
  CHECK_FALSE(fs::exists(dir / "failures.csv"));

  // Resume: completed cells are skipped (results untouched, aggregate same).
  const auto stamp =
      fs::last_write_time(dir / "cells" / "tau0.1_b12_s1" / "result.csv");
  run_sweep(config, dir);
  CHECK(fs::last_write_time(dir / "cells" / "tau0.1_b12_s1" / "result.csv") ==
        stamp);
  CHECK(slurp(dir / "aggregate.csv") == agg);
}

TEST_CASE("sweep shows the moderate-temperature accuracy band") {
  // Directional check on overlapping clouds: validation accuracy at a
  // moderate temperature beats the same run at tau = 1.
  const fs::path dir = temp_dir("sweep_band");
  ExperimentConfig config;
  config.mode = "sweep";
  config.dataset = {10, 100, 20, 3.0, 1.4, 42, 30};
  config.encoder.train.loss_kind = LossKind::nonl;
  config.encoder.train.epochs = 80;
  config.encoder.train.base_lr = 0.2;
  config.encoder.train.eval_every = 20;
  config.encoder.hidden = {32};
  config.encoder.embed_dim = 16;
  config.sweep.taus = {0.1, 1.0};
  config.sweep.batch_sizes = {128};
  config.sweep.seeds = {42};
  config.sweep.workers = 2;
  run_sweep(config, dir);

  std::ifstream agg(dir / "aggregate.csv");
  std::string line;
  std::getline(agg, line);  // header
  double acc_small = -1.0;
  double acc_large = -1.0;
  while (std::getline(agg, line)) {
    std::istringstream row(line);
    std::string tau, batch, seed, acc;
    std::getline(row, tau, ',');
    std::getline(row, batch, ',');
    std::getline(row, seed, ',');
    std::getline(row, acc, ',');
    if (std::stod(tau) == 0.1) acc_small = std::stod(acc);
    if (std::stod(tau) == 1.0) acc_large = std::stod(acc);
  }
  REQUIRE(acc_small >= 0.0);
  REQUIRE(acc_large >= 0.0);
  CHECK(acc_small > acc_large);
}

TEST_CASE("output directory resolution order") {
  setenv("PROTOSPHERE_OUT_ROOT", "/tmp/proto_root", 1);
  CHECK(resolve_output_dir("cli", "cfg", "name") == fs::path("cli"));
  CHECK(resolve_output_dir("", "cfg", "name") == fs::path("cfg"));
  CHECK(resolve_output_dir("", "", "name") == fs::path("/tmp/proto_root/name"));
  unsetenv("PROTOSPHERE_OUT_ROOT");
  CHECK(resolve_output_dir("", "", "name") == fs::path("out") / "name");
}

TEST_CASE("cli exit codes") {
  const fs::path dir = temp_dir("cli");

  // Usage errors -> 1.
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("ufm /nonexistent/config.json") == 1);
  {
    std::ofstream bad(dir / "typo.json");
    bad << R"({"mode": "ufm", "ufm": {"tua": 0.1}})";
  }
  CHECK(run_cli("ufm " + (dir / "typo.json").string()) == 1);
  {
    std::ofstream mismatch(dir / "mode.json");
    mismatch << R"({"mode": "encoder"})";
  }
  CHECK(run_cli("ufm " + (dir / "mode.json").string()) == 1);

  // Successful tiny ufm run -> 0, artifacts present.
  {
    std::ofstream ok(dir / "ufm.json");
    ok << R"({"mode": "ufm", "output_dir": ")" << (dir / "run").string()
       << R"(", "ufm": {"loss": "nonl", "steps": 100, "eval_every": 50,
           "num_classes": 3, "per_class": 4, "dim": 5, "tau": 0.3}})";
  }
  CHECK(run_cli("ufm " + (dir / "ufm.json").string()) == 0);
  CHECK(fs::exists(dir / "run" / "trace.csv"));

  // Runtime failure -> 2 (metrics on a missing file).
  CHECK(run_cli("metrics " + (dir / "nope.csv").string()) == 2);

  // etf + metrics round trip -> 0.
  CHECK(run_cli("etf --k 5 --d 8 --out " + (dir / "etf.csv").string()) == 0);
  CHECK(run_cli("metrics " + (dir / "etf.csv").string()) == 0);
  CHECK(run_cli("etf --k 5 --d 3 --out " + (dir / "bad.csv").string()) == 2);
}

TEST_CASE("cli verify exit codes: pass and injected failure") {
  const fs::path dir = temp_dir("cli_verify");
  const std::string base =
      "verify --trials 40 --nc-seeds 1 --out " + dir.string();
  CHECK(run_cli(base) == 0);
  CHECK(fs::exists(dir / "verify_results.csv"));
  CHECK(run_cli(base + " --inject jensen_nonl") == 3);
  CHECK(run_cli(base + " --inject not_a_check") == 1);
}
