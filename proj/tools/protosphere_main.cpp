// Command-line front end: prototype-contrast training on the unit
// hypersphere, collapse metrics, and the numerical certification suite.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "protosphere/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerifyFailed = 3;

struct ModeArgs {
  std::string config_path;
  std::string out_flag;
};

int dispatch(const std::string& mode, const ModeArgs& args) {
  proto::ExperimentConfig config;
  try {
    config = proto::parse_config(args.config_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  if (config.mode != mode) {
    std::cerr << "config error: config mode '" << config.mode
              << "' does not match subcommand '" << mode << "'\n";
    return kExitUsage;
  }
  const auto out_dir =
      proto::resolve_output_dir(args.out_flag, config.output_dir, mode);
  try {
    if (mode == "ufm") {
      proto::run_ufm(config, out_dir);
    } else if (mode == "encoder") {
      proto::run_encoder(config, out_dir);
    } else {
      proto::run_sweep(config, out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  std::cout << "artifacts written to " << out_dir.string() << "\n";
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"prototype learning on the hypersphere"};
  app.require_subcommand(1);

  ModeArgs ufm_args;
  CLI::App* ufm = app.add_subcommand("ufm", "optimize free features on the sphere");
  ufm->add_option("config", ufm_args.config_path, "config file")->required();
  ufm->add_option("--out", ufm_args.out_flag, "output directory");

  ModeArgs enc_args;
  CLI::App* enc = app.add_subcommand("encoder", "train the synthetic-data encoder");
  enc->add_option("config", enc_args.config_path, "config file")->required();
  enc->add_option("--out", enc_args.out_flag, "output directory");

  ModeArgs sweep_args;
  CLI::App* sweep = app.add_subcommand("sweep", "temperature x batch grid runs");
  sweep->add_option("config", sweep_args.config_path, "config file")->required();
  sweep->add_option("--out", sweep_args.out_flag, "output directory");

  proto::VerifyOptions verify_options;
  std::string verify_out;
  CLI::App* verify = app.add_subcommand("verify", "run the certification suite");
  verify->add_option("--seed", verify_options.seed, "master seed");
  verify->add_option("--trials", verify_options.trials, "trials per bound check");
  verify->add_option("--nc-seeds", verify_options.nc_seeds,
                     "optimization seeds per loss");
  verify->add_option("--nc-steps", verify_options.nc_steps,
                     "step budget per optimization run");
  verify->add_option("--inject", verify_options.inject,
                     "fault-injection hook: force the named check to fail");
  verify->add_option("--out", verify_out, "output directory");

  std::string metrics_embeddings;
  std::string metrics_weights;
  CLI::App* metrics = app.add_subcommand("metrics", "NC report for an embeddings file");
  metrics->add_option("embeddings", metrics_embeddings, "embeddings csv")->required();
  metrics->add_option("--weights", metrics_weights, "weights csv");

  int etf_k = 0;
  int etf_d = 0;
  std::uint64_t etf_seed = 42;
  std::string etf_out;
  CLI::App* etf = app.add_subcommand("etf", "emit a simplex ETF embeddings file");
  etf->add_option("--k", etf_k, "number of classes")->required();
  etf->add_option("--d", etf_d, "embedding dimension")->required();
  etf->add_option("--seed", etf_seed, "orientation seed");
  etf->add_option("--out", etf_out, "output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (ufm->parsed()) return dispatch("ufm", ufm_args);
    if (enc->parsed()) return dispatch("encoder", enc_args);
    if (sweep->parsed()) return dispatch("sweep", sweep_args);
    if (verify->parsed()) {
      const auto out_dir = proto::resolve_output_dir(verify_out, "", "verify");
      bool ok = false;
      try {
        ok = proto::run_verify(verify_options, out_dir);
      } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
      }
      std::cout << (ok ? "all checks passed" : "verification FAILED") << "\n";
      return ok ? kExitOk : kExitVerifyFailed;
    }
    if (metrics->parsed()) {
      std::string note;
      const proto::NCReport report =
          proto::compute_metrics(metrics_embeddings, metrics_weights, &note);
      std::cout << note << "\n";
      std::cout << "erank_intra = " << report.erank_intra << "\n"
                << "erank_inter = " << report.erank_inter << "\n"
                << "erank_weights = " << report.erank_weights << "\n"
                << "weight_alignment = " << report.weight_alignment << "\n"
                << "instance_alignment = " << report.instance_alignment << "\n"
                << "mir = " << report.mir << "\n"
                << "hdr = " << report.hdr << "\n"
                << "train_accuracy = " << report.train_accuracy << "\n";
      return kExitOk;
    }
    if (etf->parsed()) {
      proto::emit_etf(etf_k, etf_d, etf_seed, etf_out);
      std::cout << "wrote " << etf_out << "\n";
      return kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
