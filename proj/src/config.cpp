#include "protosphere/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace proto {

using nlohmann::json;

namespace {

// Best-effort line lookup for post-parse errors (the DOM has no positions).
int locate_line(const std::string& text, const std::string& key) {
  const std::string needle = "\"" + key + "\"";
  std::istringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.find(needle) != std::string::npos) return lineno;
  }
  return 0;
}

class Section {
 public:
  Section(const json& node, std::string path, const std::string& text)
      : node_(node), path_(std::move(path)), text_(text) {
    if (!node_.is_object()) {
      throw std::runtime_error("config section '" + path_ + "' must be an object");
    }
  }

  ~Section() = default;

  // Every key must be claimed by one of the getters below.
  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!claimed_.count(key)) {
        const int line = locate_line(text_, key);
        throw std::runtime_error("unknown key '" + qualify(key) + "'" +
                                 (line ? " (line " + std::to_string(line) + ")"
                                       : ""));
      }
    }
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  json child(const std::string& key) {
    claimed_.insert(key);
    return node_.at(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    claimed_.insert(key);
    if (!node_.contains(key)) return;
    try {
      out = node_.at(key).get<T>();
    } catch (const json::exception&) {
      const int line = locate_line(text_, key);
      throw std::runtime_error(
          "type mismatch for key '" + qualify(key) + "'" +
          (line ? " (line " + std::to_string(line) + ")" : ""));
    }
  }

  std::string qualify(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& node_;
  std::string path_;
  const std::string& text_;
  std::set<std::string> claimed_;
};

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw std::runtime_error("unknown activation: " + name);
}

std::string to_string(Activation a) {
  return a == Activation::tanh ? "tanh" : "relu";
}

void parse_ufm(const json& node, const std::string& text, UfmConfig& out) {
  Section s(node, "ufm", text);
  std::string loss = to_string(out.optim.loss_kind);
  s.get("loss", loss);
  out.optim.loss_kind = loss_kind_from_string(loss);
  s.get("steps", out.optim.steps);
  s.get("base_lr", out.optim.base_lr);
  s.get("min_lr_factor", out.optim.min_lr_factor);
  s.get("warmup_steps", out.optim.warmup_steps);
  s.get("warmup_start_lr", out.optim.warmup_start_lr);
  s.get("seed", out.optim.seed);
  s.get("eval_every", out.optim.eval_every);
  s.get("weight_decay", out.optim.weight_decay);
  s.get("num_classes", out.num_classes);
  s.get("per_class", out.per_class);
  s.get("dim", out.dim);
  s.get("tau", out.tau);
  s.finish();
}

void parse_encoder(const json& node, const std::string& text,
                   EncoderRunConfig& out) {
  Section s(node, "encoder", text);
  std::string loss = to_string(out.train.loss_kind);
  s.get("loss", loss);
  out.train.loss_kind = loss_kind_from_string(loss);
  s.get("epochs", out.train.epochs);
  s.get("batch_size", out.train.batch_size);
  s.get("base_lr", out.train.base_lr);
  s.get("momentum", out.train.momentum);
  s.get("weight_decay", out.train.weight_decay);
  s.get("tau", out.train.tau);
  s.get("augment_sigma", out.train.augment_sigma);
  s.get("seed", out.train.seed);
  s.get("eval_every", out.train.eval_every);
  s.get("min_lr_factor", out.train.min_lr_factor);
  s.get("warmup_epochs", out.train.warmup_epochs);
  s.get("warmup_start_lr", out.train.warmup_start_lr);
  s.get("hidden", out.hidden);
  s.get("embed_dim", out.embed_dim);
  std::string act = to_string(out.activation);
  s.get("activation", act);
  out.activation = activation_from_string(act);
  s.get("evaluate_probes", out.evaluate_probes);
  s.get("probe_steps", out.probe_steps);
  s.get("probe_lr", out.probe_lr);
  s.finish();
}

void parse_dataset(const json& node, const std::string& text,
                   DatasetConfig& out) {
  Section s(node, "dataset", text);
  s.get("num_classes", out.num_classes);
  s.get("per_class", out.per_class);
  s.get("input_dim", out.input_dim);
  s.get("separation", out.separation);
  s.get("noise_sigma", out.noise_sigma);
  s.get("seed", out.seed);
  s.get("val_per_class", out.val_per_class);
  s.finish();
}

void parse_sweep(const json& node, const std::string& text, SweepConfig& out) {
  Section s(node, "sweep", text);
  s.get("taus", out.taus);
  s.get("batch_sizes", out.batch_sizes);
  s.get("seeds", out.seeds);
  s.get("workers", out.workers);
  s.finish();
}

} // namespace

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(origin + ": " + e.what());
  }

  ExperimentConfig config;
  Section root(doc, "", text);
  root.get("mode", config.mode);
  static const std::set<std::string> kModes = {"ufm",    "encoder", "sweep",
                                               "verify", "metrics", "etf"};
  if (!kModes.count(config.mode)) {
    throw std::runtime_error("unknown mode: " + config.mode);
  }
  root.get("output_dir", config.output_dir);
  if (root.has("ufm")) parse_ufm(root.child("ufm"), text, config.ufm);
  if (root.has("encoder")) {
    parse_encoder(root.child("encoder"), text, config.encoder);
  }
  if (root.has("dataset")) {
    parse_dataset(root.child("dataset"), text, config.dataset);
  }
  if (root.has("sweep")) parse_sweep(root.child("sweep"), text, config.sweep);
  root.finish();

  if (config.mode == "sweep") {
    if (config.sweep.taus.empty() || config.sweep.batch_sizes.empty() ||
        config.sweep.seeds.empty()) {
      throw std::runtime_error("sweep mode requires non-empty grids");
    }
  }
  return config;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing config file: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path.string());
}

std::string serialize_config(const ExperimentConfig& config) {
  json doc;
  doc["mode"] = config.mode;
  doc["output_dir"] = config.output_dir;
  doc["ufm"] = {{"loss", to_string(config.ufm.optim.loss_kind)},
                {"steps", config.ufm.optim.steps},
                {"base_lr", config.ufm.optim.base_lr},
                {"min_lr_factor", config.ufm.optim.min_lr_factor},
                {"warmup_steps", config.ufm.optim.warmup_steps},
                {"warmup_start_lr", config.ufm.optim.warmup_start_lr},
                {"seed", config.ufm.optim.seed},
                {"eval_every", config.ufm.optim.eval_every},
                {"weight_decay", config.ufm.optim.weight_decay},
                {"num_classes", config.ufm.num_classes},
                {"per_class", config.ufm.per_class},
                {"dim", config.ufm.dim},
                {"tau", config.ufm.tau}};
  doc["encoder"] = {{"loss", to_string(config.encoder.train.loss_kind)},
                    {"epochs", config.encoder.train.epochs},
                    {"batch_size", config.encoder.train.batch_size},
                    {"base_lr", config.encoder.train.base_lr},
                    {"momentum", config.encoder.train.momentum},
                    {"weight_decay", config.encoder.train.weight_decay},
                    {"tau", config.encoder.train.tau},
                    {"augment_sigma", config.encoder.train.augment_sigma},
                    {"seed", config.encoder.train.seed},
                    {"eval_every", config.encoder.train.eval_every},
                    {"min_lr_factor", config.encoder.train.min_lr_factor},
                    {"warmup_epochs", config.encoder.train.warmup_epochs},
                    {"warmup_start_lr", config.encoder.train.warmup_start_lr},
                    {"hidden", config.encoder.hidden},
                    {"embed_dim", config.encoder.embed_dim},
                    {"activation", to_string(config.encoder.activation)},
                    {"evaluate_probes", config.encoder.evaluate_probes},
                    {"probe_steps", config.encoder.probe_steps},
                    {"probe_lr", config.encoder.probe_lr}};
  doc["dataset"] = {{"num_classes", config.dataset.num_classes},
                    {"per_class", config.dataset.per_class},
                    {"input_dim", config.dataset.input_dim},
                    {"separation", config.dataset.separation},
                    {"noise_sigma", config.dataset.noise_sigma},
                    {"seed", config.dataset.seed},
                    {"val_per_class", config.dataset.val_per_class}};
  doc["sweep"] = {{"taus", config.sweep.taus},
                  {"batch_sizes", config.sweep.batch_sizes},
                  {"seeds", config.sweep.seeds},
                  {"workers", config.sweep.workers}};
  return doc.dump(2);
}

MlpSpec mlp_spec_from(const EncoderRunConfig& encoder, int input_dim) {
  MlpSpec spec;
  spec.widths.push_back(input_dim);
  for (int h : encoder.hidden) spec.widths.push_back(h);
  spec.widths.push_back(encoder.embed_dim);
  spec.activation = encoder.activation;
  return spec;
}

} // namespace proto
