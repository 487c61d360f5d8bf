#include "despeckle/experiment.hpp"

#include <fstream>
#include <set>

#include "despeckle/error.hpp"

namespace despeckle {
namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "' in " + where);
}

std::string kl_mode_name(KlMode m) { return m == KlMode::Soft ? "soft" : "hard"; }

KlMode parse_kl_mode(const std::string& s) {
  if (s == "soft") return KlMode::Soft;
  if (s == "hard") return KlMode::Hard;
  throw ConfigError("kl_mode must be 'soft' or 'hard'");
}

}  // namespace

NetworkConfig ExperimentConfig::resolved_network() const {
  NetworkConfig c = network;
  if (preset) {
    NetworkConfig p = preset_config(*preset);
    c.depth = p.depth;
    c.width = p.width;
  }
  c.seed = seed;
  return c;
}

void ExperimentConfig::validate() const {
  dataset.validate();
  resolved_network().validate();
  loss_weights.validate();
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (!(lr >= 0.0)) throw ConfigError("lr must be nonnegative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (looks < 1) throw ConfigError("looks must be >= 1");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["dataset"] = {{"source_dir", dataset.source_dir.string()},
                  {"patch_size", dataset.patch_size},
                  {"stride", dataset.stride},
                  {"train_patches", dataset.train_patches},
                  {"val_patches", dataset.val_patches},
                  {"test_patches", dataset.test_patches},
                  {"train_ratio", dataset.train_ratio},
                  {"val_ratio", dataset.val_ratio},
                  {"test_ratio", dataset.test_ratio},
                  {"seed", dataset.seed},
                  {"normalization", dataset.normalization == Normalization::Percentile ? "percentile" : "none"},
                  {"percentile", dataset.percentile}};
  j["preset"] = preset ? nlohmann::json(*preset) : nlohmann::json(nullptr);
  j["network"] = network.to_json();
  j["loss_weights"] = {{"lambda_edge", loss_weights.lambda_edge},
                       {"lambda_kl", loss_weights.lambda_kl},
                       {"kl_bins", loss_weights.kl_bins},
                       {"kl_range", loss_weights.kl_range},
                       {"kl_bandwidth", loss_weights.kl_bandwidth},
                       {"eps_ratio", loss_weights.eps_ratio},
                       {"kl_mode", kl_mode_name(loss_weights.kl_mode)}};
  j["epochs"] = epochs;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["looks"] = looks;
  j["output_dir"] = output_dir.string();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    reject_unknown(j, {"dataset", "preset", "network", "loss_weights", "epochs", "lr", "batch_size", "seed",
                       "looks", "output_dir"},
                   "config");
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      reject_unknown(d, {"source_dir", "patch_size", "stride", "train_patches", "val_patches", "test_patches",
                         "train_ratio", "val_ratio", "test_ratio", "seed", "normalization", "percentile"},
                     "dataset");
      auto& s = c.dataset;
      s.source_dir = d.value("source_dir", s.source_dir.string());
      s.patch_size = d.value("patch_size", s.patch_size);
      s.stride = d.value("stride", s.stride);
      s.train_patches = d.value("train_patches", s.train_patches);
      s.val_patches = d.value("val_patches", s.val_patches);
      s.test_patches = d.value("test_patches", s.test_patches);
      s.train_ratio = d.value("train_ratio", s.train_ratio);
      s.val_ratio = d.value("val_ratio", s.val_ratio);
      s.test_ratio = d.value("test_ratio", s.test_ratio);
      s.seed = d.value("seed", s.seed);
      const std::string norm = d.value("normalization", std::string("percentile"));
      if (norm != "percentile" && norm != "none") throw ConfigError("normalization must be 'percentile' or 'none'");
      s.normalization = norm == "none" ? Normalization::None : Normalization::Percentile;
      s.percentile = d.value("percentile", s.percentile);
    }
    if (j.contains("preset") && !j["preset"].is_null()) c.preset = j["preset"].get<std::string>();
    if (j.contains("network")) {
      reject_unknown(j["network"], {"depth", "width", "kernel", "seed"}, "network");
      c.network = NetworkConfig::from_json(j["network"]);
    }
    if (j.contains("loss_weights")) {
      const auto& l = j["loss_weights"];
      reject_unknown(l, {"lambda_edge", "lambda_kl", "kl_bins", "kl_range", "kl_bandwidth", "eps_ratio", "kl_mode"},
                     "loss_weights");
      auto& w = c.loss_weights;
      w.lambda_edge = l.value("lambda_edge", w.lambda_edge);
      w.lambda_kl = l.value("lambda_kl", w.lambda_kl);
      w.kl_bins = l.value("kl_bins", w.kl_bins);
      w.kl_range = l.value("kl_range", w.kl_range);
      w.kl_bandwidth = l.value("kl_bandwidth", w.kl_bandwidth);
      w.eps_ratio = l.value("eps_ratio", w.eps_ratio);
      w.kl_mode = parse_kl_mode(l.value("kl_mode", kl_mode_name(w.kl_mode)));
    }
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.looks = j.value("looks", c.looks);
    c.output_dir = j.value("output_dir", c.output_dir.string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace despeckle
