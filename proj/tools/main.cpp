#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "despeckle/commands.hpp"
#include "despeckle/error.hpp"

namespace fs = std::filesystem;
using namespace despeckle;

namespace {

// Flags shared by every experiment-driven subcommand; unset flags leave the
// config file (or the defaults) alone.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<double> lambda_edge;
  std::optional<double> lambda_kl;
  std::optional<int> looks;
  std::optional<std::string> source;
  std::optional<std::string> output;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "experiment config (JSON)");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--preset", preset, "network preset: m1t m1l m2t m2l m3t m3l m4t m4l");
    app->add_option("--epochs", epochs);
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--batch-size", batch_size);
    app->add_option("--lambda-edge", lambda_edge);
    app->add_option("--lambda-kl", lambda_kl);
    app->add_option("--looks", looks, "number of looks L");
    app->add_option("--source", source, "directory of clean source images");
    app->add_option("--output", output, "run directory");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config.empty() ? ExperimentConfig{} : ExperimentConfig::load(config);
    if (seed) {
      c.seed = *seed;
      c.dataset.seed = *seed;
    }
    if (preset) c.preset = *preset;
    if (epochs) c.epochs = *epochs;
    if (lr) c.lr = *lr;
    if (batch_size) c.batch_size = *batch_size;
    if (lambda_edge) c.loss_weights.lambda_edge = *lambda_edge;
    if (lambda_kl) c.loss_weights.lambda_kl = *lambda_kl;
    if (looks) c.looks = *looks;
    if (source) c.dataset.source_dir = *source;
    if (output) c.output_dir = *output;
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAR despeckling CNN: data preparation, training, inference and evaluation"};
  app.require_subcommand(1);
  const Console con{std::cout, std::cerr};

  Overrides prep_o, train_o, grid_o;
  auto* prepare = app.add_subcommand("prepare", "extract training patches and write the manifest");
  prep_o.attach(prepare);

  auto* train = app.add_subcommand("train", "train one network");
  train_o.attach(train);
  std::string data_dir, resume;
  train->add_option("--data", data_dir, "prepared data directory (default: the run directory)");
  train->add_option("--resume", resume, "checkpoint to continue from");

  auto* grid = app.add_subcommand("grid", "train several presets, one run directory each");
  grid_o.attach(grid);
  std::vector<std::string> grid_presets{"all"};
  grid->add_option("presets", grid_presets, "preset names or 'all'");

  auto* run = app.add_subcommand("despeckle", "despeckle one image");
  std::string ck, input, output, timing;
  run->add_option("--checkpoint", ck)->required();
  run->add_option("input", input)->required();
  run->add_option("output", output)->required();
  run->add_option("--timing", timing, "timing CSV (default: timing.csv next to the output)");

  auto* eval = app.add_subcommand("evaluate", "compute quality metrics for a checkpoint");
  EvaluateRequest ereq;
  std::string eimages, emanifest, echeckpoint, eout = ".";
  int elooks = 1;
  std::uint64_t eseed = 0;
  eval->add_option("--checkpoint", echeckpoint)->required();
  eval->add_option("--mode", ereq.mode)->check(CLI::IsMember({"reference", "noreference"}));
  eval->add_option("--images", eimages, "image directory");
  eval->add_option("--manifest", emanifest, "use the test split of this manifest (reference mode)");
  eval->add_option("--output", eout, "report directory");
  eval->add_option("--looks", elooks);
  eval->add_option("--seed", eseed);

  auto* sim = app.add_subcommand("simulate", "write synthetic clean scenes (and speckled copies)");
  std::string sdir;
  std::size_t scount = 8, ssize = 256;
  std::uint64_t sseed = 0;
  int slooks = 0;
  sim->add_option("dir", sdir)->required();
  sim->add_option("--count", scount);
  sim->add_option("--size", ssize);
  sim->add_option("--seed", sseed);
  sim->add_option("--looks", slooks, "also write speckled copies with this many looks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_code::kOk : exit_code::kUsage;
  }

  auto resolved = [&](const Overrides& o, ExperimentConfig& c) {
    return run_command(con, [&] {
      c = o.resolve();
      return exit_code::kOk;
    });
  };

  ExperimentConfig config;
  if (prepare->parsed()) {
    if (int code = resolved(prep_o, config)) return code;
    return cmd_prepare(config, con);
  }
  if (train->parsed()) {
    if (int code = resolved(train_o, config)) return code;
    const fs::path data = data_dir.empty() ? config.output_dir : fs::path(data_dir);
    std::optional<fs::path> from;
    if (!resume.empty()) from = resume;
    return cmd_train(config, data, from, con);
  }
  if (grid->parsed()) {
    if (int code = resolved(grid_o, config)) return code;
    return cmd_grid(config, grid_presets, con);
  }
  if (run->parsed()) {
    const fs::path out(output);
    const fs::path report = timing.empty() ? out.parent_path() / "timing.csv" : fs::path(timing);
    return cmd_despeckle(ck, input, out, report, con);
  }
  if (eval->parsed()) {
    ereq.checkpoint = echeckpoint;
    if (!eimages.empty()) ereq.images = eimages;
    if (!emanifest.empty()) ereq.manifest = emanifest;
    ereq.output_dir = eout;
    ereq.looks = elooks;
    ereq.seed = eseed;
    return cmd_evaluate(ereq, con);
  }
  if (sim->parsed()) return cmd_simulate(sdir, scount, ssize, sseed, slooks, con);
  return exit_code::kUsage;
}
