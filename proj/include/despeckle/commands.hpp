#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "despeckle/experiment.hpp"

namespace despeckle {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kData = 2;
inline constexpr int kDivergence = 3;
}  // namespace exit_code

struct Console {
  std::ostream& out;
  std::ostream& err;
};

// Runs `body`, printing library errors to con.err and mapping them to exit
// codes: ConfigError -> 1, DataError/DomainError/DimensionError/StateError -> 2,
// NumericError -> 3.
int run_command(const Console& con, const std::function<int()>& body);

// Run directory layout.
struct RunPaths {
  std::filesystem::path dir;

  std::filesystem::path manifest() const { return dir / "manifest.json"; }
  std::filesystem::path patches(Split s) const { return dir / ("patches_" + split_name(s) + ".f32"); }
  std::filesystem::path config() const { return dir / "config.json"; }
  std::filesystem::path log() const { return dir / "train_log.jsonl"; }
  std::filesystem::path checkpoint(const std::string& tag) const {
    return dir / "checkpoints" / (tag + ".dspk");
  }
};

// Extracts patches from config.dataset.source_dir into config.output_dir:
// manifest.json plus one stacked float32 file per split (S wide, N*S tall).
int cmd_prepare(const ExperimentConfig& config, const Console& con);

// Writes `count` synthetic clean scenes (16-bit PNG) to `dir`. With
// looks > 0 a speckled copy of each scene is written to dir/noisy.
int cmd_simulate(const std::filesystem::path& dir, std::size_t count, std::size_t size,
                 std::uint64_t seed, int looks, const Console& con);

// Trains on the patches prepared in `data_dir` and writes the log and the
// init/last/best/final checkpoints to config.output_dir. `resume` continues
// from a checkpoint written by an earlier run with the same config.
int cmd_train(const ExperimentConfig& config, const std::filesystem::path& data_dir,
              const std::optional<std::filesystem::path>& resume, const Console& con);

// One training run per preset in config.output_dir/<preset>, sharing the
// data prepared in config.output_dir. "all" expands to the eight presets.
int cmd_grid(const ExperimentConfig& config, const std::vector<std::string>& presets,
             const Console& con);

// Despeckles one raster. The output keeps the input format; forward-pass
// wall time is printed and appended as a row to `timing_report`.
int cmd_despeckle(const std::filesystem::path& checkpoint, const std::filesystem::path& input,
                  const std::filesystem::path& output, const std::filesystem::path& timing_report,
                  const Console& con);

struct EvaluateRequest {
  std::filesystem::path checkpoint;
  std::string mode = "reference";  // reference | noreference
  // reference: clean images to corrupt, given as a directory or the test
  // split of a manifest. noreference: a directory of speckled images.
  std::optional<std::filesystem::path> images;
  std::optional<std::filesystem::path> manifest;
  std::filesystem::path output_dir = ".";
  int looks = 1;
  std::uint64_t seed = 0;
};

// Writes metrics.csv and metrics.json to request.output_dir.
int cmd_evaluate(const EvaluateRequest& request, const Console& con);

}  // namespace despeckle
