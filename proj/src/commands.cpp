#include "despeckle/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "despeckle/checkpoint.hpp"
#include "despeckle/error.hpp"
#include "despeckle/metrics.hpp"
#include "despeckle/parallel.hpp"
#include "despeckle/raster.hpp"
#include "despeckle/random.hpp"
#include "despeckle/speckle.hpp"
#include "despeckle/synthetic.hpp"
#include "despeckle/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace despeckle {
namespace {

constexpr std::uint64_t kEvalNoiseTag = 0xE7A1ULL;
constexpr std::uint64_t kSimulateNoiseTag = 0x51EAULL;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

// Stacked patches are a float32 raster S wide and N*S tall.
void save_patch_stack(const fs::path& path, const PatchSet<float>& set) {
  Raster r;
  r.width = set.size;
  r.height = set.count() * set.size;
  r.pixels = set.data;
  r.format = RasterFormat::Float32;
  write_raster(path, r);
}

PatchSet<float> load_patch_stack(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing " + path.string() + "; run prepare first");
  Raster r = read_raster(path);
  if (r.width == 0 || r.height % r.width != 0) throw FormatError(path.string() + ": not a patch stack");
  PatchSet<float> set;
  set.size = r.width;
  set.data = std::move(r.pixels);
  return set;
}

double validation_total(const EpochRecord& r, const LossWeights& w) {
  double t = r.val_mse;
  if (w.lambda_edge != 0.0) t += w.lambda_edge * r.val_edge;
  if (w.lambda_kl != 0.0) t += w.lambda_kl * r.val_kl;
  return t;
}

json epoch_json(const EpochRecord& r, const LossWeights& w) {
  return {{"epoch", r.epoch},
          {"train_total", r.train_total},
          {"val_mse", r.val_mse},
          {"val_kl", r.val_kl},
          {"val_edge", r.val_edge},
          {"wall_seconds", r.wall_seconds},
          {"lambda_edge", w.lambda_edge},
          {"lambda_kl", w.lambda_kl}};
}

TrainOptions train_options(const ExperimentConfig& c) {
  TrainOptions o;
  o.epochs = c.epochs;
  o.batch_size = c.batch_size;
  o.seed = c.seed;
  o.looks = c.looks;
  o.weights = c.loss_weights;
  o.adam.lr = c.lr;
  return o;
}

// Reads back log lines up to and including `epoch`; later lines belong to
// an interrupted continuation and are dropped.
std::vector<json> read_log_prefix(const fs::path& path, int epoch) {
  std::vector<json> lines;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("epoch") || j.contains("diverged")) continue;
    if (j["epoch"].get<int>() <= epoch) lines.push_back(std::move(j));
  }
  return lines;
}

Tensor<float> image_tensor(const std::vector<float>& pixels, std::size_t h, std::size_t w, double divisor) {
  std::vector<float> v(pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(pixels[i] / divisor);
  return Tensor<float>({1, 1, h, w}, std::move(v));
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

}  // namespace

int run_command(const Console& con, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    con.err << "error: " << e.what() << "\n";
    return exit_code::kUsage;
  } catch (const NumericError& e) {
    con.err << "error: " << e.what() << "\n";
    return exit_code::kDivergence;
  } catch (const Error& e) {
    con.err << "error: " << e.what() << "\n";
    return exit_code::kData;
  } catch (const fs::filesystem_error& e) {
    con.err << "error: " << e.what() << "\n";
    return exit_code::kData;
  }
}

int cmd_prepare(const ExperimentConfig& config, const Console& con) {
  return run_command(con, [&] {
    config.dataset.validate();
    const auto& src = config.dataset.source_dir;
    if (!fs::is_directory(src)) throw ConfigError("source directory does not exist: " + src.string());
    if (list_rasters(src).empty()) {
      con.err << "no source images in " << src.string() << "\n";
      return exit_code::kData;
    }
    Manifest m = extract_patches(config.dataset);
    for (const auto& name : m.unreadable) con.err << "unreadable: " << name << "\n";
    if (m.patches.empty()) {
      con.err << "no patches produced (" << m.skipped << " images smaller than the patch size)\n";
      return exit_code::kData;
    }
    RunPaths run{config.output_dir};
    fs::create_directories(run.dir);
    m.save(run.manifest());
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
      if (m.count(s) > 0) {
        save_patch_stack(run.patches(s), load_patches<float>(m, s, src));
      } else {
        fs::remove(run.patches(s));
        fs::remove(sidecar_path(run.patches(s)));
      }
    }
    con.out << "train " << m.count(Split::Train) << " val " << m.count(Split::Val) << " test "
            << m.count(Split::Test) << " patches from " << m.images.size() << " images";
    if (m.skipped) con.out << " (" << m.skipped << " too small)";
    con.out << "\ndivisor " << std::setprecision(9) << m.divisor << "\n";
    return exit_code::kOk;
  });
}

int cmd_simulate(const fs::path& dir, std::size_t count, std::size_t size, std::uint64_t seed, int looks,
                 const Console& con) {
  return run_command(con, [&] {
    if (count == 0 || size < 8) throw ConfigError("simulate needs count >= 1 and size >= 8");
    if (looks < 0) throw ConfigError("looks must be >= 0");
    fs::create_directories(dir);
    if (looks > 0) fs::create_directories(dir / "noisy");
    for (std::size_t i = 0; i < count; ++i) {
      std::ostringstream name;
      name << "scene_" << std::setw(4) << std::setfill('0') << i << ".png";
      const auto scene_seed = mix_seed({seed, static_cast<std::uint64_t>(i)});
      Raster r;
      r.width = r.height = size;
      r.format = RasterFormat::Png16;
      r.pixels = synthetic_scene(size, size, scene_seed);
      for (auto& p : r.pixels) p *= 12000.0f;
      write_raster(dir / name.str(), r);
      if (looks > 0) {
        std::vector<float> noise(r.pixels.size());
        fill_speckle(noise, looks, mix_seed({seed, kSimulateNoiseTag, static_cast<std::uint64_t>(i)}));
        for (std::size_t k = 0; k < noise.size(); ++k) r.pixels[k] *= noise[k];
        write_raster(dir / "noisy" / name.str(), r);
      }
    }
    con.out << "wrote " << count << " scenes to " << dir.string() << "\n";
    return exit_code::kOk;
  });
}

int cmd_train(const ExperimentConfig& config, const fs::path& data_dir, const std::optional<fs::path>& resume,
              const Console& con) {
  return run_command(con, [&] {
    config.validate();
    RunPaths data{data_dir};
    RunPaths run{config.output_dir};
    if (!fs::exists(data.manifest())) throw DataError("no manifest in " + data_dir.string() + "; run prepare first");
    const Manifest manifest = Manifest::load(data.manifest());
    const PatchSet<float> train = load_patch_stack(data.patches(Split::Train));
    const PatchSet<float> val = load_patch_stack(data.patches(Split::Val));
    if (train.count() == 0 || val.count() == 0) throw DataError("training and validation splits must be nonempty");

    const TrainOptions opts = train_options(config);
    const LossWeights& w = opts.weights;
    fs::create_directories(run.dir / "checkpoints");
    write_text(run.config(), config.to_json().dump(2) + "\n");

    CheckpointMeta meta;
    meta.rng_seed = config.seed;
    meta.divisor = manifest.divisor > 0.0 ? manifest.divisor : 1.0;
    meta.looks = config.looks;
    meta.training = config.to_json();

    std::optional<Model<float>> model;
    std::optional<Trainer<float>> trainer;
    std::vector<json> log_lines;
    if (resume) {
      Checkpoint<float> ck = load_checkpoint<float>(*resume);
      if (!(ck.model.config() == config.resolved_network()))
        throw ConfigError("checkpoint network does not match the config");
      if (!ck.adam) throw StateError("checkpoint has no optimizer state; cannot resume");
      model.emplace(std::move(ck.model));
      trainer.emplace(*model, opts);
      trainer->restore(std::move(*ck.adam), static_cast<int>(ck.meta.epoch));
      log_lines = read_log_prefix(run.log(), static_cast<int>(ck.meta.epoch));
    } else {
      model.emplace(config.resolved_network());
      trainer.emplace(*model, opts);
      meta.epoch = 0;
      save_checkpoint(run.checkpoint("init"), *model, &trainer->adam_states(), meta);
    }

    std::ofstream log(run.log(), std::ios::trunc);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& j : log_lines) {
      log << j.dump() << "\n";
      EpochRecord r;
      r.val_mse = j["val_mse"];
      r.val_kl = j["val_kl"];
      r.val_edge = j["val_edge"];
      best = std::min(best, validation_total(r, w));
    }
    log.flush();

    con.out << "training " << config.output_dir.string() << ": depth " << model->config().depth << " width "
            << model->config().width << ", " << train.count() << " train / " << val.count() << " val patches\n";
    try {
      trainer->fit(train, val, [&](const EpochRecord& r) {
        log << epoch_json(r, w).dump() << "\n";
        log.flush();
        meta.epoch = static_cast<std::uint64_t>(r.epoch);
        save_checkpoint(run.checkpoint("last"), *model, &trainer->adam_states(), meta);
        const double total = validation_total(r, w);
        if (total < best) {
          best = total;
          save_checkpoint(run.checkpoint("best"), *model, &trainer->adam_states(), meta);
        }
        con.out << "epoch " << r.epoch << " train " << r.train_total << " val_mse " << r.val_mse << " val_kl "
                << r.val_kl << " val_edge " << r.val_edge << " (" << std::fixed << std::setprecision(1)
                << r.wall_seconds << std::defaultfloat << std::setprecision(6) << " s)\n";
      });
    } catch (const DivergenceError& e) {
      log << json{{"epoch", e.epoch()}, {"batch", e.batch()}, {"diverged", true}, {"message", e.what()}}.dump()
          << "\n";
      con.err << "error: " << e.what() << "\n";
      return exit_code::kDivergence;
    }
    if (trainer->epochs_done() > 0) {
      meta.epoch = static_cast<std::uint64_t>(trainer->epochs_done());
      save_checkpoint(run.checkpoint("final"), *model, &trainer->adam_states(), meta);
    }
    return exit_code::kOk;
  });
}

int cmd_grid(const ExperimentConfig& config, const std::vector<std::string>& names, const Console& con) {
  std::vector<std::string> runs;
  for (const auto& n : names) {
    if (n == "all") {
      for (const auto& p : presets()) runs.emplace_back(p.name);
    } else {
      runs.push_back(n);
    }
  }
  if (runs.empty()) {
    con.err << "error: no presets given\n";
    return exit_code::kUsage;
  }
  for (const auto& name : runs) {
    const int code = run_command(con, [&] {
      preset_config(name);
      return exit_code::kOk;
    });
    if (code != exit_code::kOk) return code;
  }
  int status = exit_code::kOk;
  for (const auto& name : runs) {
    ExperimentConfig c = config;
    c.preset = name;
    c.output_dir = config.output_dir / name;
    const int code = cmd_train(c, config.output_dir, std::nullopt, con);
    if (code != exit_code::kOk && status == exit_code::kOk) status = code;
  }
  return status;
}

int cmd_despeckle(const fs::path& checkpoint, const fs::path& input, const fs::path& output,
                  const fs::path& timing_report, const Console& con) {
  return run_command(con, [&] {
    const Checkpoint<float> ck = load_checkpoint<float>(checkpoint);
    Raster in = read_raster(input);
    for (float v : in.pixels)
      if (!(v >= 0.0f) || !std::isfinite(v)) throw DomainError(input.string() + ": intensities must be finite and nonnegative");
    const double divisor = ck.meta.divisor;
    const Tensor<float> x = image_tensor(in.pixels, in.height, in.width, divisor);

    const auto start = std::chrono::steady_clock::now();
    const Tensor<float> y = despeckle(ck.model, x);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    Raster out = in;
    out.pixels = denormalize<float>(y.data(), divisor);
    if (output.has_parent_path()) fs::create_directories(output.parent_path());
    write_raster(output, out);

    const bool fresh = !fs::exists(timing_report) || fs::file_size(timing_report) == 0;
    if (timing_report.has_parent_path()) fs::create_directories(timing_report.parent_path());
    std::ofstream report(timing_report, std::ios::app);
    if (fresh) report << "image,height,width,seconds,checkpoint,threads\n";
    report << input.filename().string() << ',' << in.height << ',' << in.width << ',' << std::setprecision(9)
           << seconds << ',' << checkpoint.string() << ',' << worker_count() << "\n";
    if (!report) throw DataError("cannot append to " + timing_report.string());
    con.out << input.filename().string() << " " << in.height << "x" << in.width << " despeckled in "
            << std::setprecision(4) << seconds << " s\n";
    return exit_code::kOk;
  });
}

int cmd_evaluate(const EvaluateRequest& req, const Console& con) {
  return run_command(con, [&] {
    if (req.mode != "reference" && req.mode != "noreference")
      throw ConfigError("mode must be 'reference' or 'noreference'");
    if (req.looks < 1) throw ConfigError("looks must be >= 1");
    if (req.images.has_value() == req.manifest.has_value())
      throw ConfigError("give exactly one of --images or --manifest");
    if (req.mode == "noreference" && req.manifest)
      throw ConfigError("noreference mode takes a directory of speckled images, not a manifest");

    std::vector<fs::path> files;
    std::string dataset_id;
    if (req.images) {
      if (!fs::is_directory(*req.images)) throw ConfigError("not a directory: " + req.images->string());
      files = list_rasters(*req.images);
      dataset_id = req.images->string();
    } else {
      const Manifest m = Manifest::load(*req.manifest);
      for (const auto& name : m.images_in(Split::Test)) files.push_back(fs::path(m.source_dir) / name);
      dataset_id = req.manifest->string() + "#test";
    }
    if (files.empty()) throw DataError("no images to evaluate in " + dataset_id);

    const Checkpoint<float> ck = load_checkpoint<float>(req.checkpoint);
    const double divisor = ck.meta.divisor;
    metrics::MetricsReport report;
    report.mode = req.mode;
    report.model_id = req.checkpoint.string();
    report.dataset_id = dataset_id;
    report.timestamp = utc_timestamp();

    for (std::size_t i = 0; i < files.size(); ++i) {
      const Raster r = read_raster(files[i]);
      const std::size_t h = r.height, w = r.width;
      metrics::MetricsRow row;
      row.image = files[i].filename().string();
      if (req.mode == "reference") {
        // Clean reference on the training scale, corrupted with seeded speckle.
        const Tensor<float> clean({1, 1, h, w}, normalize_with<float>(r.pixels, divisor));
        const auto pair = corrupt(clean, req.looks, mix_seed({req.seed, kEvalNoiseTag, i}));
        const Tensor<float> est = despeckle(ck.model, pair.noisy);
        const auto ref = to_double(denormalize<float>(clean.data(), divisor));
        const auto out = to_double(denormalize<float>(est.data(), divisor));
        const double range = r.format == RasterFormat::Float32 ? divisor : format_max(r.format);
        row.mse = metrics::mse(out, ref);
        row.snr_db = metrics::snr_db(out, ref);
        row.ssim = metrics::ssim({out, h, w}, {ref, h, w}, range);
      } else {
        const Tensor<float> noisy = image_tensor(r.pixels, h, w, divisor);
        const Tensor<float> est = despeckle(ck.model, noisy);
        const auto y = to_double(noisy.data());
        const auto x = to_double(est.data());
        const auto m = metrics::m_index_proxy({y, h, w}, {x, h, w}, req.looks);
        row.enl = m.enl_estimate;
        row.homogeneity = m.homogeneity;
        row.m_index_proxy = m.value;
      }
      report.rows.push_back(std::move(row));
    }

    fs::create_directories(req.output_dir);
    write_text(req.output_dir / "metrics.csv", report.to_csv());
    write_text(req.output_dir / "metrics.json", report.to_json().dump(2) + "\n");
    const auto agg = report.aggregate();
    con.out << report.rows.size() << " images, " << req.mode << ":";
    auto show = [&](const char* name, const std::optional<double>& v) {
      if (v) con.out << " " << name << " " << std::setprecision(6) << *v;
    };
    show("ssim", agg.ssim);
    show("snr_db", agg.snr_db);
    show("mse", agg.mse);
    show("enl", agg.enl);
    show("homogeneity", agg.homogeneity);
    show("m_index_proxy", agg.m_index_proxy);
    con.out << "\n";
    return exit_code::kOk;
  });
}

}  // namespace despeckle
