#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rav/core/image.hpp"
#include "rav/core/loss_history.hpp"

namespace rav::harness {

inline constexpr const char* kRunSchema = "rav-run/1";
inline constexpr const char* kSubcommands[] = {"simulate-data", "train-align", "train-restore",
                                               "train-avatar",  "restore",     "drive-avatar",
                                               "evaluate",      "bench",       "plot"};

// ---- configuration -------------------------------------------------------

/// Per-subcommand settings. Precedence (highest first): command-line flags,
/// the RAV_SEED environment variable (seed only), the config file section,
/// built-in defaults.
struct ConfigSources {
  nlohmann::json defaults = nlohmann::json::object();
  nlohmann::json file_section = nlohmann::json::object();
  std::optional<std::string> env_seed;  // value of RAV_SEED when set
  nlohmann::json flags = nlohmann::json::object();
};
nlohmann::json resolve_config(const ConfigSources& sources);

/// Reads `path` (a JSON object keyed by subcommand) and returns the section
/// for `command` (empty object when absent). Missing file -> missing_artifact.
nlohmann::json load_config_section(const std::filesystem::path& path, const std::string& command);

/// Parses "a.b=value" into {"a": {"b": value}}; value is JSON when it parses,
/// otherwise a string.
nlohmann::json parse_override(const std::string& assignment);

/// Built-in defaults of each subcommand's section.
nlohmann::json default_config(const std::string& command);

/// Benchmark settings of a resolved config; warmup_iters >= 1, timed_iters >= 10.
struct BenchSettings {
  int warmup_iters = 5;
  int timed_iters = 50;
  int batch = 1;
  int resolution = 128;
  std::string device = "cpu";
  static BenchSettings from_json(const nlohmann::json& j);
};

// ---- run directories and manifests ---------------------------------------

/// Creates `dir`; an existing non-empty directory is an io_error unless
/// `force`, in which case it is cleared first.
void prepare_run_dir(const std::filesystem::path& dir, bool force);

struct FileRecord {
  std::string path;  // as given for inputs, relative to the run dir for outputs
  std::string sha256;
};

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string device;
  std::vector<FileRecord> inputs;
  std::vector<FileRecord> outputs;
  nlohmann::json results = nlohmann::json::object();

  void add_input(const std::filesystem::path& path);
  /// Records `relative` (a file under `run_dir`) with its hash.
  void add_output(const std::filesystem::path& run_dir, const std::filesystem::path& relative);
  nlohmann::json to_json() const;
  /// Writes manifest.json into `run_dir`; returns the sha256 of its text.
  std::string write(const std::filesystem::path& run_dir) const;
};

// ---- benchmarking ---------------------------------------------------------

struct BenchStats {
  double mean_s = 0.0;
  double median_s = 0.0;
  double p95_s = 0.0;  // nearest-rank 95th percentile
  double std_s = 0.0;  // sample standard deviation
  double cv = 0.0;     // std / mean
};
BenchStats bench_stats(const std::vector<double>& seconds);

struct BenchReport {
  std::string op;
  BenchStats stats;
  std::vector<double> timings;
  BenchSettings settings;
  nlohmann::json to_json() const;
};

/// Runs `fn` warmup_iters times untimed, then timed_iters timed calls.
BenchReport run_bench(const std::string& op, const BenchSettings& settings, const std::function<void()>& fn);

// ---- plots -----------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> values;
};

/// Line chart on a white canvas with a black axes frame; series are drawn in
/// a fixed palette, y range fitted to the data. No series -> empty axes.
ImageBuffer plot_lines(const std::vector<Series>& series, int width = 480, int height = 320);
/// One filled bar per value, left to right, over a zero baseline.
ImageBuffer plot_bars(const std::vector<double>& values, int width = 480, int height = 320);
/// Rows of images placed on a grid of `cell` x `cell` tiles separated by
/// `pad` white pixels; gray images are replicated to RGB.
ImageBuffer image_grid(const std::vector<std::vector<ImageBuffer>>& rows, int cell = 64, int pad = 2);

/// Colour used for series i (RGB in [0, 1]).
std::array<double, 3> palette(std::size_t i);

/// Axes frame margin in pixels.
inline constexpr int kPlotMargin = 24;

/// Writes one loss-curve PNG per phase of `history` into `dir`; returns the
/// file names. An empty history writes a single empty-axes plot.
std::vector<std::string> plot_history(const LossHistory& history, const std::filesystem::path& dir);

// ---- CLI -------------------------------------------------------------------

/// Entry point of the `rav` executable; returns the process exit code.
int run_cli(const std::vector<std::string>& args);

}  // namespace rav::harness
