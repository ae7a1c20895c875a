#include "rav/harness/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "rav/align/align.hpp"
#include "rav/avatar3d/avatar.hpp"
#include "rav/core/error.hpp"
#include "rav/core/io.hpp"
#include "rav/restore2d/restore.hpp"

namespace rav::harness {

using nlohmann::json;
namespace fs = std::filesystem;

json resolve_config(const ConfigSources& sources) {
  require(sources.file_section.is_object(), "config section must be a JSON object", ErrorCategory::invalid_config);
  json out = sources.defaults;
  out.merge_patch(sources.file_section);
  if (sources.env_seed) {
    const std::string& text = *sources.env_seed;
    const bool digits = !text.empty() && text.size() <= 20 &&
                        std::all_of(text.begin(), text.end(), [](char ch) { return ch >= '0' && ch <= '9'; });
    unsigned long long seed = 0;
    bool ok = digits;
    if (digits) {
      try {
        seed = std::stoull(text);
      } catch (const std::out_of_range&) {
        ok = false;
      }
    }
    require(ok, "RAV_SEED must be a non-negative integer", ErrorCategory::invalid_config);
    out["seed"] = static_cast<std::uint64_t>(seed);
  }
  out.merge_patch(sources.flags);
  return out;
}

json load_config_section(const fs::path& path, const std::string& command) {
  if (!fs::exists(path)) throw Error(ErrorCategory::missing_artifact, "config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::invalid_config, "config file is not valid JSON: " + std::string(e.what()));
  }
  require(j.is_object(), "config file must hold a JSON object", ErrorCategory::invalid_config);
  if (!j.contains(command)) return json::object();
  require(j.at(command).is_object(), "config section '" + command + "' must be an object",
          ErrorCategory::invalid_config);
  return j.at(command);
}

json parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "override must look like key=value: " + assignment,
          ErrorCategory::invalid_config);
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json out = json::object();
  json* node = &out;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!part.empty(), "empty key segment in override: " + assignment, ErrorCategory::invalid_config);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
  return out;
}

json default_config(const std::string& command) {
  const json common = {{"seed", 1}, {"device", "cpu"}};
  json j;
  if (command == "simulate-data") {
    j = {{"n", 16}, {"resolution", 128}, {"model", ""}, {"model_seed", 1}, {"num_identities", 0}};
  } else if (command == "train-align") {
    j = {{"dataset", ""}, {"slots", {"CG_LE", "CG_RE", "CG_Face"}}, {"align", align::AlignConfig{}.to_json()}};
    j["align"]["steps"] = 100;
  } else if (command == "train-restore") {
    j = {{"dataset", ""}, {"aligners", ""}, {"eye_tag", "front"}, {"restore", restore2d::RestoreConfig{}.to_json()}};
    j["restore"]["steps"] = 100;
  } else if (command == "train-avatar") {
    j = {{"dataset", ""}, {"model", ""}, {"avatar", avatar3d::AvatarConfig{}.to_json()}};
    j["avatar"]["stage1_steps"] = 100;
    j["avatar"]["stage2_steps"] = 20;
  } else if (command == "restore") {
    j = {{"checkpoint", ""}, {"dataset", ""}, {"aligners", ""}, {"eye_tag", "front"}};
  } else if (command == "drive-avatar") {
    j = {{"checkpoint", ""}, {"dataset", ""}, {"model", ""}, {"restored", ""},
         {"yaw", 0.0},       {"pitch", 0.0},  {"oracle_expression", true}};
  } else if (command == "evaluate") {
    j = {{"pred", ""}, {"dataset", ""}, {"psnr_cap", 100.0}, {"gaze", true}};
  } else if (command == "bench") {
    j = {{"op", "restore"}, {"checkpoint", ""}, {"model", ""}, {"resolution", 128},
         {"warmup_iters", 5},   {"timed_iters", 50}, {"batch", 1}};
  } else if (command == "plot") {
    j = {{"history", ""}, {"report", ""}, {"grid", json::array()}, {"cell", 64}};
  } else {
    throw Error(ErrorCategory::invalid_config, "unknown subcommand '" + command + "'");
  }
  j.update(common);
  return j;
}

BenchSettings BenchSettings::from_json(const json& j) {
  BenchSettings s;
  try {
    s.warmup_iters = j.value("warmup_iters", s.warmup_iters);
    s.timed_iters = j.value("timed_iters", s.timed_iters);
    s.batch = j.value("batch", s.batch);
    s.resolution = j.value("resolution", s.resolution);
    s.device = j.value("device", s.device);
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::invalid_config, std::string("bad bench settings: ") + e.what());
  }
  require(s.warmup_iters >= 1, "warmup_iters must be >= 1", ErrorCategory::invalid_config);
  require(s.timed_iters >= 10, "timed_iters must be >= 10", ErrorCategory::invalid_config);
  require(s.batch >= 1 && s.resolution >= 32, "bench batch >= 1 and resolution >= 32 required",
          ErrorCategory::invalid_config);
  return s;
}

void prepare_run_dir(const fs::path& dir, bool force) {
  require(!dir.empty(), "a run directory is required", ErrorCategory::invalid_config);
  if (fs::exists(dir)) {
    require(fs::is_directory(dir), "run path exists and is not a directory: " + dir.string(), ErrorCategory::io_error);
    if (!fs::is_empty(dir)) {
      require(force, "run directory exists and is not empty (use --force to overwrite): " + dir.string(),
              ErrorCategory::io_error);
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

void RunManifest::add_input(const fs::path& path) {
  if (fs::is_regular_file(path)) inputs.push_back({path.string(), sha256_file(path)});
}

void RunManifest::add_output(const fs::path& run_dir, const fs::path& relative) {
  outputs.push_back({relative.generic_string(), sha256_file(run_dir / relative)});
}

json RunManifest::to_json() const {
  auto files = [](const std::vector<FileRecord>& v) {
    json a = json::array();
    for (const auto& f : v) a.push_back({{"path", f.path}, {"sha256", f.sha256}});
    return a;
  };
  return {{"schema", kRunSchema}, {"command", command},          {"seed", seed},
          {"device", device},     {"config", config},            {"inputs", files(inputs)},
          {"outputs", files(outputs)}, {"results", results}};
}

std::string RunManifest::write(const fs::path& run_dir) const {
  const std::string text = to_json().dump(2) + "\n";
  write_text(run_dir / "manifest.json", text);
  return sha256_hex(text);
}

BenchStats bench_stats(const std::vector<double>& seconds) {
  require(!seconds.empty(), "bench_stats needs at least one timing");
  BenchStats s;
  const double n = static_cast<double>(seconds.size());
  s.mean_s = std::accumulate(seconds.begin(), seconds.end(), 0.0) / n;
  auto sorted = seconds;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  s.median_s = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * n));
  s.p95_s = sorted[std::max<std::size_t>(rank, 1) - 1];
  double ss = 0.0;
  for (double v : seconds) ss += (v - s.mean_s) * (v - s.mean_s);
  s.std_s = m > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  s.cv = s.mean_s > 0.0 ? s.std_s / s.mean_s : 0.0;
  return s;
}

json BenchReport::to_json() const {
  return {{"op", op},
          {"mean_s", stats.mean_s},
          {"median_s", stats.median_s},
          {"p95_s", stats.p95_s},
          {"std_s", stats.std_s},
          {"cv", stats.cv},
          {"timings_s", timings},
          {"environment",
           {{"device", settings.device},
            {"resolution", settings.resolution},
            {"batch", settings.batch},
            {"warmup_iters", settings.warmup_iters},
            {"timed_iters", settings.timed_iters}}}};
}

BenchReport run_bench(const std::string& op, const BenchSettings& settings, const std::function<void()>& fn) {
  using Clock = std::chrono::steady_clock;
  BenchReport r;
  r.op = op;
  r.settings = settings;
  for (int i = 0; i < settings.warmup_iters; ++i) fn();
  for (int i = 0; i < settings.timed_iters; ++i) {
    const auto t0 = Clock::now();
    fn();
    r.timings.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
  }
  r.stats = bench_stats(r.timings);
  return r;
}

}  // namespace rav::harness
