#include <algorithm>
#include <chrono>
#include <deque>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "rav/align/align.hpp"
#include "rav/avatar3d/avatar.hpp"
#include "rav/core/error.hpp"
#include "rav/core/io.hpp"
#include "rav/datasim/datasim.hpp"
#include "rav/harness/harness.hpp"
#include "rav/metrics/metrics.hpp"
#include "rav/morphable/model.hpp"
#include "rav/restore2d/restore.hpp"

namespace rav::harness {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Context {
  std::string command;
  json cfg;
  fs::path run_dir;
  RunManifest manifest;
  json timing = json::object();
};

fs::path existing(const json& cfg, const std::string& key, const std::string& what) {
  const std::string p = cfg.value(key, std::string());
  require(!p.empty(), what + " is required (--" + key + ")", ErrorCategory::invalid_config);
  if (!fs::exists(p)) throw Error(ErrorCategory::missing_artifact, what + " not found: " + p);
  return p;
}

std::optional<fs::path> optional_path(const json& cfg, const std::string& key, const std::string& what) {
  if (cfg.value(key, std::string()).empty()) return std::nullopt;
  return existing(cfg, key, what);
}

/// Sample ids in manifest order.
std::vector<std::string> dataset_ids(const fs::path& manifest) {
  std::vector<std::string> ids;
  try {
    const json m = json::parse(read_text(manifest));
    for (const auto& s : m.at("samples")) ids.push_back(s.at("id"));
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::format_error, std::string("invalid dataset manifest: ") + e.what());
  }
  return ids;
}

/// The morphable model written next to a simulated dataset, unless given.
fs::path morphable_path(const json& cfg, const fs::path& dataset) {
  if (!cfg.value("model", std::string()).empty()) return existing(cfg, "model", "morphable model");
  const auto guess = dataset.parent_path().parent_path() / "model.ravmm";
  if (!fs::exists(guess))
    throw Error(ErrorCategory::missing_artifact, "morphable model not found (pass --model): " + guess.string());
  return guess;
}

/// Seeds the module section from the resolved top-level seed.
json module_section(const Context& c, const std::string& key) {
  json j = c.cfg.at(key);
  j["seed"] = c.manifest.seed;
  return j;
}

void write_history(Context& c, const LossHistory& h, const std::string& name) {
  h.write_csv(c.run_dir / name);
  c.manifest.add_output(c.run_dir, name);
  c.manifest.results["history_sha256"][name] = h.hash();
}

void simulate_data(Context& c) {
  datasim::SimConfig sim;
  sim.resolution = c.cfg.at("resolution");
  sim.num_identities = c.cfg.at("num_identities");
  const auto n = c.cfg.at("n").get<std::int64_t>();
  require(n >= 1, "n must be >= 1", ErrorCategory::invalid_config);
  morphable::MorphableModel mm;
  if (const auto p = optional_path(c.cfg, "model", "morphable model")) {
    mm = morphable::load_model(*p);
    c.manifest.add_input(*p);
  } else {
    mm = morphable::make_synthetic_model(c.cfg.at("model_seed").get<std::uint64_t>());
  }
  morphable::save_model(mm, c.run_dir / "model.ravmm");
  c.manifest.add_output(c.run_dir, "model.ravmm");
  const auto dm = datasim::generate_dataset(mm, static_cast<std::size_t>(n), sim, c.run_dir / "dataset", c.manifest.seed);
  c.manifest.add_output(c.run_dir, "dataset/manifest.json");
  c.manifest.results["count"] = dm.count;
  c.manifest.results["dataset_manifest_sha256"] = dm.hash;
}

void train_align(Context& c) {
  const auto dataset = existing(c.cfg, "dataset", "dataset manifest");
  c.manifest.add_input(dataset);
  const auto samples = datasim::load_dataset(dataset);
  auto slots = c.cfg.at("slots");
  if (slots.is_string()) {
    json list = json::array();
    std::string s = slots, item;
    std::stringstream ss(s);
    while (std::getline(ss, item, ',')) list.push_back(item);
    slots = list;
  }
  align::AlignmentModelSet set;
  for (const auto& name : slots) {
    const auto slot = align::parse_slot(name.get<std::string>());
    const auto data = align::slot_data(samples, slot);
    require(!data.a.empty() && !data.b.empty(), "dataset lacks tilted or frontal crops for slot " + name.get<std::string>(),
            ErrorCategory::invalid_config);
    json section = module_section(c, "align");
    section["height"] = data.a.front().height();
    section["width"] = data.a.front().width();
    section["channels"] = data.a.front().channels();
    align::AlignmentModel model(align::AlignConfig::from_json(section));
    const auto result = align::train_alignment(model, data);
    write_history(c, result.history, "loss_" + name.get<std::string>() + ".csv");
    c.manifest.results["parameter_hash"][name.get<std::string>()] = model.parameter_hash();
    set.slots.emplace(slot, std::move(model));
  }
  align::save_alignment(c.run_dir / "align.ravck", set);
  c.manifest.add_output(c.run_dir, "align.ravck");
}

std::optional<align::AlignmentModelSet> load_aligners(Context& c) {
  const auto p = optional_path(c.cfg, "aligners", "alignment checkpoint");
  if (!p) return std::nullopt;
  c.manifest.add_input(*p);
  return align::load_alignment(*p);
}

void train_restore(Context& c) {
  const auto dataset = existing(c.cfg, "dataset", "dataset manifest");
  c.manifest.add_input(dataset);
  const auto samples = datasim::load_dataset(dataset);
  require(!samples.empty(), "dataset is empty", ErrorCategory::invalid_config);
  const auto aligners = load_aligners(c);
  json section = module_section(c, "restore");
  section["height"] = samples.front().full_face.height();
  section["width"] = samples.front().full_face.width();
  restore2d::RestorationModel model(restore2d::RestoreConfig::from_json(section));
  const auto data = restore2d::make_restoration_set(samples, model.config.feather, aligners ? &*aligners : nullptr,
                                                    c.cfg.at("eye_tag"));
  fs::path ckpt_dir;
  if (model.config.checkpoint_every > 0) fs::create_directories(ckpt_dir = c.run_dir / "checkpoints");
  const auto result = restore2d::train_restoration(model, data, ckpt_dir);
  for (const auto& p : result.checkpoints) c.manifest.add_output(c.run_dir, fs::relative(p, c.run_dir));
  write_history(c, result.history, "loss.csv");
  restore2d::save_restoration(c.run_dir / "restore.ravck", model);
  c.manifest.add_output(c.run_dir, "restore.ravck");
  c.manifest.results["parameter_hash"] = model.parameter_hash();
}

void train_avatar(Context& c) {
  const auto dataset = existing(c.cfg, "dataset", "dataset manifest");
  const auto mm_path = morphable_path(c.cfg, dataset);
  c.manifest.add_input(dataset);
  c.manifest.add_input(mm_path);
  const auto samples = datasim::load_dataset(dataset);
  const auto mm = morphable::load_model(mm_path);
  avatar3d::AvatarModel model(avatar3d::AvatarConfig::from_json(module_section(c, "avatar")));
  const auto data = avatar3d::make_avatar_set(samples, mm, model.config);
  const auto result = avatar3d::train_avatar(model, data);
  write_history(c, result.history, "loss.csv");
  avatar3d::save_avatar(c.run_dir / "avatar.ravck", model);
  c.manifest.add_output(c.run_dir, "avatar.ravck");
  c.manifest.results["parameter_hash"] = model.parameter_hash();
}

void restore_cmd(Context& c) {
  const auto ckpt = existing(c.cfg, "checkpoint", "restoration checkpoint");
  const auto dataset = existing(c.cfg, "dataset", "dataset manifest");
  c.manifest.add_input(ckpt);
  c.manifest.add_input(dataset);
  const auto model = restore2d::load_restoration(ckpt);
  const auto aligners = load_aligners(c);
  const auto samples = datasim::load_dataset(dataset);
  const auto ids = dataset_ids(dataset);
  const auto data = restore2d::make_restoration_set(samples, model.config.feather, aligners ? &*aligners : nullptr,
                                                    c.cfg.at("eye_tag"));
  fs::create_directories(c.run_dir / "pred");
  std::vector<double> seconds;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto t0 = Clock::now();
    const auto out = restore2d::generate(model, {data.x[i]}, {data.z[i]}).front();
    seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    const fs::path rel = fs::path("pred") / (ids.at(i) + ".png");
    write_png(c.run_dir / rel, out);
    c.manifest.add_output(c.run_dir, rel);
  }
  if (!seconds.empty()) c.timing["per_image_mean_s"] = bench_stats(seconds).mean_s;
}

void drive_cmd(Context& c) {
  const auto ckpt = existing(c.cfg, "checkpoint", "avatar checkpoint");
  const auto dataset = existing(c.cfg, "dataset", "dataset manifest");
  const auto mm_path = morphable_path(c.cfg, dataset);
  for (const auto& p : {ckpt, dataset, mm_path}) c.manifest.add_input(p);
  const auto restored = optional_path(c.cfg, "restored", "restored image directory");
  const auto model = avatar3d::load_avatar(ckpt);
  const auto mm = morphable::load_model(mm_path);
  const auto samples = datasim::load_dataset(dataset);
  const auto ids = dataset_ids(dataset);
  const bool oracle = c.cfg.at("oracle_expression");
  fs::create_directories(c.run_dir / "drive");
  std::vector<double> seconds;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto target = restored ? read_png(*restored / (ids.at(i) + ".png")) : s.full_face;
    const auto pose = morphable::CameraPose::make(c.cfg.at("yaw"), c.cfg.at("pitch"), s.full_face.width());
    const auto r = avatar3d::drive_avatar(model, mm, s.dp_image, target, pose,
                                          oracle ? std::optional(s.coeffs.expression) : std::nullopt);
    seconds.push_back(r.seconds);
    const fs::path rel = fs::path("drive") / (ids.at(i) + ".png");
    write_png(c.run_dir / rel, r.image);
    c.manifest.add_output(c.run_dir, rel);
  }
  if (!seconds.empty()) {
    const auto st = bench_stats(seconds);
    c.timing["drive"] = {{"mean_s", st.mean_s}, {"median_s", st.median_s}, {"p95_s", st.p95_s}};
  }
}

void evaluate_cmd(Context& c) {
  const auto pred = existing(c.cfg, "pred", "prediction directory");
  const auto dataset = existing(c.cfg, "dataset", "dataset manifest");
  c.manifest.add_input(dataset);
  metrics::EvalConfig ec;
  ec.psnr_cap = c.cfg.at("psnr_cap");
  ec.gaze = c.cfg.at("gaze");
  const auto report = metrics::evaluate_dataset(pred, dataset, metrics::LandmarkMode::oracle, nullptr, ec);
  report.write(c.run_dir);
  c.manifest.add_output(c.run_dir, "report.json");
  c.manifest.add_output(c.run_dir, "report.csv");
  c.manifest.results["mean"] = report.to_json().at("mean");
  c.manifest.results["errors"] = report.errors.size();
}

void bench_cmd(Context& c) {
  const auto settings = BenchSettings::from_json(c.cfg);
  const std::string op = c.cfg.at("op");
  const auto ckpt = existing(c.cfg, "checkpoint", op + " checkpoint");
  c.manifest.add_input(ckpt);
  const auto mm = morphable::make_synthetic_model(c.manifest.seed);
  datasim::SimConfig sim;
  sim.resolution = settings.resolution;
  const auto sample = datasim::generate_samples(mm, 1, sim, c.manifest.seed).front();
  BenchReport report;
  if (op == "restore") {
    const auto model = restore2d::load_restoration(ckpt);
    require(model.config.height == settings.resolution && model.config.width == settings.resolution,
            "checkpoint resolution does not match the bench resolution", ErrorCategory::invalid_config);
    const auto& left = sample.eye(landmarks::Eye::left, "front");
    const auto& right = sample.eye(landmarks::Eye::right, "front");
    report = run_bench(op, settings, [&] {
      for (int b = 0; b < settings.batch; ++b)
        restore2d::restore(model, left, right, sample.lower_face.image, sample.dp_image, sample.landmarks);
    });
  } else if (op == "drive-avatar") {
    const auto model = avatar3d::load_avatar(ckpt);
    const auto pose = morphable::CameraPose::make(0, 0, settings.resolution);
    report = run_bench(op, settings, [&] {
      for (int b = 0; b < settings.batch; ++b)
        avatar3d::drive_avatar(model, mm, sample.dp_image, sample.full_face, pose, sample.coeffs.expression);
    });
  } else {
    throw Error(ErrorCategory::invalid_config, "unknown bench op '" + op + "' (restore, drive-avatar)");
  }
  write_text(c.run_dir / "bench.json", report.to_json().dump(2) + "\n");
  c.manifest.add_output(c.run_dir, "bench.json");
  c.manifest.results["bench"] = {{"op", op}, {"mean_s", report.stats.mean_s}, {"median_s", report.stats.median_s},
                                 {"p95_s", report.stats.p95_s}, {"cv", report.stats.cv}};
}

std::string id_of(const fs::path& file) {
  const auto stem = file.stem().string();
  return stem.substr(0, stem.find('_'));
}

void plot_cmd(Context& c) {
  const auto plots = c.run_dir / "plots";
  fs::create_directories(plots);
  bool any = false;
  if (const auto h = optional_path(c.cfg, "history", "loss history")) {
    c.manifest.add_input(*h);
    for (const auto& name : plot_history(LossHistory::read_csv(*h), plots))
      c.manifest.add_output(c.run_dir, fs::path("plots") / name);
    any = true;
  }
  if (const auto r = optional_path(c.cfg, "report", "metric report")) {
    c.manifest.add_input(*r);
    json report;
    try {
      report = json::parse(read_text(*r));
    } catch (const json::exception& e) {
      throw Error(ErrorCategory::format_error, std::string("invalid metric report: ") + e.what());
    }
    for (const char* column : {"ssim", "psnr_db", "perceptual"}) {
      std::vector<double> values;
      for (const auto& row : report.value("rows", json::array())) values.push_back(row.value(column, 0.0));
      const fs::path rel = fs::path("plots") / (std::string("metrics_") + column + ".png");
      write_png(c.run_dir / rel, plot_bars(values));
      c.manifest.add_output(c.run_dir, rel);
    }
    any = true;
  }
  const auto grid = c.cfg.at("grid");
  if (!grid.empty()) {
    std::vector<std::map<std::string, fs::path>> columns;
    for (const auto& d : grid) {
      const fs::path dir = d.get<std::string>();
      if (!fs::is_directory(dir)) throw Error(ErrorCategory::missing_artifact, "grid directory not found: " + dir.string());
      std::map<std::string, fs::path> files;
      for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") files.emplace(id_of(e.path()), e.path());
      columns.push_back(std::move(files));
    }
    std::vector<std::vector<ImageBuffer>> rows;
    for (const auto& [id, first] : columns.front()) {
      std::vector<ImageBuffer> row;
      for (const auto& col : columns) {
        const auto it = col.find(id);
        if (it == col.end()) break;
        row.push_back(read_png(it->second));
      }
      if (row.size() == columns.size()) rows.push_back(std::move(row));
    }
    write_png(plots / "grid.png", image_grid(rows, c.cfg.at("cell")));
    c.manifest.add_output(c.run_dir, "plots/grid.png");
    c.manifest.results["grid_rows"] = rows.size();
    any = true;
  }
  if (!any) {
    write_png(plots / "loss.png", plot_lines({}));
    c.manifest.add_output(c.run_dir, "plots/loss.png");
  }
}

const std::map<std::string, std::function<void(Context&)>>& handlers() {
  static const std::map<std::string, std::function<void(Context&)>> h = {
      {"simulate-data", simulate_data}, {"train-align", train_align}, {"train-restore", train_restore},
      {"train-avatar", train_avatar},   {"restore", restore_cmd},     {"drive-avatar", drive_cmd},
      {"evaluate", evaluate_cmd},       {"bench", bench_cmd},         {"plot", plot_cmd}};
  return h;
}

/// Command-line options that map onto config keys ("a.b" for nested keys).
const std::map<std::string, std::vector<std::pair<std::string, std::string>>>& flag_table() {
  static const std::map<std::string, std::vector<std::pair<std::string, std::string>>> t = {
      {"simulate-data", {{"--n", "n"}, {"--resolution", "resolution"}, {"--model", "model"},
                         {"--model-seed", "model_seed"}, {"--num-identities", "num_identities"}}},
      {"train-align", {{"--dataset", "dataset"}, {"--slots", "slots"}, {"--steps", "align.steps"},
                       {"--lr", "align.lr"}, {"--batch", "align.batch"}}},
      {"train-restore", {{"--dataset", "dataset"}, {"--aligners", "aligners"}, {"--eye-tag", "eye_tag"},
                         {"--steps", "restore.steps"}, {"--lr", "restore.lr"}, {"--batch", "restore.batch"}}},
      {"train-avatar", {{"--dataset", "dataset"}, {"--model", "model"}, {"--stage1-steps", "avatar.stage1_steps"},
                        {"--stage2-steps", "avatar.stage2_steps"}, {"--lr", "avatar.lr"}, {"--batch", "avatar.batch"}}},
      {"restore", {{"--checkpoint", "checkpoint"}, {"--dataset", "dataset"}, {"--aligners", "aligners"},
                   {"--eye-tag", "eye_tag"}}},
      {"drive-avatar", {{"--checkpoint", "checkpoint"}, {"--dataset", "dataset"}, {"--model", "model"},
                        {"--restored", "restored"}, {"--yaw", "yaw"}, {"--pitch", "pitch"},
                        {"--oracle-expression", "oracle_expression"}}},
      {"evaluate", {{"--pred", "pred"}, {"--dataset", "dataset"}, {"--psnr-cap", "psnr_cap"}}},
      {"bench", {{"--op", "op"}, {"--checkpoint", "checkpoint"}, {"--model", "model"}, {"--resolution", "resolution"},
                 {"--warmup-iters", "warmup_iters"}, {"--timed-iters", "timed_iters"}, {"--batch", "batch"}}},
      {"plot", {{"--history", "history"}, {"--report", "report"}, {"--cell", "cell"}}},
  };
  return t;
}

/// Path-valued keys keep their text even when it would parse as JSON.
bool is_text_key(const std::string& key) {
  static const std::set<std::string> text = {"dataset", "model", "aligners", "checkpoint", "restored",
                                             "pred",    "history", "report",  "op",         "eye_tag", "device"};
  return text.count(key) > 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"rav: VR face restoration and avatar pipeline"};
  app.require_subcommand(1);
  struct Common {
    std::string config, run_dir, device, seed;
    bool force = false;
    std::vector<std::string> sets, grid;
  };
  std::map<std::string, Common> common;
  std::deque<std::string> storage;
  std::vector<std::tuple<std::string, CLI::Option*, std::string, std::string*>> bound;
  for (const char* name : kSubcommands) {
    auto* sub = app.add_subcommand(name, std::string("run ") + name);
    auto& c = common[name];
    sub->add_option("--run-dir", c.run_dir, "output run directory")->required();
    sub->add_option("--config", c.config, "JSON config file with per-subcommand sections");
    sub->add_flag("--force", c.force, "overwrite an existing run directory");
    sub->add_option("--seed", c.seed, "seed (overrides RAV_SEED and the config file)");
    sub->add_option("--device", c.device, "opaque device hint recorded in the manifest");
    sub->add_option("--set", c.sets, "config override key=value (JSON value), repeatable");
    if (std::string(name) == "plot") sub->add_option("--grid", c.grid, "image directories, one grid column each");
    for (const auto& [flag, key] : flag_table().at(name)) {
      storage.emplace_back();
      bound.emplace_back(name, sub->add_option(flag, storage.back(), "config key " + key), key, &storage.back());
    }
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code(ErrorCategory::invalid_config);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  const auto& c = common.at(command);
  try {
    ConfigSources src;
    src.defaults = default_config(command);
    if (!c.config.empty()) src.file_section = load_config_section(c.config, command);
    if (const char* env = std::getenv("RAV_SEED")) src.env_seed = std::string(env);
    for (const auto& [sub, opt, key, value] : bound) {
      if (sub != command || opt->count() == 0) continue;
      const auto leaf = key.substr(key.rfind('.') + 1);
      src.flags.merge_patch(is_text_key(leaf) ? parse_override(key + "=\"\"") : parse_override(key + "=" + *value));
      if (is_text_key(leaf)) {
        json* node = &src.flags;
        for (std::size_t s = 0, d; (d = key.find('.', s)) != std::string::npos; s = d + 1) node = &(*node)[key.substr(s, d - s)];
        (*node)[leaf] = *value;
      }
    }
    if (!c.grid.empty()) src.flags["grid"] = c.grid;
    if (!c.device.empty()) src.flags["device"] = c.device;
    if (!c.seed.empty()) src.flags["seed"] = parse_override("seed=" + c.seed).at("seed");
    for (const auto& s : c.sets) src.flags.merge_patch(parse_override(s));

    Context ctx;
    ctx.command = command;
    ctx.cfg = resolve_config(src);
    require(ctx.cfg.at("seed").is_number_unsigned() || ctx.cfg.at("seed").is_number_integer(),
            "seed must be an integer", ErrorCategory::invalid_config);
    require(ctx.cfg.at("seed").get<std::int64_t>() >= 0, "seed must be non-negative", ErrorCategory::invalid_config);
    ctx.run_dir = c.run_dir;
    ctx.manifest.command = command;
    ctx.manifest.config = ctx.cfg;
    ctx.manifest.seed = ctx.cfg.at("seed").get<std::uint64_t>();
    ctx.manifest.device = ctx.cfg.value("device", std::string("cpu"));
    if (command == "bench") BenchSettings::from_json(ctx.cfg);
    prepare_run_dir(ctx.run_dir, c.force);
    const auto t0 = Clock::now();
    try {
      handlers().at(command)(ctx);
    } catch (const json::exception& e) {
      throw Error(ErrorCategory::invalid_config, std::string("bad configuration value: ") + e.what());
    }
    ctx.timing["wall_s"] = std::chrono::duration<double>(Clock::now() - t0).count();
    write_text(ctx.run_dir / "timing.json", ctx.timing.dump(2) + "\n");
    const auto hash = ctx.manifest.write(ctx.run_dir);
    std::cout << command << ": wrote " << (ctx.run_dir / "manifest.json").string() << " (sha256 " << hash << ")\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error [" << category_name(e.category()) << "]: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << "\n";
    return exit_code(ErrorCategory::internal);
  }
}

}  // namespace rav::harness
