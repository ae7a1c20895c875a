#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "nn_doctest.h"

#include "rav/core/error.hpp"
#include "rav/core/io.hpp"
#include "rav/core/random.hpp"
#include "rav/harness/harness.hpp"

using namespace rav;
using namespace rav::harness;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ErrorCategory category_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.category();
  }
  FAIL("expected rav::Error");
  return ErrorCategory::internal;
}

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("rav_test_harness_" + name);
  fs::remove_all(p);
  return p;
}

int cli(std::vector<std::string> args) { return run_cli(args); }

bool is_colour(const ImageBuffer& img, int y, int x, const std::array<double, 3>& c) {
  for (int k = 0; k < 3; ++k)
    if (std::abs(img.at(y, x, k) - c[k]) > 1e-12) return false;
  return true;
}

struct EnvSeed {
  explicit EnvSeed(const char* v) { v ? setenv("RAV_SEED", v, 1) : unsetenv("RAV_SEED"); }
  ~EnvSeed() { unsetenv("RAV_SEED"); }
};

}  // namespace

TEST_CASE("config precedence: flags over RAV_SEED over file over defaults") {
  ConfigSources s;
  s.defaults = {{"seed", 1}, {"a", 1}, {"b", 1}, {"c", 1}, {"nested", {{"x", 1}, {"y", 1}}}};
  s.file_section = {{"seed", 2}, {"b", 2}, {"c", 2}, {"nested", {{"x", 2}}}};
  s.env_seed = "3";
  s.flags = {{"c", 4}};
  auto r = resolve_config(s);
  CHECK(r["seed"] == 3);
  CHECK(r["a"] == 1);
  CHECK(r["b"] == 2);
  CHECK(r["c"] == 4);
  CHECK(r["nested"]["x"] == 2);
  CHECK(r["nested"]["y"] == 1);
  s.flags["seed"] = 5;
  CHECK(resolve_config(s)["seed"] == 5);
  s.env_seed.reset();
  s.flags.erase("seed");
  CHECK(resolve_config(s)["seed"] == 2);
}

TEST_CASE("RAV_SEED must be a whole non-negative integer") {
  for (const char* bad : {"", "12x", "abc", " 4", "1.5", "-1", "+2", "18446744073709551616"}) {
    ConfigSources s;
    s.env_seed = bad;
    CHECK(category_of([&] { resolve_config(s); }) == ErrorCategory::invalid_config);
  }
  ConfigSources s;
  s.env_seed = "18446744073709551615";
  CHECK(resolve_config(s)["seed"].get<std::uint64_t>() == 18446744073709551615ull);
}

TEST_CASE("parse_override builds nested JSON") {
  CHECK(parse_override("a.b.c=3") == json{{"a", {{"b", {{"c", 3}}}}}});
  CHECK(parse_override("lr=1e-3")["lr"].get<double>() == doctest::Approx(1e-3));
  CHECK(parse_override("flag=true")["flag"] == true);
  CHECK(parse_override("name=front")["name"] == "front");
  CHECK(parse_override("list=[1,2]")["list"] == json::array({1, 2}));
  CHECK(parse_override("empty=")["empty"] == "");
  CHECK(category_of([] { parse_override("novalue"); }) == ErrorCategory::invalid_config);
  CHECK(category_of([] { parse_override("=3"); }) == ErrorCategory::invalid_config);
  CHECK(category_of([] { parse_override("a..b=3"); }) == ErrorCategory::invalid_config);
}

TEST_CASE("config files: sections, missing file, malformed JSON") {
  const auto dir = fresh_dir("config");
  fs::create_directories(dir);
  write_text(dir / "ok.json", R"({"simulate-data": {"n": 3}, "bench": {"timed_iters": 20}})");
  write_text(dir / "bad.json", "{not json");
  write_text(dir / "section.json", R"({"simulate-data": 4})");
  CHECK(load_config_section(dir / "ok.json", "simulate-data") == json{{"n", 3}});
  CHECK(load_config_section(dir / "ok.json", "plot") == json::object());
  CHECK(category_of([&] { load_config_section(dir / "nope.json", "plot"); }) == ErrorCategory::missing_artifact);
  CHECK(category_of([&] { load_config_section(dir / "bad.json", "plot"); }) == ErrorCategory::invalid_config);
  CHECK(category_of([&] { load_config_section(dir / "section.json", "simulate-data"); }) ==
        ErrorCategory::invalid_config);
}

TEST_CASE("every subcommand has defaults with a seed and device") {
  for (const char* c : kSubcommands) {
    const auto d = default_config(c);
    CHECK(d.at("seed").is_number_integer());
    CHECK(d.at("device") == "cpu");
  }
  CHECK(category_of([] { default_config("train-everything"); }) == ErrorCategory::invalid_config);
}

TEST_CASE("bench settings validation") {
  CHECK(BenchSettings::from_json(default_config("bench")).timed_iters == 50);
  CHECK(category_of([] { BenchSettings::from_json({{"timed_iters", 9}}); }) == ErrorCategory::invalid_config);
  CHECK(category_of([] { BenchSettings::from_json({{"warmup_iters", 0}}); }) == ErrorCategory::invalid_config);
  CHECK(category_of([] { BenchSettings::from_json({{"batch", "two"}}); }) == ErrorCategory::invalid_config);
}

TEST_CASE("bench_stats against hand-computed values") {
  std::vector<double> t;
  for (int i = 10; i >= 1; --i) t.push_back(i);
  const auto s = bench_stats(t);
  CHECK(s.mean_s == doctest::Approx(5.5));
  CHECK(s.median_s == doctest::Approx(5.5));
  CHECK(s.p95_s == 10.0);  // nearest rank ceil(0.95 * 10) = 10
  CHECK(s.std_s == doctest::Approx(std::sqrt(82.5 / 9.0)));
  CHECK(s.cv == doctest::Approx(std::sqrt(82.5 / 9.0) / 5.5));

  std::vector<double> many(20);
  for (int i = 0; i < 20; ++i) many[i] = i + 1;
  CHECK(bench_stats(many).p95_s == 19.0);  // ceil(19.0) = 19th smallest

  const auto one = bench_stats({0.25});
  CHECK(one.median_s == 0.25);
  CHECK(one.p95_s == 0.25);
  CHECK(one.std_s == 0.0);
  CHECK(category_of([] { bench_stats({}); }) == ErrorCategory::contract_violation);

  Rng rng = make_rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(10 + trial);
    for (double& x : v) x = uniform(rng, 0.001, 1.0);
    const auto r = bench_stats(v);
    CHECK(r.p95_s >= r.median_s);
    CHECK(r.p95_s <= *std::max_element(v.begin(), v.end()));
    CHECK(r.cv >= 0.0);
  }
}

TEST_CASE("run_bench calls warmup plus timed iterations") {
  BenchSettings s;
  s.warmup_iters = 3;
  s.timed_iters = 12;
  int calls = 0;
  const auto r = run_bench("noop", s, [&] { ++calls; });
  CHECK(calls == 15);
  CHECK(r.timings.size() == 12);
  const auto j = r.to_json();
  CHECK(j["op"] == "noop");
  CHECK(j["timings_s"].size() == 12);
  CHECK(j["environment"]["warmup_iters"] == 3);
  CHECK(j["p95_s"].get<double>() >= j["median_s"].get<double>());
}

TEST_CASE("run directories refuse to overwrite without force") {
  const auto dir = fresh_dir("rundir");
  prepare_run_dir(dir, false);
  prepare_run_dir(dir, false);  // empty directory is reusable
  write_text(dir / "old.txt", "x");
  CHECK(category_of([&] { prepare_run_dir(dir, false); }) == ErrorCategory::io_error);
  CHECK(fs::exists(dir / "old.txt"));
  prepare_run_dir(dir, true);
  CHECK(fs::is_empty(dir));
  write_text(dir.string() + "_file", "x");
  CHECK(category_of([&] { prepare_run_dir(dir.string() + "_file", true); }) == ErrorCategory::io_error);
}

TEST_CASE("run manifest records hashes and returns its own hash") {
  const auto dir = fresh_dir("manifest");
  fs::create_directories(dir / "sub");
  write_text(dir / "sub" / "out.txt", "hello");
  RunManifest m;
  m.command = "plot";
  m.seed = 9;
  m.device = "cpu";
  m.config = {{"seed", 9}};
  m.add_input(dir / "sub" / "out.txt");
  m.add_input(dir / "not-there");  // silently skipped
  m.add_output(dir, "sub/out.txt");
  const auto hash = m.write(dir);
  CHECK(hash == sha256_file(dir / "manifest.json"));
  const auto j = json::parse(read_text(dir / "manifest.json"));
  CHECK(j["schema"] == "rav-run/1");
  CHECK(j["inputs"].size() == 1);
  CHECK(j["outputs"][0]["path"] == "sub/out.txt");
  CHECK(j["outputs"][0]["sha256"] == sha256_hex("hello"));
}

TEST_CASE("bar plot draws one bar per value") {
  for (const auto& values : std::vector<std::vector<double>>{{1.0}, {0.3, 0.9, 0.5}, {2, 4, 6, 8, 10, 1, 3}}) {
    const auto img = plot_bars(values);
    const int y = img.height() - kPlotMargin - 2;  // just above the zero baseline
    int runs = 0;
    bool inside = false;
    for (int x = 0; x < img.width(); ++x) {
      const bool bar = is_colour(img, y, x, palette(0));
      if (bar && !inside) ++runs;
      inside = bar;
    }
    CHECK(runs == static_cast<int>(values.size()));
  }
}

TEST_CASE("empty plots are blank axes") {
  for (const auto& img : {plot_lines({}), plot_bars({}), plot_lines({{"nan", {NAN, NAN}}})}) {
    CHECK(img.height() == 320);
    CHECK(img.width() == 480);
    int black = 0;
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) {
        const bool w = is_colour(img, y, x, {1, 1, 1}), b = is_colour(img, y, x, {0, 0, 0});
        CHECK((w || b));
        black += b;
      }
    CHECK(black == 2 * (480 - 2 * kPlotMargin + 1) + 2 * (320 - 2 * kPlotMargin + 1) - 4);
  }
  CHECK(category_of([] { plot_lines({}, 40, 40); }) == ErrorCategory::invalid_config);
}

TEST_CASE("line plot spans the frame and uses series colours") {
  const auto img = plot_lines({{"a", {0.0, 1.0}}, {"b", {1.0, 1.0}}});
  const int l = kPlotMargin + 1, r = img.width() - kPlotMargin - 1;
  const int b = img.height() - kPlotMargin - 1, t = kPlotMargin + 1;
  CHECK(is_colour(img, b, l, palette(0)));
  CHECK(is_colour(img, t, (l + r) / 2, palette(1)));
}

TEST_CASE("image grid geometry") {
  ImageBuffer gray(8, 8, 1, 0.25), rgb(10, 10, 3, 0.5);
  const auto g = image_grid({{gray, rgb, gray}, {rgb}}, 10, 2);
  CHECK(g.height() == 2 * 12 + 2);
  CHECK(g.width() == 3 * 12 + 2);
  CHECK(g.channels() == 3);
  CHECK(g.at(0, 0, 0) == 1.0);              // padding is white
  CHECK(g.at(2 + 5, 2 + 5, 1) == doctest::Approx(0.25));  // gray resized and replicated
  CHECK(g.at(2 + 5, 14 + 5, 2) == 0.5);
  CHECK(g.at(14 + 5, 14 + 5, 0) == 1.0);    // missing cells stay white
  CHECK(image_grid({}).width() == 2);
}

TEST_CASE("loss history plots: one per phase, placeholder when empty") {
  const auto dir = fresh_dir("plots");
  CHECK(plot_history(LossHistory{}, dir) == std::vector<std::string>{"loss.png"});
  LossHistory h;
  for (int i = 0; i < 5; ++i) {
    h.add(i, "G", {{"l1", 1.0 / (i + 1)}, {"adv", 0.5}});
    h.add(i, "D", {{"total", 0.7}});
  }
  const auto files = plot_history(h, dir);
  CHECK(files == std::vector<std::string>{"loss_G.png", "loss_D.png"});
  for (const auto& f : files) CHECK(read_png(dir / f).width() == 480);
}

TEST_CASE("cli: usage errors and unknown subcommands exit with invalid-config") {
  CHECK(cli({}) == 2);
  CHECK(cli({"fly"}) == 2);
  CHECK(cli({"simulate-data"}) == 2);  // --run-dir is required
  CHECK(cli({"simulate-data", "--run-dir", fresh_dir("bad_n").string(), "--n", "0"}) == 2);
  CHECK(cli({"simulate-data", "--run-dir", fresh_dir("bad_seed").string(), "--seed", "abc"}) == 2);
  CHECK(cli({"bench", "--run-dir", fresh_dir("bad_iters").string(), "--timed-iters", "3"}) == 2);
  CHECK(cli({"simulate-data", "--help"}) == 0);
}

TEST_CASE("cli: simulate-data is reproducible and honours seed precedence") {
  EnvSeed unset(nullptr);
  const auto a = fresh_dir("sim_a"), b = fresh_dir("sim_b"), c = fresh_dir("sim_c");
  const std::vector<std::string> common = {"--n", "3", "--resolution", "64", "--seed", "11"};
  auto run = [&](const fs::path& dir, std::vector<std::string> extra) {
    std::vector<std::string> args = {"simulate-data", "--run-dir", dir.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args);
  };
  REQUIRE(run(a, common) == 0);
  REQUIRE(run(b, common) == 0);
  CHECK(read_text(a / "manifest.json") == read_text(b / "manifest.json"));
  CHECK(read_text(a / "dataset" / "manifest.json") == read_text(b / "dataset" / "manifest.json"));

  CHECK(run(a, common) == 4);  // existing run directory
  CHECK(run(a, {"--n", "2", "--resolution", "64", "--force"}) == 0);
  CHECK(json::parse(read_text(a / "manifest.json"))["results"]["count"] == 2);

  {
    EnvSeed env("77");
    REQUIRE(run(c, {"--n", "1", "--resolution", "64"}) == 0);
    CHECK(json::parse(read_text(c / "manifest.json"))["seed"] == 77);
    REQUIRE(run(c, {"--n", "1", "--resolution", "64", "--seed", "5", "--force"}) == 0);
    CHECK(json::parse(read_text(c / "manifest.json"))["seed"] == 5);
  }
  {
    EnvSeed env("seven");
    CHECK(run(c, {"--n", "1", "--force"}) == 2);
  }

  const auto cfg = fresh_dir("sim_cfg.json");
  write_text(cfg, R"({"simulate-data": {"n": 2, "resolution": 64, "seed": 4}})");
  REQUIRE(run(c, {"--config", cfg.string(), "--force"}) == 0);
  auto m = json::parse(read_text(c / "manifest.json"));
  CHECK(m["results"]["count"] == 2);
  CHECK(m["seed"] == 4);
  REQUIRE(run(c, {"--config", cfg.string(), "--force", "--n", "1", "--set", "resolution=32"}) == 0);
  m = json::parse(read_text(c / "manifest.json"));
  CHECK(m["results"]["count"] == 1);
  CHECK(m["config"]["resolution"] == 32);
  CHECK(run(c, {"--config", (c / "missing.json").string(), "--force"}) == 3);
}

TEST_CASE("cli: missing artifacts exit with missing-artifact") {
  const auto dir = fresh_dir("missing");
  CHECK(cli({"bench", "--run-dir", (dir / "b").string(), "--checkpoint", (dir / "none.ravck").string()}) == 3);
  CHECK(cli({"bench", "--run-dir", (dir / "b2").string()}) == 2);  // no checkpoint given at all
  CHECK(cli({"restore", "--run-dir", (dir / "r").string(), "--checkpoint", (dir / "none.ravck").string(),
             "--dataset", (dir / "none.json").string()}) == 3);
  CHECK(cli({"evaluate", "--run-dir", (dir / "e").string(), "--pred", dir.string(), "--dataset",
             (dir / "none.json").string()}) == 3);
  CHECK(cli({"plot", "--run-dir", (dir / "p").string(), "--grid", (dir / "nowhere").string()}) == 3);
}

TEST_CASE("cli: evaluating the ground truth gives perfect scores, plot consumes the report") {
  const auto root = fresh_dir("eval");
  REQUIRE(cli({"simulate-data", "--run-dir", (root / "sim").string(), "--n", "2", "--resolution", "64"}) == 0);
  const auto manifest = root / "sim" / "dataset" / "manifest.json";
  fs::create_directories(root / "pred");
  for (const auto& e : fs::directory_iterator(root / "sim" / "dataset" / "full")) {
    const auto stem = e.path().stem().string();
    fs::copy_file(e.path(), root / "pred" / (stem.substr(0, stem.find('_')) + ".png"));
  }
  REQUIRE(cli({"evaluate", "--run-dir", (root / "ev").string(), "--pred", (root / "pred").string(), "--dataset",
               manifest.string(), "--psnr-cap", "60"}) == 0);
  const auto report = json::parse(read_text(root / "ev" / "report.json"));
  CHECK(report["count"] == 2);
  CHECK(report["mean"]["ssim"].get<double>() == doctest::Approx(1.0));
  CHECK(report["mean"]["psnr_db"].get<double>() == doctest::Approx(60.0));
  CHECK(report["mean"]["perceptual"].get<double>() == doctest::Approx(0.0));
  CHECK(fs::exists(root / "ev" / "report.csv"));
  const auto run = json::parse(read_text(root / "ev" / "manifest.json"));
  CHECK(run["inputs"][0]["sha256"] == sha256_file(manifest));

  REQUIRE(cli({"plot", "--run-dir", (root / "pl").string(), "--report", (root / "ev" / "report.json").string(),
               "--grid", (root / "sim" / "dataset" / "full").string(), "--grid", (root / "pred").string()}) == 0);
  CHECK(fs::exists(root / "pl" / "plots" / "metrics_ssim.png"));
  const auto grid = read_png(root / "pl" / "plots" / "grid.png");
  CHECK(grid.height() == 2 * 66 + 2);
  CHECK(grid.width() == 2 * 66 + 2);
}
