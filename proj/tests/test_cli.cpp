#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cli/cli.hpp"
#include "doctest.h"
#include "evalkit/evalkit.hpp"
#include "json.hpp"
#include "scenegen/scenegen.hpp"

using nlohmann::json;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const char* name) : path(name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
    setenv("VPGC_OUT_ROOT", path.string().c_str(), 1);
  }
  ~TempDir() {
    unsetenv("VPGC_OUT_ROOT");
    std::filesystem::remove_all(path);
  }
  std::string str() const { return path.string(); }
  std::string file(const std::string& rel) const { return (path / rel).string(); }
};

/// A configuration small enough that every command finishes in well under a
/// second: 32px canvas on a 4x4 grid, width-16 stack, four decoder layers.
json tiny_config() {
  json j = cli::default_config();
  j.erase("command");
  j["seed"] = 7;
  j["model"]["grid_p"] = 4;
  j["model"]["d"] = 16;
  j["model"]["k"] = 2;
  j["model"]["layers"] = 4;
  j["model"]["heads"] = 2;
  j["model"]["max_seq"] = 64;
  j["scene"]["canvas"] = 32;
  j["data"]["n_pairs"] = 6;
  j["data"]["n_captions"] = 4;
  j["data"]["choice_options"] = 3;
  j["pretrain"]["steps"] = 3;
  j["pretrain"]["warmup"] = 1;
  j["train"]["steps"] = 4;
  j["train"]["warmup"] = 1;
  j["eval"]["max_new_tokens"] = 6;
  j["probe"]["layers"] = {1, 2};
  j["probe"]["steps"] = 2;
  return j;
}

std::string write_config(const TempDir& dir, const json& j, const char* name = "config.json") {
  const std::string path = dir.file(name);
  std::ofstream f(path);
  f << j.dump(2) << "\n";
  return path;
}

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

bool throws_containing(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
  } catch (const std::exception& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

}  // namespace

TEST_CASE("config: defaults validate against themselves and reject strangers") {
  const json defaults = cli::default_config();
  CHECK_NOTHROW(cli::validate_against_defaults(defaults, defaults, ""));

  json bad = defaults;
  bad["model"]["bogus"] = 1;
  CHECK(throws_containing([&] { cli::validate_against_defaults(bad, defaults, ""); },
                          "unknown key 'model.bogus'"));

  json wrong_kind = json{{"model", {{"d", "sixty-four"}}}};
  CHECK(throws_containing([&] { cli::validate_against_defaults(wrong_kind, defaults, ""); },
                          "'model.d' expects a number"));

  json wrong_section = json{{"model", 5}};
  CHECK(throws_containing([&] { cli::validate_against_defaults(wrong_section, defaults, ""); },
                          "'model' must be an object"));
}

TEST_CASE("config: file loading, merging, and dotted overrides") {
  TempDir dir("tmp_cli_config");
  const std::string path = write_config(dir, json{{"seed", 3}, {"model", {{"d", 32}}}});

  SUBCASE("file values override defaults, untouched keys keep theirs") {
    cli::RunConfig cfg = cli::load_run_config(path, {});
    CHECK(cfg.geti("seed") == 3);
    CHECK(cfg.geti("model.d") == 32);
    CHECK(cfg.geti("model.layers") == 8);
    CHECK(cfg.gets("variant") == "qformer");
  }

  SUBCASE("--set expressions win over the file") {
    cli::RunConfig cfg = cli::load_run_config(
        path, {"model.d=48", "variant=off", "eval.shuffle_probe=true", "probe.layers=[1,3]"});
    CHECK(cfg.geti("model.d") == 48);
    CHECK(cfg.gets("variant") == "off");
    CHECK(cfg.getb("eval.shuffle_probe"));
    CHECK(cfg.get_ints("probe.layers") == std::vector<int>{1, 3});
  }

  SUBCASE("string keys take the raw text, no quoting needed") {
    cli::RunConfig cfg = cli::load_run_config(path, {"data.dir=runs/alpha"});
    CHECK(cfg.gets("data.dir") == "runs/alpha");
  }

  SUBCASE("bad overrides are rejected by name") {
    CHECK(throws_containing([&] { cli::load_run_config(path, {"model.bogus=1"}); },
                            "unknown key 'model.bogus'"));
    CHECK(throws_containing([&] { cli::load_run_config(path, {"model=1"}); },
                            "'model' is a section"));
    CHECK(throws_containing([&] { cli::load_run_config(path, {"model.d=fast"}); },
                            "'model.d' expects a number"));
    CHECK(throws_containing([&] { cli::load_run_config(path, {"no-equals"}); },
                            "not KEY=VALUE"));
  }

  SUBCASE("unknown file keys and unreadable files fail loudly") {
    const std::string bad = write_config(dir, json{{"sneed", 3}}, "bad.json");
    CHECK(throws_containing([&] { cli::load_run_config(bad, {}); }, "unknown key 'sneed'"));
    CHECK(throws_containing([&] { cli::load_run_config(dir.file("absent.json"), {}); },
                            "cannot open"));
    std::ofstream(dir.file("broken.json")) << "{not json";
    CHECK(throws_containing([&] { cli::load_run_config(dir.file("broken.json"), {}); },
                            "not valid JSON"));
  }

  SUBCASE("relative paths resolve against the output root") {
    cli::RunConfig cfg = cli::load_run_config(path, {});
    CHECK(cfg.resolve("data") == (dir.path / "data").string());
    CHECK(cfg.resolve("/abs/p") == "/abs/p");
    CHECK(cfg.resolve("").empty());
  }
}

TEST_CASE("gen-data: artifacts, histogram, and byte-identical reruns") {
  TempDir dir("tmp_cli_gen");
  const std::string path = write_config(dir, tiny_config());

  CliResult r = run_cli({"gen-data", "--config", path});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("pairs: 6 written") != std::string::npos);

  // The printed histogram accounts for every pair.
  int histogram_total = 0;
  std::istringstream lines(r.out);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("edits:", 0) != 0) continue;
    std::istringstream words(line);
    std::string word;
    while (words >> word) {
      const std::size_t eq = word.find('=');
      if (eq != std::string::npos) histogram_total += std::stoi(word.substr(eq + 1));
    }
  }
  CHECK(histogram_total == 6);

  const std::string manifest = read_file(dir.file("data/manifest.jsonl"));
  CHECK(count_lines(manifest) == 6);
  for (int i = 0; i < 6; ++i) {
    char scene[32], edited[32];
    std::snprintf(scene, sizeof(scene), "data/scene_%04d.ppm", i);
    std::snprintf(edited, sizeof(edited), "data/edited_%04d.ppm", i);
    CHECK(std::filesystem::exists(dir.file(scene)));
    CHECK(std::filesystem::exists(dir.file(edited)));
  }

  // Records: one open and one choice task per pair, image refs readable.
  const auto records = evalkit::load_records(dir.file("data/records.jsonl"));
  int open = 0, choice = 0;
  for (const auto& rec : records) {
    if (rec.is_choice()) {
      ++choice;
      CHECK(rec.options.size() >= 2);
      CHECK(rec.options[static_cast<std::size_t>(rec.gold_index)] == rec.response);
    } else {
      ++open;
    }
    REQUIRE(rec.segments.size() == 2);
    CHECK_NOTHROW(scenegen::read_ppm(rec.segments[0].image_ref));
  }
  CHECK(open == 6);
  CHECK(choice == 6);

  // The resolved config names the command and reloads as a valid config.
  const json resolved = json::parse(read_file(dir.file("data/gen-data.resolved.json")));
  CHECK(resolved.at("command") == "gen-data");
  CHECK_NOTHROW(cli::validate_against_defaults(resolved, cli::default_config(), ""));

  CliResult again = run_cli({"gen-data", "--config", path, "--set", "data.dir=data2"});
  REQUIRE(again.code == 0);
  CHECK(read_file(dir.file("data2/manifest.jsonl")) == manifest);
  CHECK(read_file(dir.file("data2/records.jsonl")) == read_file(dir.file("data/records.jsonl")));
}

TEST_CASE("pretrain then train: artifacts, reruns, resume, and the off variant") {
  TempDir dir("tmp_cli_train");
  const std::string path = write_config(dir, tiny_config());
  REQUIRE(run_cli({"gen-data", "--config", path}).code == 0);

  CliResult pre = run_cli({"pretrain", "--config", path});
  CAPTURE(pre.err);
  REQUIRE(pre.code == 0);
  CHECK(std::filesystem::exists(dir.file("backbone.json")));
  const std::string pre_csv = read_file(dir.file("pretrain_loss.csv"));
  CHECK(count_lines(pre_csv) == 4);  // header + 3 steps
  CHECK(pre_csv.rfind("step,lr,loss_text,loss_cap", 0) == 0);
  CHECK(std::filesystem::exists(dir.file("pretrain.resolved.json")));

  CliResult tr = run_cli({"train", "--config", path});
  CAPTURE(tr.err);
  REQUIRE(tr.code == 0);
  CHECK(std::filesystem::exists(dir.file("checkpoint.json")));
  const std::string loss_csv = read_file(dir.file("train_loss.csv"));
  CHECK(count_lines(loss_csv) == 5);  // header + 4 steps
  CHECK(loss_csv.rfind("step,lr,loss_disc,loss_cap", 0) == 0);

  SUBCASE("a rerun with the same config is byte-identical") {
    CliResult again = run_cli({"train", "--config", path, "--set", "train.loss_csv=again.csv",
                               "--set", "train.out=ck_again.json"});
    REQUIRE(again.code == 0);
    CHECK(read_file(dir.file("again.csv")) == loss_csv);
  }

  SUBCASE("a split run replays the straight run's trace") {
    CliResult straight = run_cli({"train", "--config", path, "--set", "train.total_steps=4",
                                  "--set", "train.loss_csv=straight.csv", "--set",
                                  "train.out=ck_s.json"});
    REQUIRE(straight.code == 0);
    CliResult first = run_cli({"train", "--config", path, "--set", "train.total_steps=4",
                               "--set", "train.steps=2", "--set", "train.loss_csv=half.csv",
                               "--set", "train.out=ck_half.json"});
    REQUIRE(first.code == 0);
    CliResult second = run_cli({"train", "--config", path, "--set", "train.total_steps=4",
                                "--set", "train.steps=2", "--set",
                                "train.resume=ck_half.json", "--set",
                                "train.loss_csv=rest.csv", "--set", "train.out=ck_rest.json"});
    CAPTURE(second.err);
    REQUIRE(second.code == 0);

    // Straight rows 2..3 must byte-match the resumed run's rows.
    std::istringstream all(read_file(dir.file("straight.csv")));
    std::vector<std::string> rows;
    std::string row;
    while (std::getline(all, row)) rows.push_back(row);
    REQUIRE(rows.size() == 5);
    const std::string rest = read_file(dir.file("rest.csv"));
    CHECK(rest == rows[0] + "\n" + rows[3] + "\n" + rows[4] + "\n");
  }

  SUBCASE("the off variant still produces the run artifacts") {
    CliResult off = run_cli({"train", "--config", path, "--set", "variant=off", "--set",
                             "train.loss_csv=off.csv", "--set", "train.out=ck_off.json"});
    CAPTURE(off.err);
    REQUIRE(off.code == 0);
    CHECK(read_file(dir.file("off.csv")) == "step,lr,loss_disc,loss_cap\n");
    CHECK(std::filesystem::exists(dir.file("ck_off.json")));
  }

  SUBCASE("a missing backbone is a loud nonzero exit") {
    CliResult bad = run_cli({"train", "--config", path, "--set", "train.backbone=nope.json"});
    CHECK(bad.code == 1);
    CHECK(bad.err.rfind("error:", 0) == 0);
  }
}

TEST_CASE("eval: echo fixture, caps, checkpointed model, shuffle probe") {
  TempDir dir("tmp_cli_eval");
  const std::string path = write_config(dir, tiny_config());
  REQUIRE(run_cli({"gen-data", "--config", path}).code == 0);

  SUBCASE("the echo fixture scores 1.0 on every task") {
    CliResult r = run_cli({"eval", "--config", path, "--set", "eval.model=echo"});
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    const std::string csv = read_file(dir.file("report.csv"));
    CHECK(csv.rfind("task,category,metric,n,score", 0) == 0);
    CHECK(csv.find("difference-open,difference,rouge_l,6,1\n") != std::string::npos);
    CHECK(csv.find("difference-choice,difference,accuracy,6,1\n") != std::string::npos);
    CHECK(read_file(dir.file("report.svg")).find("<svg") == 0);
    CHECK(std::filesystem::exists(dir.file("eval.resolved.json")));
  }

  SUBCASE("the per-task cap keeps the first records") {
    CliResult r = run_cli({"eval", "--config", path, "--set", "eval.model=echo", "--set",
                           "eval.per_task_cap=1"});
    REQUIRE(r.code == 0);
    const std::string csv = read_file(dir.file("report.csv"));
    CHECK(csv.find("difference-open,difference,rouge_l,1,1\n") != std::string::npos);
    CHECK(csv.find("difference-choice,difference,accuracy,1,1\n") != std::string::npos);
  }

  SUBCASE("a trained checkpoint evaluates and the shuffle probe reports") {
    REQUIRE(run_cli({"pretrain", "--config", path}).code == 0);
    REQUIRE(run_cli({"train", "--config", path}).code == 0);
    CliResult r = run_cli({"eval", "--config", path, "--set", "eval.shuffle_probe=true"});
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("eval: 12 records (0 skipped)") != std::string::npos);
    const std::string shuffle = read_file(dir.file("shuffle_report.csv"));
    CHECK(shuffle.rfind("task,category,metric,n,original,shuffled,delta", 0) == 0);
    CHECK(count_lines(shuffle) == 3);  // header + one row per (task, metric)
  }

  SUBCASE("an unknown model kind is rejected") {
    CliResult r = run_cli({"eval", "--config", path, "--set", "eval.model=parrot"});
    CHECK(r.code == 1);
    CHECK(r.err.find("eval.model must be 'vpgc' or 'echo'") != std::string::npos);
  }
}

TEST_CASE("probe-layers: per-layer rows and a line chart") {
  TempDir dir("tmp_cli_probe");
  const std::string path = write_config(dir, tiny_config());
  REQUIRE(run_cli({"gen-data", "--config", path}).code == 0);
  REQUIRE(run_cli({"pretrain", "--config", path}).code == 0);

  CliResult r = run_cli({"probe-layers", "--config", path});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("layer 1:") != std::string::npos);
  CHECK(r.out.find("layer 2:") != std::string::npos);

  const std::string csv = read_file(dir.file("probe_layers.csv"));
  CHECK(csv.rfind("layer,metric,n,score", 0) == 0);
  CHECK(count_lines(csv) == 5);  // header + 2 layers x 2 metrics
  CHECK(csv.find("1,rouge_l,6,") != std::string::npos);
  CHECK(csv.find("2,accuracy,6,") != std::string::npos);

  const std::string svg = read_file(dir.file("probe_layers.svg"));
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("rouge_l") != std::string::npos);

  CliResult bad = run_cli({"probe-layers", "--config", path, "--set", "probe.layers=[9]"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("outside [1, 3]") != std::string::npos);
}

TEST_CASE("dump-attn: trace plus a normalized global heatmap") {
  TempDir dir("tmp_cli_attn");
  const std::string path = write_config(dir, tiny_config());
  REQUIRE(run_cli({"gen-data", "--config", path}).code == 0);

  CliResult r = run_cli({"dump-attn", "--config", path, "--set",
                         "dump_attn.image=data/scene_0000.ppm", "--set",
                         "dump_attn.out_prefix=maps/attn"});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("global map sum 1") != std::string::npos);

  const std::string trace = read_file(dir.file("maps/attn_trace.csv"));
  CHECK(count_lines(trace) > 2 * 16);  // two resampler blocks, 2 queries x 16 cells
  const scenegen::Raster heat = scenegen::read_ppm(dir.file("maps/attn_global.ppm"));
  CHECK(heat.width == 4);
  CHECK(heat.height == 4);

  CliResult none = run_cli({"dump-attn", "--config", path});
  CHECK(none.code == 1);
  CHECK(none.err.find("dump_attn.image is required") != std::string::npos);
}

TEST_CASE("argument plumbing: help, bad flags, and missing inputs") {
  TempDir dir("tmp_cli_args");

  CliResult empty = run_cli({});
  CHECK(empty.code != 0);

  CliResult help = run_cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("gen-data") != std::string::npos);
  CHECK(help.out.find("probe-layers") != std::string::npos);

  CliResult unknown = run_cli({"explode", "--config", "x.json"});
  CHECK(unknown.code != 0);

  CliResult no_config = run_cli({"train"});
  CHECK(no_config.code != 0);
  CHECK(no_config.err.find("--config") != std::string::npos);

  CliResult missing = run_cli({"train", "--config", dir.file("absent.json")});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("cannot open") != std::string::npos);
}
