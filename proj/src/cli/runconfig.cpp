#include "cli/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace cli {

using nlohmann::json;

json default_config() {
  return json{
      {"command", ""},  // informational: stamped into resolved files
      {"seed", 1},
      {"variant", "qformer"},  // qformer | linear | heuristic | off
      {"model",
       {
           {"vpg_kind", "qformer"},  // qformer | linear
           {"patch", 8},
           {"grid_p", 8},
           {"d", 64},  // shared width: patch features, resampler, decoder
           {"k", 8},
           {"resampler_blocks", 2},
           {"layers", 8},
           {"heads", 4},
           {"max_seq", 96},
           {"insert_layer", -1},  // -1: decoder midpoint
           {"zero_init_both", true},
           {"bottom_fraction", 0.5},
       }},
      {"scene",
       {
           {"canvas", 64},
           {"min_objects", 2},
           {"max_objects", 4},
           {"min_size", 6},
           {"max_size", 16},
       }},
      {"data",
       {
           {"dir", "data"},
           {"n_pairs", 500},
           {"n_captions", 300},
           {"backbone", ""},  // empty: fresh init from model + seed
           {"choice_options", 4},
       }},
      {"pretrain",
       {
           {"steps", 1500},
           {"lr", 1e-3},
           {"warmup", 100},
           {"cap_batch", 8},
           {"pair_batch", 8},
           {"text_batch", 8},
           {"out", "backbone.json"},
           {"loss_csv", "pretrain_loss.csv"},
       }},
      {"train",
       {
           {"steps", 3000},
           {"total_steps", 0},  // 0: start_step + steps (set for split runs)
           {"lr", 1e-3},
           {"warmup", 100},
           {"disc_batch", 3},
           {"cap_batch", 8},  // 3:8 mirrors the synthetic-to-caption ratio
           {"backbone", "backbone.json"},
           {"resume", ""},  // checkpoint to continue from
           {"out", "checkpoint.json"},
           {"loss_csv", "train_loss.csv"},
       }},
      {"eval",
       {
           {"records", "data/records.jsonl"},
           {"model", "vpgc"},  // vpgc | echo
           {"backbone", "backbone.json"},
           {"checkpoint", "checkpoint.json"},
           {"per_task_cap", 500},
           {"max_new_tokens", 12},
           {"shuffle_probe", false},
           {"report_csv", "report.csv"},
           {"report_svg", "report.svg"},
           {"shuffle_csv", "shuffle_report.csv"},
       }},
      {"probe",
       {
           {"layers", json::array({2, 4, 6})},
           {"steps", 300},
           {"out_csv", "probe_layers.csv"},
           {"out_svg", "probe_layers.svg"},
       }},
      {"dump_attn",
       {
           {"image", ""},
           {"backbone", ""},  // empty: fresh init from model + seed
           {"out_prefix", "attn"},
       }},
  };
}

namespace {

const char* kind_word(const json& v) {
  if (v.is_object()) return "an object";
  if (v.is_array()) return "an array";
  if (v.is_string()) return "a string";
  if (v.is_boolean()) return "a boolean";
  if (v.is_number()) return "a number";
  return "a value";
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;  // int/double interchange
  return a.type() == b.type();
}

std::string join_key(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

const json* walk(const json& root, const std::string& dotted) {
  const json* at = &root;
  std::size_t pos = 0;
  while (pos <= dotted.size()) {
    const std::size_t dot = dotted.find('.', pos);
    const std::string key = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (!at->is_object() || !at->contains(key)) return nullptr;
    at = &(*at)[key];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  return at;
}

const json& require(const json& root, const std::string& dotted) {
  const json* v = walk(root, dotted);
  if (!v) throw std::runtime_error("config: missing key '" + dotted + "'");
  return *v;
}

}  // namespace

void validate_against_defaults(const json& user, const json& defaults,
                               const std::string& prefix) {
  if (!user.is_object())
    throw std::runtime_error("config: '" + (prefix.empty() ? std::string("<root>") : prefix) +
                             "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = join_key(prefix, key);
    if (!defaults.contains(key)) throw std::runtime_error("config: unknown key '" + path + "'");
    const json& want = defaults[key];
    if (want.is_object()) {
      validate_against_defaults(value, want, path);
    } else if (!same_kind(value, want)) {
      throw std::runtime_error("config: key '" + path + "' expects " + kind_word(want) +
                               ", got " + kind_word(value));
    }
  }
}

namespace {

void deep_merge(json& base, const json& over) {
  for (const auto& [key, value] : over.items()) {
    if (value.is_object() && base[key].is_object())
      deep_merge(base[key], value);
    else
      base[key] = value;
  }
}

}  // namespace

void apply_override(json& config, const json& defaults, const std::string& expr) {
  const std::size_t eq = expr.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::runtime_error("config: override '" + expr + "' is not KEY=VALUE");
  const std::string dotted = expr.substr(0, eq);
  const std::string raw = expr.substr(eq + 1);

  const json* want = walk(defaults, dotted);
  if (!want) throw std::runtime_error("config: unknown key '" + dotted + "'");
  if (want->is_object())
    throw std::runtime_error("config: key '" + dotted + "' is a section, not a value");

  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded() || want->is_string()) value = raw;
  if (!same_kind(value, *want))
    throw std::runtime_error("config: key '" + dotted + "' expects " + kind_word(*want) +
                             ", got '" + raw + "'");

  json* at = &config;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', pos);
    if (dot == std::string::npos) {
      (*at)[dotted.substr(pos)] = value;
      break;
    }
    at = &(*at)[dotted.substr(pos, dot - pos)];
    pos = dot + 1;
  }
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  json user;
  try {
    user = json::parse(in);
  } catch (const std::exception& e) {
    throw std::runtime_error("config: '" + path + "' is not valid JSON: " + e.what());
  }

  const json defaults = default_config();
  validate_against_defaults(user, defaults, "");

  RunConfig cfg;
  cfg.values = defaults;
  deep_merge(cfg.values, user);
  for (const auto& expr : overrides) apply_override(cfg.values, defaults, expr);

  const char* root = std::getenv("VPGC_OUT_ROOT");
  cfg.out_root = root && *root ? root : ".";
  return cfg;
}

int RunConfig::geti(const std::string& dotted) const {
  const json& v = require(values, dotted);
  if (!v.is_number_integer())
    throw std::runtime_error("config: key '" + dotted + "' expects an integer");
  return v.get<int>();
}

double RunConfig::getd(const std::string& dotted) const {
  const json& v = require(values, dotted);
  if (!v.is_number()) throw std::runtime_error("config: key '" + dotted + "' expects a number");
  return v.get<double>();
}

bool RunConfig::getb(const std::string& dotted) const {
  const json& v = require(values, dotted);
  if (!v.is_boolean()) throw std::runtime_error("config: key '" + dotted + "' expects a boolean");
  return v.get<bool>();
}

std::string RunConfig::gets(const std::string& dotted) const {
  const json& v = require(values, dotted);
  if (!v.is_string()) throw std::runtime_error("config: key '" + dotted + "' expects a string");
  return v.get<std::string>();
}

std::vector<int> RunConfig::get_ints(const std::string& dotted) const {
  const json& v = require(values, dotted);
  if (!v.is_array()) throw std::runtime_error("config: key '" + dotted + "' expects an array");
  std::vector<int> out;
  for (const auto& x : v) {
    if (!x.is_number_integer())
      throw std::runtime_error("config: key '" + dotted + "' expects integers");
    out.push_back(x.get<int>());
  }
  return out;
}

std::string RunConfig::resolve(const std::string& path) const {
  if (path.empty()) return path;
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(out_root) / p).string();
}

void write_resolved(const RunConfig& cfg, const std::string& dir, const std::string& command) {
  nlohmann::json out = cfg.values;
  out["command"] = command;
  std::filesystem::create_directories(dir.empty() ? "." : dir);
  const std::string path =
      (std::filesystem::path(dir.empty() ? "." : dir) / (command + ".resolved.json")).string();
  std::ofstream f(path);
  if (!f) throw std::runtime_error("config: cannot write '" + path + "'");
  f << out.dump(2) << "\n";
}

}  // namespace cli
