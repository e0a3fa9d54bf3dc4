#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace cli {

/// Every known configuration key with its default value. User files and
/// --set overrides may only touch keys present here.
nlohmann::json default_config();

/// A fully merged run configuration: defaults <- config file <- --set
/// overrides. Relative paths resolve against the output root, which comes
/// from $VPGC_OUT_ROOT (falling back to the current directory).
struct RunConfig {
  nlohmann::json values;
  std::string out_root;

  int geti(const std::string& dotted) const;
  double getd(const std::string& dotted) const;
  bool getb(const std::string& dotted) const;
  std::string gets(const std::string& dotted) const;
  std::vector<int> get_ints(const std::string& dotted) const;

  /// Joins a config-relative path onto the output root; absolute paths and
  /// empty strings pass through.
  std::string resolve(const std::string& path) const;
};

/// Rejects keys absent from the defaults and scalar/object kind mismatches;
/// the error names the offending dotted path.
void validate_against_defaults(const nlohmann::json& user, const nlohmann::json& defaults,
                               const std::string& prefix);

/// One KEY=VALUE expression with a dotted key. The value is parsed as JSON
/// when it parses (numbers, bools, arrays) and kept verbatim otherwise.
void apply_override(nlohmann::json& config, const nlohmann::json& defaults,
                    const std::string& expr);

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

/// Writes the merged configuration (with its "command" field set) next to
/// the command's outputs as <command>.resolved.json, so any run can be
/// repeated from that file alone.
void write_resolved(const RunConfig& cfg, const std::string& dir, const std::string& command);

// Subcommand bodies. Each returns 0 only after every promised output file
// exists on disk; fatal problems surface as exceptions.
int cmd_gen_data(const RunConfig& cfg, std::ostream& out);
int cmd_pretrain(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_eval(const RunConfig& cfg, std::ostream& out);
int cmd_probe_layers(const RunConfig& cfg, std::ostream& out);
int cmd_dump_attn(const RunConfig& cfg, std::ostream& out);

/// Full argv-style entry point (without the program name): parses the
/// subcommand, loads the config, dispatches, and maps exceptions to exit
/// code 1 with an "error:" line on err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cli
