#include "cli/cli.hpp"

#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

namespace cli {

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"synthetic image-difference experiments: data, training, evaluation"};
  app.require_subcommand(1);

  const std::map<std::string, std::function<int(const RunConfig&, std::ostream&)>> commands = {
      {"gen-data", cmd_gen_data},   {"pretrain", cmd_pretrain},
      {"train", cmd_train},         {"eval", cmd_eval},
      {"probe-layers", cmd_probe_layers}, {"dump-attn", cmd_dump_attn},
  };
  const std::map<std::string, std::string> blurbs = {
      {"gen-data", "build the paired-scene dataset, rasters, and eval records"},
      {"pretrain", "teach a fresh backbone captioning and the sentence grammar"},
      {"train", "tune the add-on weights on a generated dataset"},
      {"eval", "score a checkpoint on eval records (reports + optional shuffle probe)"},
      {"probe-layers", "sweep the insertion layer, one fresh add-on per layer"},
      {"dump-attn", "write the resampler's attention trace and global heatmap"},
  };

  struct SubArgs {
    std::string config;
    std::vector<std::string> sets;
  };
  std::map<std::string, SubArgs> sub_args;
  for (const auto& [name, fn] : commands) {
    (void)fn;
    CLI::App* sub = app.add_subcommand(name, blurbs.at(name));
    sub->add_option("--config", sub_args[name].config, "run configuration JSON file")
        ->required();
    sub->add_option("--set", sub_args[name].sets,
                    "override a config key, dotted path (e.g. --set train.steps=100)");
  }

  std::vector<std::string> argv_strings = args;
  argv_strings.insert(argv_strings.begin(), "vpgc");
  std::vector<const char*> argv;
  for (const auto& s : argv_strings) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    for (const auto& [name, fn] : commands) {
      if (app.got_subcommand(name)) {
        const RunConfig cfg = load_run_config(sub_args[name].config, sub_args[name].sets);
        return fn(cfg, out);
      }
    }
    err << "error: no subcommand\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace cli
