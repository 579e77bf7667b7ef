// counter: command-line driver for the explanation pipeline.
//
//   counter synth     --out run
//   counter ingest    --out run --data run/synth/interactions.tsv --catalog run/synth/catalog.txt
//   counter train     --out run
//   counter recommend --out run
//   counter explain   --out run
//   counter evaluate  --out run
//   counter sweep     --out run
//
// Every config key is also a --key flag; flags win over --config file values.

#include <CLI11.hpp>

#include <exception>
#include <iostream>
#include <map>
#include <string>

#include "counter/config.hpp"
#include "counter/error.hpp"
#include "counter/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kInput = 2, kConfig = 3, kInternal = 4 };

int run(int argc, char** argv) {
  CLI::App app{"Counterfactual aspect explanations for a top-K recommender"};
  app.fallthrough();
  app.require_subcommand(1, 1);

  std::string config_path;
  app.add_option("--config", config_path, "key=value configuration file");

  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> flag_options;
  for (const auto& key : counter::config_keys()) {
    auto* opt = app.add_option("--" + key.name, flag_values[key.name], key.help)
                    ->default_str(key.default_value);
    flag_options[key.name] = opt;
  }

  const std::map<std::string, std::string> commands = {
      {"synth", "generate a synthetic corpus with planted explanations"},
      {"ingest", "load an interaction file into the output directory"},
      {"train", "train the recommender"},
      {"recommend", "write top-K lists"},
      {"explain", "generate counterfactual explanations"},
      {"evaluate", "score explanations"},
      {"sweep", "explain and evaluate across a lambda grid"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  std::map<std::string, std::string> given;
  for (const auto& [name, opt] : flag_options) {
    if (opt->count() > 0) given[name] = flag_values[name];
  }
  std::map<std::string, std::string> file;
  if (!config_path.empty()) file = counter::read_config_file(config_path);
  counter::RunConfig config;
  for (const auto& notice : counter::merge_config(config, file, given)) {
    std::cerr << "counter: notice: " << notice << '\n';
  }

  counter::Pipeline pipeline(std::move(config), std::cerr);
  const std::string command = app.get_subcommands().front()->get_name();
  if (command == "synth") pipeline.synth();
  if (command == "ingest") pipeline.ingest();
  if (command == "train") pipeline.train();
  if (command == "recommend") pipeline.recommend();
  if (command == "explain") pipeline.explain();
  if (command == "evaluate") return pipeline.evaluate();
  if (command == "sweep") pipeline.sweep();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const counter::InputError& e) {
    std::cerr << "counter: input error: " << e.what() << '\n';
    return kInput;
  } catch (const counter::ConfigError& e) {
    std::cerr << "counter: config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "counter: internal error: " << e.what() << '\n';
    return kInternal;
  }
}
