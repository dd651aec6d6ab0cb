// Command-line front end: one subcommand per pipeline stage.

#include <CLI11.hpp>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "healnet/error.hpp"
#include "healnet/pipeline.hpp"
#include "healnet/runtime.hpp"

namespace {

int exit_code(const std::string& kind) {
  static const std::map<std::string, int> codes = {{"ConfigError", 2}, {"MissingArtifact", 3}, {"DataError", 4},
                                                   {"IoError", 5},     {"ValueError", 6},      {"ShapeError", 7},
                                                   {"NumericError", 8}};
  auto it = codes.find(kind);
  return it == codes.end() ? 1 : it->second;
}

void report_error(const std::string& kind, std::string message) {
  for (auto& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "error: " << kind << ": " << message << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  healnet::tune_allocator();
  CLI::App app{"HealNet: self-supervised heal-stage discovery on wound image series"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path, out, data_root;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  bool quiet = false;
  app.add_option("--config", config_path, "Flat `key = value` configuration file");
  auto* out_opt = app.add_option("--out", out, "Output directory");
  auto* data_opt = app.add_option("--data", data_root, "Dataset root (defaults to the output directory)");
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every stochastic step");
  app.add_option("--set", overrides, "Override one setting, key=value (repeatable)");
  app.add_flag("--quiet", quiet, "No progress output");
  app.add_flag_callback("--list-keys", [] {
    for (const auto& k : healnet::pipeline::config_keys()) std::cout << k << '\n';
    std::exit(0);
  }, "Print every configuration key and exit");

  for (const auto& name : healnet::pipeline::subcommands()) app.add_subcommand(name, "Run the `" + name + "` stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report_error("UsageError", e.what());
    return 64;
  }

  try {
    healnet::pipeline::RunConfig config;
    if (!config_path.empty()) healnet::pipeline::apply_config_file(config, config_path);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw healnet::ConfigError("--set expects key=value, got '" + o + "'");
      config.set(o.substr(0, eq), o.substr(eq + 1));
    }
    if (*out_opt) config.out = out;
    if (*data_opt) config.data_root = data_root;
    if (*seed_opt) config.seed = seed;

    const std::string name = app.get_subcommands().front()->get_name();
    const auto summary = healnet::pipeline::run(name, config, quiet ? nullptr : &std::cerr);
    std::cout << healnet::pipeline::summary_path(config, name).string() << '\n';
    for (const auto& [k, v] : summary.metrics) std::cout << "  " << k << " = " << v << '\n';
    return 0;
  } catch (const healnet::Error& e) {
    report_error(e.kind(), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    report_error("InternalError", e.what());
    return 1;
  }
}
