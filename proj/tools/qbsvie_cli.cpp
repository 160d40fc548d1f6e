// qbsvie: batch runner for solver experiments.
//
//   qbsvie --config run.json --out results --format both --override driver.steps=200

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qbsvie/app.hpp"

namespace {

using qbsvie::app::json;

int fail(int code, const std::string& type, const std::string& message, const json& extra = json::object()) {
  json err = {{"error", {{"type", type}, {"message", message}}}};
  for (auto it = extra.begin(); it != extra.end(); ++it) err["error"][it.key()] = it.value();
  std::cerr << err.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Quadratic BSVIE solver experiments"};
  std::string config_path, out_dir, format;
  std::vector<std::string> overrides;
  bool print_schema = false;
  cli.add_option("--config", config_path, "run configuration (JSON)");
  cli.add_option("--out", out_dir, "output directory (overrides output.dir)");
  cli.add_option("--format", format, "json | csv | both (overrides output.format)")
      ->check(CLI::IsMember({"json", "csv", "both"}));
  cli.add_option("--override", overrides, "dot-path override key=value, repeatable");
  cli.add_flag("--print-schema", print_schema, "print the configuration schema and exit");
  CLI11_PARSE(cli, argc, argv);

  if (print_schema) {
    std::cout << qbsvie::app::config_schema().dump(2) << "\n";
    return 0;
  }
  if (config_path.empty()) return fail(2, "usage", "--config is required");

  json config;
  try {
    std::ifstream in(config_path);
    if (!in) return fail(4, "io", "cannot read config", {{"path", config_path}});
    config = json::parse(in);
  } catch (const json::parse_error& e) {
    return fail(2, "config", std::string("config is not valid JSON: ") + e.what(), {{"path", config_path}});
  }

  try {
    for (const auto& o : overrides) qbsvie::app::apply_override(config, o);
    const json output = config.value("output", json::object());
    if (out_dir.empty()) out_dir = output.value("dir", std::string("results"));
    if (format.empty()) format = output.value("format", std::string("json"));

    const qbsvie::app::ResultBundle bundle = qbsvie::app::run(config);
    const auto files = qbsvie::app::emit(bundle, out_dir, format);
    json done = {{"experiment", bundle.experiment},
                 {"config_hash", bundle.provenance.config_hash},
                 {"summary", bundle.summary}};
    for (const auto& f : files) done["files"].push_back(f.string());
    std::cout << done.dump(2) << "\n";
    return 0;
  } catch (const qbsvie::ValidationError& e) {
    return fail(2, "validation", e.what());
  } catch (const qbsvie::SizeError& e) {
    return fail(2, "size", e.what());
  } catch (const qbsvie::SolverFailure& e) {
    return fail(3, "solver", e.what(), {{"where", e.where()}, {"history", e.history()}});
  } catch (const qbsvie::app::IoError& e) {
    return fail(4, "io", e.what(), {{"path", e.path()}});
  } catch (const std::exception& e) {
    return fail(1, "internal", e.what());
  }
}
