#include <CLI11.hpp>
#include <cstdio>

#include "anholo/app.hpp"

int main(int argc, char** argv) {
  CLI::App cli{"Anholonomic Ricci flow, functionals and stochastic SOC solver", "anholoflow"};
  cli.require_subcommand(1, 1);
  cli.set_version_flag("--version", anholo::app::kToolVersion);

  anholo::app::Request req;
  std::string config, out;
  std::uint64_t seed = 0;
  std::vector<std::string> runs;

  for (const char* name : {"gen-metric", "flow", "spde", "functionals", "report"}) {
    CLI::App* sub = cli.add_subcommand(name);
    sub->add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--out", out, "run directory (relative paths are under $ANHOLOFLOW_OUT_ROOT)");
    if (std::string(name) == "report") sub->add_option("runs", runs, "run directories to merge");
    sub->callback([&req, name] { req.command = name; });
  }

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.exit(e);
    return anholo::app::kExitConfig;
  }

  CLI::App* sub = cli.get_subcommands().front();
  if (!config.empty()) req.config = config;
  if (sub->count("--seed")) req.seed = seed;
  if (!out.empty()) req.out = out;
  for (const auto& r : runs) req.runs.emplace_back(r);

  const anholo::app::Outcome o = anholo::app::execute(req);
  if (o.exit_code == anholo::app::kExitOk) {
    std::printf("%s\n", o.dir.string().c_str());
  } else {
    std::fprintf(stderr, "anholoflow %s: %s\n", req.command.c_str(), o.message.c_str());
    if (!o.dir.empty()) std::fprintf(stderr, "run directory: %s\n", o.dir.string().c_str());
  }
  return o.exit_code;
}
