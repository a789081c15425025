#include <chrono>

#include "internal.hpp"

namespace anholo::app {

namespace {

const std::vector<std::string> kCommands = {"gen-metric", "flow", "spde", "functionals", "report"};

// Exit code and text for the exception in flight.
std::pair<int, std::string> classify(std::exception_ptr ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const IntegrityError& e) {
    return {kExitIntegrity, std::string("integrity error: ") + e.what()};
  } catch (const InvalidArgument& e) {
    return {kExitConfig, std::string("invalid input: ") + e.what()};
  } catch (const json::exception& e) {
    return {kExitConfig, std::string("config: ") + e.what()};
  } catch (const fs::filesystem_error& e) {
    return {kExitConfig, std::string("filesystem: ") + e.what()};
  } catch (const NumericalError& e) {
    return {kExitNumeric, std::string("numerical failure: ") + e.what()};
  } catch (const std::exception& e) {
    return {kExitNumeric, std::string("failure: ") + e.what()};
  }
}

// Creates dir, replacing an earlier run directory; refuses to touch anything else.
void prepare_directory(const fs::path& dir) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("output path " + dir.string() + " is not a directory");
    const bool empty = fs::is_empty(dir);
    if (!empty && !fs::exists(dir / "manifest.json") && !fs::exists(dir / "FAILED"))
      throw ConfigError("output directory " + dir.string() + " exists and is not a run directory");
    if (!empty) fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

json manifest(const std::string& command, std::uint64_t seed, const std::string& config_hash, const std::string& started,
              const RunDir& dir, const std::string& status, const std::string& error,
              const std::vector<std::string>& breaches) {
  json files = json::array();
  for (const auto& name : dir.files()) {
    const std::string bytes = read_file(dir.path() / name);
    files.push_back({{"name", name}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
  }
  return {{"tool", kToolName},
          {"version", kToolVersion},
          {"command", command},
          {"seed", seed},
          {"config_sha256", config_hash},
          {"started_utc", started},
          {"finished_utc", utc_now()},
          {"status", status},
          {"error", error.empty() ? json(nullptr) : json(error)},
          {"breaches", breaches},
          {"files", files}};
}

}  // namespace

Outcome execute(const Request& req) {
  Outcome out;
  std::unique_ptr<RunDir> dir;
  std::string command = req.command, config_hash, started;
  std::uint64_t seed = 0;
  try {
    if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end())
      throw ConfigError("unknown command '" + command + "'");
    json cfg;
    if (req.config) {
      try {
        cfg = json::parse(read_file(*req.config));
      } catch (const json::parse_error& e) {
        throw ConfigError(req.config->string() + ": " + e.what());
      }
    } else if (command == "report") {
      cfg = json::object();
    } else {
      throw ConfigError("--config is required for " + command);
    }

    // Full schema validation before anything is computed or written.
    Obj root(cfg, "config");
    const std::string cfg_command = root.str("command", command);
    if (cfg_command != command)
      throw ConfigError("config.command: '" + cfg_command + "' does not match the requested command '" + command + "'");
    seed = req.seed ? *req.seed : root.u64("seed", 0);
    if (req.seed && root.has("seed")) (void)root.u64("seed", 0);
    const std::string output_dir = root.str("output_dir", "");
    std::unique_ptr<PreparedCommand> prepared;
    if (command == "gen-metric") prepared = prepare_gen_metric(root);
    else if (command == "flow") prepared = prepare_flow(root);
    else if (command == "spde") prepared = prepare_spde(root);
    else if (command == "functionals") prepared = prepare_functionals(root);
    else prepared = prepare_report(root, req.runs);
    root.finish();

    config_hash = sha256_hex(cfg.dump());
    fs::path target = req.out ? *req.out
                              : !output_dir.empty() ? fs::path(output_dir)
                                                    : fs::path("runs") / (command + "-" + config_hash.substr(0, 12) +
                                                                          "-s" + std::to_string(seed));
    target = resolve_under_root(target);
    prepare_directory(target);
    out.dir = target;
    dir = std::make_unique<RunDir>(target);
    started = utc_now();

    json resolved = cfg;
    resolved["command"] = command;
    resolved["seed"] = seed;
    dir->write_json("config.json", resolved);

    CommandContext ctx;
    ctx.seed = seed;
    ctx.dir = dir.get();
    prepared->run(ctx);

    const bool breached = !ctx.breaches.empty();
    std::string msg;
    for (const auto& b : ctx.breaches) msg += (msg.empty() ? "" : "; ") + b;
    if (breached) write_atomic(target / "FAILED", "fatal invariant breach: " + msg + "\n");
    write_atomic(target / "manifest.json",
                 manifest(command, seed, config_hash, started, *dir, breached ? "failed" : "complete",
                          breached ? "fatal invariant breach: " + msg : "", ctx.breaches)
                         .dump(2) +
                     "\n");
    if (breached) {
      out.exit_code = kExitNumeric;
      out.message = "fatal invariant breach: " + msg;
    } else if (!ctx.integrity.empty()) {
      out.exit_code = kExitIntegrity;
      out.message = "integrity check failed: " + ctx.integrity.front() +
                    (ctx.integrity.size() > 1 ? " (+" + std::to_string(ctx.integrity.size() - 1) + " more)" : "");
    } else {
      out.message = "run complete: " + target.string();
    }
    return out;
  } catch (...) {
    const auto [code, msg] = classify(std::current_exception());
    out.exit_code = code;
    out.message = msg;
    if (dir) {
      // Leave the directory marked as failed with whatever was written so far.
      try {
        write_atomic(dir->path() / "FAILED", msg + "\n");
        write_atomic(dir->path() / "manifest.json",
                     manifest(command, seed, config_hash, started, *dir, "failed", msg, {}).dump(2) + "\n");
      } catch (...) {
      }
    }
    return out;
  }
}

}  // namespace anholo::app
