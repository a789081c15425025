#include <map>

#include "internal.hpp"

namespace anholo::app {

namespace {

// Scalar leaves of a summary as dotted keys; arrays are skipped.
void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else if (!j.is_array()) {
    out[prefix] = j;
  }
}

struct Report final : PreparedCommand {
  std::vector<fs::path> runs;

  void run(CommandContext& ctx) override {
    json entries = json::array();
    std::vector<std::map<std::string, json>> flat;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const fs::path& dir = runs[i];
      const ManifestCheck mc = verify_run(dir);
      const bool ok = mc.readable && mc.failures.empty();
      json e = {{"index", i},
                {"dir", dir.string()},
                {"integrity", ok ? "ok" : "failed"},
                {"failures", mc.failures}};
      for (const auto& f : mc.failures) ctx.integrity.push_back(dir.string() + ": " + f);
      std::map<std::string, json> scalars;
      if (mc.readable) {
        e["command"] = mc.command;
        e["status"] = mc.status;
        e["seed"] = mc.seed;
        e["config_sha256"] = mc.config_sha256;
      }
      if (ok) {
        for (const char* name : {"summary.json", "residuals.json"}) {
          if (std::find(mc.files.begin(), mc.files.end(), name) == mc.files.end()) continue;
          const json s = json::parse(read_file(dir / name));
          e["summary"] = s;
          flatten(s, "", scalars);
        }
        for (const char* name : {"series.csv", "ensemble.csv", "refinement.csv"}) {
          if (std::find(mc.files.begin(), mc.files.end(), name) == mc.files.end()) continue;
          const std::string stem = fs::path(name).stem().string();
          const std::string out = "run" + std::to_string(i) + "_" + stem + ".dat";
          ctx.dir->write(out, read_csv(dir / name).gnuplot());
          e["data"].push_back(out);
        }
      }
      entries.push_back(e);
      flat.push_back(std::move(scalars));
      seeds.push_back(mc.seed);
    }

    // Merged table over the union of numeric summary keys.
    std::set<std::string> keys;
    for (const auto& m : flat)
      for (const auto& [k, v] : m)
        if (v.is_number() || v.is_boolean()) keys.insert(k);
    Table t;
    Field idx, seed;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      idx.push_back(double(i));
      seed.push_back(double(seeds[i]));
    }
    t.add("run", idx);
    t.add("seed", seed);
    json rows = json::array();
    for (const auto& k : keys) {
      Field col;
      for (const auto& m : flat) {
        const auto it = m.find(k);
        if (it == m.end() || !(it->second.is_number() || it->second.is_boolean()))
          col.push_back(std::numeric_limits<double>::quiet_NaN());
        else
          col.push_back(it->second.is_boolean() ? double(it->second.get<bool>()) : it->second.get<double>());
      }
      t.add(k, std::move(col));
    }
    for (std::size_t i = 0; i < runs.size(); ++i) {
      json row = json::object();
      for (const auto& [k, v] : flat[i]) row[k] = v;
      rows.push_back({{"run", i}, {"seed", seeds[i]}, {"values", row}});
    }
    ctx.dir->write("metrics.dat", t.gnuplot());
    ctx.dir->write_json("report.json", {{"tool", kToolName},
                                        {"version", kToolVersion},
                                        {"runs", entries},
                                        {"table", rows},
                                        {"integrity_failures", ctx.integrity.size()}});
  }
};

}  // namespace

std::unique_ptr<PreparedCommand> prepare_report(Obj& root, const std::vector<fs::path>& cli_runs) {
  auto c = std::make_unique<Report>();
  std::vector<fs::path> runs = cli_runs;
  if (auto o = root.opt_obj("report")) {
    const json& r = o->raw("runs");
    if (!r.is_array()) o->fail("runs", "expected an array of run directories");
    for (const auto& x : r) {
      if (!x.is_string()) o->fail("runs", "expected strings");
      runs.emplace_back(x.get<std::string>());
    }
    o->finish();
  }
  if (runs.empty()) throw ConfigError("report: no run directories given");
  for (auto& r : runs) {
    r = resolve_under_root(r);
    if (!fs::is_directory(r)) throw ConfigError("report: no run directory " + r.string());
  }
  c->runs = std::move(runs);
  return c;
}

}  // namespace anholo::app
