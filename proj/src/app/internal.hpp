#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "anholo/ansatz.hpp"
#include "anholo/app.hpp"
#include "anholo/dmetric.hpp"
#include "anholo/expression.hpp"
#include "anholo/grid.hpp"

namespace anholo::app {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---- config reading ------------------------------------------------------

// Object view that records which keys were read; finish() rejects the rest.
class Obj {
 public:
  Obj(const json& j, std::string path);

  const std::string& path() const { return path_; }
  bool has(const std::string& key) const { return j_->contains(key); }
  const json& raw(const std::string& key);

  double num(const std::string& key);
  double num(const std::string& key, double def);
  long integer(const std::string& key, long def, long lo, long hi);
  std::uint64_t u64(const std::string& key, std::uint64_t def);
  bool flag(const std::string& key, bool def);
  std::string str(const std::string& key, const std::string& def);
  std::string choice(const std::string& key, const std::vector<std::string>& allowed, const std::string& def);
  Expression expr(const std::string& key);
  Expression expr(const std::string& key, double def);
  template <std::size_t N>
  std::array<Expression, N> exprs(const std::string& key, const std::array<double, N>& def);
  std::vector<double> numbers(const std::string& key, const std::vector<double>& def);
  std::vector<std::string> strings(const std::string& key, const std::set<std::string>& allowed);
  Obj obj(const std::string& key);
  std::optional<Obj> opt_obj(const std::string& key);

  void finish() const;
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> used_;
};

Expression expr_from_json(const json& v, const std::string& where);

template <std::size_t N>
std::array<Expression, N> Obj::exprs(const std::string& key, const std::array<double, N>& def) {
  std::array<Expression, N> out;
  if (!has(key)) {
    for (std::size_t i = 0; i < N; ++i) out[i] = Expression::constant(def[i]);
    return out;
  }
  const json& v = raw(key);
  if (!v.is_array() || v.size() != N) fail(key, "expected an array of " + std::to_string(N) + " expressions");
  for (std::size_t i = 0; i < N; ++i) out[i] = expr_from_json(v[i], path_ + "." + key + "[" + std::to_string(i) + "]");
  return out;
}

GridChart parse_grid(Obj o);
json grid_to_json(const GridChart& c);

// Metric given by expressions, a Sasaki lift, or a metric file of an earlier run.
struct MetricSource {
  enum class Kind { expressions, sasaki, from_run } kind = Kind::expressions;
  std::array<Expression, 3> g, h;
  std::array<Expression, 4> n;
  Signature signature = Signature::riemannian;
  Expression lagrangian;
  fs::path run;
  std::string file;
};
MetricSource parse_metric(Obj o);
// chart is required for expressions and Sasaki lifts and ignored for from_run.
DMetric build_metric(const MetricSource& src, const std::optional<GridChart>& chart);

struct AnsatzConfig {
  std::vector<Expression> phi;  // one per chi sample, or one shared
  std::vector<double> chi;
  double lambda = 0.0;
  Expression h4_0, psi_boundary;
  std::array<Expression, 2> n1, n2;
  int eps3 = 1, eps4 = 1;
  double eps_phi = 1e-8, tol_lap = 1e-10;
  ansatz::PhiNoise noise;
  std::uint64_t noise_path = 0;
};
AnsatzConfig parse_ansatz(Obj o);
ansatz::GeneratingData build_generating_data(const AnsatzConfig& a, const GridChart& c, std::uint64_t seed);

Field sample_expr(const GridChart& c, const Expression& e);

// ---- artifacts -----------------------------------------------------------

struct Table {
  std::vector<std::string> header;
  std::vector<Field> columns;

  void add(std::string name, Field values);
  std::string csv() const;
  std::string gnuplot() const;
};
Table read_csv(const fs::path& file);

// Node coordinates of a chart as four columns named after its axes.
Table node_table(const GridChart& c);
Table metric_table(const DMetric& m);
DMetric metric_from_table(const Table& t, const GridChart& c, Signature sig);

std::string format_number(double v);

// Writes files atomically (temp file + rename) and records them for the manifest.
class RunDir {
 public:
  explicit RunDir(fs::path dir) : dir_(std::move(dir)) {}
  const fs::path& path() const { return dir_; }
  void write(const std::string& name, const std::string& content);
  void write_json(const std::string& name, const json& j);
  void write_csv(const std::string& name, const Table& t);
  const std::vector<std::string>& files() const { return files_; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

void write_atomic(const fs::path& file, const std::string& content);
std::string read_file(const fs::path& file);
std::string utc_now();

// Finite doubles as numbers, NaN and infinities as null.
json number_or_null(double v);

// ---- commands --------------------------------------------------------------

struct CommandContext {
  std::uint64_t seed = 0;
  RunDir* dir = nullptr;
  std::vector<std::string> breaches;   // fatal invariant violations flagged in the config
  std::vector<std::string> integrity;  // checksum failures found by report
};

// Each command is parsed (and fully validated) first, then run.
struct PreparedCommand {
  virtual ~PreparedCommand() = default;
  virtual void run(CommandContext& ctx) = 0;
};
std::unique_ptr<PreparedCommand> prepare_gen_metric(Obj& root);
std::unique_ptr<PreparedCommand> prepare_flow(Obj& root);
std::unique_ptr<PreparedCommand> prepare_spde(Obj& root);
std::unique_ptr<PreparedCommand> prepare_functionals(Obj& root);
std::unique_ptr<PreparedCommand> prepare_report(Obj& root, const std::vector<fs::path>& cli_runs);

fs::path resolve_under_root(const fs::path& p);

}  // namespace anholo::app
