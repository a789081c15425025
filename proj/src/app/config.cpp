#include <cmath>
#include <limits>

#include "anholo/sasaki.hpp"
#include "internal.hpp"

namespace anholo::app {

Obj::Obj(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
  if (!j.is_object()) throw ConfigError(path_ + ": expected an object");
}

void Obj::fail(const std::string& key, const std::string& what) const {
  throw ConfigError(path_ + "." + key + ": " + what);
}

const json& Obj::raw(const std::string& key) {
  if (!has(key)) fail(key, "required key is missing");
  used_.insert(key);
  return j_->at(key);
}

double Obj::num(const std::string& key) {
  const json& v = raw(key);
  if (!v.is_number()) fail(key, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(key, "must be finite");
  return d;
}

double Obj::num(const std::string& key, double def) { return has(key) ? num(key) : def; }

long Obj::integer(const std::string& key, long def, long lo, long hi) {
  if (!has(key)) return def;
  const json& v = raw(key);
  if (!v.is_number_integer()) fail(key, "expected an integer");
  const long x = v.get<long>();
  if (x < lo || x > hi) fail(key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return x;
}

std::uint64_t Obj::u64(const std::string& key, std::uint64_t def) {
  if (!has(key)) return def;
  const json& v = raw(key);
  if (!v.is_number_unsigned()) fail(key, "expected a nonnegative integer");
  return v.get<std::uint64_t>();
}

bool Obj::flag(const std::string& key, bool def) {
  if (!has(key)) return def;
  const json& v = raw(key);
  if (!v.is_boolean()) fail(key, "expected true or false");
  return v.get<bool>();
}

std::string Obj::str(const std::string& key, const std::string& def) {
  if (!has(key)) return def;
  const json& v = raw(key);
  if (!v.is_string()) fail(key, "expected a string");
  return v.get<std::string>();
}

std::string Obj::choice(const std::string& key, const std::vector<std::string>& allowed, const std::string& def) {
  const std::string s = str(key, def);
  for (const auto& a : allowed)
    if (a == s) return s;
  std::string list;
  for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
  fail(key, "'" + s + "' is not one of {" + list + "}");
}

Expression expr_from_json(const json& v, const std::string& where) {
  if (v.is_number()) return Expression::constant(v.get<double>());
  if (!v.is_string()) throw ConfigError(where + ": expected an expression string or a number");
  try {
    return Expression::parse(v.get<std::string>());
  } catch (const InvalidArgument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

Expression Obj::expr(const std::string& key) { return expr_from_json(raw(key), path_ + "." + key); }

Expression Obj::expr(const std::string& key, double def) {
  return has(key) ? expr(key) : Expression::constant(def);
}

std::vector<double> Obj::numbers(const std::string& key, const std::vector<double>& def) {
  if (!has(key)) return def;
  const json& v = raw(key);
  if (!v.is_array()) fail(key, "expected an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number() || !std::isfinite(x.get<double>())) fail(key, "expected finite numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

std::vector<std::string> Obj::strings(const std::string& key, const std::set<std::string>& allowed) {
  if (!has(key)) return {};
  const json& v = raw(key);
  if (!v.is_array()) fail(key, "expected an array of strings");
  std::vector<std::string> out;
  for (const auto& x : v) {
    if (!x.is_string() || !allowed.count(x.get<std::string>()))
      fail(key, "unknown entry " + x.dump());
    out.push_back(x.get<std::string>());
  }
  return out;
}

Obj Obj::obj(const std::string& key) { return Obj(raw(key), path_ + "." + key); }

std::optional<Obj> Obj::opt_obj(const std::string& key) {
  if (!has(key)) return std::nullopt;
  return obj(key);
}

void Obj::finish() const {
  for (auto it = j_->begin(); it != j_->end(); ++it)
    if (!used_.count(it.key())) throw ConfigError(path_ + "." + it.key() + ": unknown key");
}

// ---- grid --------------------------------------------------------------------

GridChart parse_grid(Obj o) {
  const json& axes = o.raw("axes");
  if (!axes.is_array() || axes.size() != 4) o.fail("axes", "expected an array of 4 axes (x1, x2, y3, y4)");
  const char* names[4] = {"x1", "x2", "y3", "y4"};
  std::array<Axis, 4> ax;
  for (std::size_t a = 0; a < 4; ++a) {
    Obj q(axes[a], o.path() + ".axes[" + std::to_string(a) + "]");
    ax[a].name = q.str("name", names[a]);
    ax[a].min = q.num("min");
    ax[a].max = q.num("max");
    ax[a].count = static_cast<std::size_t>(q.integer("count", 3, 1, 100000));
    ax[a].boundary = q.choice("boundary", {"dirichlet", "periodic"}, "dirichlet") == "periodic"
                         ? BoundaryKind::periodic
                         : BoundaryKind::dirichlet;
    if (!(ax[a].max > ax[a].min)) q.fail("max", "must exceed min");
    q.finish();
  }
  const int order = static_cast<int>(o.integer("fd_order", 2, 2, 4));
  if (order != 2 && order != 4) o.fail("fd_order", "must be 2 or 4");
  o.finish();
  try {
    return GridChart(ax, order);
  } catch (const InvalidArgument& e) {
    throw ConfigError(o.path() + ": " + e.what());
  }
}

json grid_to_json(const GridChart& c) {
  json axes = json::array();
  for (int a = 0; a < 4; ++a) {
    const Axis& x = c.axis(a);
    axes.push_back({{"name", x.name},
                    {"min", x.min},
                    {"max", x.max},
                    {"count", x.count},
                    {"boundary", x.boundary == BoundaryKind::periodic ? "periodic" : "dirichlet"}});
  }
  return {{"axes", axes}, {"fd_order", c.fd_order()}};
}

Field sample_expr(const GridChart& c, const Expression& e) {
  return c.sample([&](const std::array<double, 4>& u) { return e.eval(u); });
}

// ---- metric ------------------------------------------------------------------

MetricSource parse_metric(Obj o) {
  MetricSource s;
  const int kinds = int(o.has("from_run")) + int(o.has("sasaki")) + int(o.has("g") || o.has("h") || o.has("n"));
  if (kinds > 1) throw ConfigError(o.path() + ": give exactly one of g/h/n, sasaki or from_run");
  if (o.has("from_run")) {
    s.kind = MetricSource::Kind::from_run;
    s.run = o.str("from_run", "");
    s.file = o.str("file", "metric_0.csv");
    if (s.file.find('/') != std::string::npos) o.fail("file", "must be a file name inside the run directory");
  } else if (o.has("sasaki")) {
    s.kind = MetricSource::Kind::sasaki;
    Obj q = o.obj("sasaki");
    s.lagrangian = q.expr("lagrangian");
    q.finish();
  } else {
    s.g = o.exprs<3>("g", {1.0, 0.0, 1.0});
    s.h = o.exprs<3>("h", {1.0, 0.0, 1.0});
    s.n = o.exprs<4>("n", {0.0, 0.0, 0.0, 0.0});
    s.signature = o.choice("signature", {"riemannian", "lorentz"}, "riemannian") == "lorentz" ? Signature::lorentz
                                                                                              : Signature::riemannian;
  }
  o.finish();
  return s;
}

fs::path resolve_under_root(const fs::path& p) { return p.is_absolute() ? p : output_root() / p; }

DMetric build_metric(const MetricSource& src, const std::optional<GridChart>& chart) {
  switch (src.kind) {
    case MetricSource::Kind::expressions:
      return sample_metric(
          *chart,
          [&](const std::array<double, 4>& u) {
            MetricSample m;
            for (std::size_t k = 0; k < 3; ++k) {
              m.g[k] = src.g[k].eval(u);
              m.h[k] = src.h[k].eval(u);
            }
            for (std::size_t k = 0; k < 4; ++k) m.n[k] = src.n[k].eval(u);
            return m;
          },
          src.signature);
    case MetricSource::Kind::sasaki:
      return sasaki_lift([&](const std::array<double, 4>& u) { return src.lagrangian.eval(u); }, *chart);
    case MetricSource::Kind::from_run: {
      const fs::path dir = resolve_under_root(src.run);
      if (!fs::is_directory(dir)) throw ConfigError("metric.from_run: no run directory " + dir.string());
      const ManifestCheck mc = verify_run(dir);
      if (!mc.readable) throw ConfigError("metric.from_run: " + dir.string() + " has no readable manifest");
      if (!mc.failures.empty()) throw IntegrityError("metric.from_run: " + dir.string() + ": " + mc.failures.front());
      if (!mc.complete) throw ConfigError("metric.from_run: " + dir.string() + " is a failed run");
      if (!fs::exists(dir / src.file) || !fs::exists(dir / "metric.json"))
        throw ConfigError("metric.from_run: " + dir.string() + " has no " + src.file + " with metric.json");
      json info;
      try {
        info = json::parse(read_file(dir / "metric.json"));
      } catch (const json::exception& e) {
        throw IntegrityError("metric.from_run: metric.json: " + std::string(e.what()));
      }
      const GridChart c = parse_grid(Obj(info.at("grid"), "metric.json.grid"));
      const Signature sig = info.value("signature", "riemannian") == "lorentz" ? Signature::lorentz : Signature::riemannian;
      return metric_from_table(read_csv(dir / src.file), c, sig);
    }
  }
  throw ConfigError("metric: unknown kind");
}

// ---- ansatz generating data -------------------------------------------------

AnsatzConfig parse_ansatz(Obj o) {
  AnsatzConfig a;
  a.chi = o.numbers("chi", {0.0});
  if (a.chi.empty()) o.fail("chi", "needs at least one sample");
  for (std::size_t k = 1; k < a.chi.size(); ++k)
    if (!(a.chi[k] > a.chi[k - 1])) o.fail("chi", "samples must increase");
  const json& phi = o.raw("phi");
  if (phi.is_array()) {
    if (phi.size() != a.chi.size()) o.fail("phi", "needs one expression per chi sample");
    for (std::size_t k = 0; k < phi.size(); ++k)
      a.phi.push_back(expr_from_json(phi[k], o.path() + ".phi[" + std::to_string(k) + "]"));
  } else {
    a.phi.push_back(expr_from_json(phi, o.path() + ".phi"));
  }
  a.lambda = o.num("lambda");
  if (a.lambda == 0.0) o.fail("lambda", "lambda != 0 is required by the generating data");
  a.h4_0 = o.expr("h4_0", 0.0);
  a.psi_boundary = o.expr("psi_boundary", 0.0);
  a.n1 = o.exprs<2>("n1", {0.0, 0.0});
  a.n2 = o.exprs<2>("n2", {0.0, 0.0});
  a.eps3 = static_cast<int>(o.integer("eps3", 1, -1, 1));
  a.eps4 = static_cast<int>(o.integer("eps4", 1, -1, 1));
  if (a.eps3 == 0 || a.eps4 == 0) o.fail(a.eps3 == 0 ? "eps3" : "eps4", "must be +1 or -1");
  a.eps_phi = o.num("eps_phi", 1e-8);
  a.tol_lap = o.num("tol_lap", 1e-10);
  if (a.eps_phi <= 0 || a.tol_lap <= 0) o.fail(a.eps_phi <= 0 ? "eps_phi" : "tol_lap", "must be positive");
  if (auto q = o.opt_obj("phi_noise")) {
    a.noise.amplitude = q->num("amplitude", 0.0);
    a.noise.correlation_time = q->num("correlation_time", 1.0);
    a.noise.modes = static_cast<int>(q->integer("modes", 4, 1, 8));
    a.noise_path = q->u64("path", 0);
    if (a.noise.amplitude < 0) q->fail("amplitude", "must be nonnegative");
    if (a.noise.correlation_time <= 0) q->fail("correlation_time", "must be positive");
    q->finish();
    if (a.noise.amplitude > 0 && a.phi.size() != 1) o.fail("phi", "phi_noise needs a single base expression");
  }
  o.finish();
  return a;
}

ansatz::GeneratingData build_generating_data(const AnsatzConfig& a, const GridChart& c, std::uint64_t seed) {
  std::vector<Field> phi;
  if (a.noise.amplitude > 0) {
    phi = ansatz::sample_random_phi(c, sample_expr(c, a.phi[0]), a.noise, seed, a.noise_path, a.chi, a.eps_phi);
  } else {
    for (std::size_t k = 0; k < a.chi.size(); ++k) phi.push_back(sample_expr(c, a.phi[a.phi.size() == 1 ? 0 : k]));
  }
  ansatz::GeneratingData gd;
  gd.chart = c;
  gd.phi = std::move(phi);
  gd.chi = a.chi;
  gd.lambda = a.lambda;
  gd.h4_0 = sample_expr(c, a.h4_0);
  gd.psi_boundary = sample_expr(c, a.psi_boundary);
  for (std::size_t i = 0; i < 2; ++i) {
    gd.n1[i] = sample_expr(c, a.n1[i]);
    gd.n2[i] = sample_expr(c, a.n2[i]);
  }
  gd.eps_phi = a.eps_phi;
  gd.eps3 = a.eps3;
  gd.eps4 = a.eps4;
  gd.validate();
  return gd;
}

}  // namespace anholo::app
