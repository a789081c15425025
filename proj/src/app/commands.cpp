#include <algorithm>
#include <cmath>
#include <limits>

#include "anholo/functionals.hpp"
#include "anholo/ricci_flow.hpp"
#include "anholo/spde.hpp"
#include "internal.hpp"

namespace anholo::app {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

double field_min(const Field& f) { return *std::min_element(f.begin(), f.end()); }
double field_max(const Field& f) { return *std::max_element(f.begin(), f.end()); }

std::optional<GridChart> grid_for(Obj& root, const MetricSource& ms) {
  if (ms.kind == MetricSource::Kind::from_run) {
    if (root.has("grid")) throw ConfigError("config.grid: not allowed with metric.from_run (the run carries its chart)");
    return std::nullopt;
  }
  return parse_grid(root.obj("grid"));
}

void write_metric(RunDir& dir, const std::string& name, const DMetric& m) {
  dir.write_csv(name, metric_table(m));
  if (std::find(dir.files().begin(), dir.files().end(), "metric.json") == dir.files().end())
    dir.write_json("metric.json", {{"grid", grid_to_json(m.chart)},
                                   {"signature", m.signature == Signature::lorentz ? "lorentz" : "riemannian"}});
}

// Node index of chart coordinates that lie on the grid.
std::size_t node_at(const GridChart& c, const std::array<double, 4>& u) {
  std::array<std::size_t, 4> i{};
  for (int a = 0; a < 4; ++a) {
    const Axis& ax = c.axis(a);
    long k = std::lround((u[static_cast<std::size_t>(a)] - ax.min) / ax.spacing());
    const long n = static_cast<long>(ax.count);
    if (ax.boundary == BoundaryKind::periodic) k = ((k % n) + n) % n;
    i[static_cast<std::size_t>(a)] = static_cast<std::size_t>(std::clamp(k, 0L, n - 1));
  }
  return c.index(i[0], i[1], i[2], i[3]);
}

// ---- gen-metric ----------------------------------------------------------------

struct GenMetric final : PreparedCommand {
  GridChart chart;
  AnsatzConfig a;
  double tolerance = 1e-4;
  std::vector<std::string> fatal;

  void run(CommandContext& ctx) override {
    const auto gd = build_generating_data(a, chart, ctx.seed);
    json samples = json::array();
    double worst = 0.0;
    for (std::size_t m = 0; m < gd.chi.size(); ++m) {
      const auto am = ansatz::generate(gd, m, a.tol_lap);
      const auto r = ansatz::residual_system(am, gd.phi[m], gd.lambda);
      Table t = node_table(chart);
      t.add("phi", gd.phi[m]);
      t.add("psi", am.psi);
      t.add("h3", am.h3);
      t.add("h4", am.h4);
      t.add("w1", am.w[0]);
      t.add("w2", am.w[1]);
      t.add("n1", am.n[0]);
      t.add("n2", am.n[1]);
      const std::string idx = std::to_string(m);
      ctx.dir->write_csv("fields_" + idx + ".csv", t);
      write_metric(*ctx.dir, "metric_" + idx + ".csv", am.to_dmetric());
      const double w = std::max({r.eq1, r.eq3, r.eq4, r.auxphi, r.ep2a, r.einstein});
      worst = std::max(worst, w);
      samples.push_back({{"chi", gd.chi[m]},
                         {"eq1", r.eq1},
                         {"eq3", r.eq3},
                         {"eq4", r.eq4},
                         {"auxphi", r.auxphi},
                         {"ep2a", r.ep2a},
                         {"einstein", r.einstein},
                         {"lc", {r.lc[0], r.lc[1], r.lc[2], r.lc[3]}},
                         {"mixed_ia", r.mixed_ia},
                         {"mixed_ai", r.mixed_ai},
                         {"five_point", ansatz::five_point_residual(chart, am.psi)},
                         {"max_checked", w}});
    }
    const bool ok = worst <= tolerance;
    const auto src = ansatz::AnsatzMetric::source(gd.lambda, gd.eps3);
    ctx.dir->write_json("residuals.json", {{"lambda", gd.lambda},
                                           {"source", {src[0], src[1], src[2], src[3]}},
                                           {"tolerance", tolerance},
                                           {"checked", {"eq1", "eq3", "eq4", "auxphi", "ep2a", "einstein"}},
                                           {"max_residual", worst},
                                           {"within_tolerance", ok},
                                           {"samples", samples}});
    if (!ok && contains(fatal, "residuals"))
      ctx.breaches.push_back("residuals: max " + format_number(worst) + " exceeds " + format_number(tolerance));
  }
};

// ---- flow ----------------------------------------------------------------------

struct FlowGeneral final : PreparedCommand {
  MetricSource metric;
  std::optional<GridChart> chart;
  double lambda = 0.0, dchi = 0.0, chi0 = 0.0, tau0 = 1.0;
  std::size_t steps = 0;
  Expression f_final;
  flow::FEvolutionOptions fopt;
  double dissipation = 0.2, tol_mixed = 1e-6, tol_mono = 1e-6;
  bool deturck = false;
  std::string boundary = "free";
  double k_g = 0.0, k_h = 0.0;
  std::vector<std::string> fatal;

  void run(CommandContext& ctx) override {
    const DMetric m0 = build_metric(metric, chart);
    flow::GeneralFlowOptions opt;
    opt.lambda = lambda;
    opt.tol_mixed = tol_mixed;
    opt.dissipation = dissipation;
    opt.deturck = deturck;
    if (boundary != "free") {
      const double rg = boundary == "einstein" ? -2.0 * (k_g - lambda) : 0.0;
      const double rh = boundary == "einstein" ? -2.0 * (k_h - lambda) : 0.0;
      const double c0 = chi0;
      opt.boundary = [m0, rg, rh, c0](double chi, const std::array<double, 4>& u) {
        const std::size_t p = node_at(m0.chart, u);
        MetricSample s;
        for (std::size_t k = 0; k < 3; ++k) {
          s.g[k] = (1.0 + rg * (chi - c0)) * m0.g[k][p];
          s.h[k] = (1.0 + rh * (chi - c0)) * m0.h[k][p];
        }
        return s;
      };
    }
    auto hist = flow::run_general_flow(m0, tau0, dchi, steps, opt, chi0);
    flow::f_evolution(hist, sample_expr(m0.chart, f_final), fopt);
    const auto rep = flow::monotonicity_report(hist, tol_mono);

    Table s;
    s.add("chi", rep.chi);
    s.add("tau", rep.tau);
    s.add("F", rep.F);
    s.add("W", rep.W);
    s.add("F_rate", rep.F_rate);
    s.add("W_rate", rep.W_rate);
    s.add("sigma", rep.sigma);
    s.add("mass", rep.mass);
    s.add("mu_mass", rep.mu_mass);
    s.add("dF_fd", rep.dF_fd);
    s.add("dW_fd", rep.dW_fd);
    s.add("mixed", hist.mixed);
    ctx.dir->write_csv("series.csv", s);
    Table f = node_table(m0.chart);
    f.add("f_initial", hist.f.front());
    f.add("f_final", hist.f.back());
    ctx.dir->write_csv("f.csv", f);
    write_metric(*ctx.dir, "metric_final.csv", hist.metrics.back());

    const double max_mixed = *std::max_element(hist.mixed.begin(), hist.mixed.end());
    ctx.dir->write_json(
        "summary.json",
        {{"mode", "general"},
         {"lambda", lambda},
         {"dchi", dchi},
         {"steps", steps},
         {"chi_final", hist.chi.back()},
         {"tau_final", hist.tau.back()},
         {"F_initial", number_or_null(rep.F.front())},
         {"F_final", number_or_null(rep.F.back())},
         {"min_forward_dF", number_or_null(rep.min_forward_dF)},
         {"monotone", rep.monotone},
         {"mid", rep.mid},
         {"mid_mismatch_F", number_or_null(rep.mid_mismatch_F)},
         // The W and sigma rate identities hold for the normalized measure, i.e. with tau_term.
         {"mid_mismatch_W", fopt.tau_term ? number_or_null(rep.mid_mismatch_W) : json(nullptr)},
         {"mid_mismatch_sigma", fopt.tau_term ? number_or_null(rep.mid_mismatch_sigma) : json(nullptr)},
         {"tau_term", fopt.tau_term},
         {"mass_drift", number_or_null(rep.mass_drift)},
         {"mu_mass_drift", number_or_null(rep.mu_mass_drift)},
         {"min_sigma", number_or_null(rep.min_sigma)},
         {"max_entropy_identity", number_or_null(rep.max_entropy_identity)},
         {"max_mixed_ricci", max_mixed},
         {"warnings", hist.warnings.size()},
         {"first_warning", hist.warnings.empty() ? "" : hist.warnings.front()}});
    if (!rep.monotone && contains(fatal, "monotone"))
      ctx.breaches.push_back("monotone: min forward dF/dchi = " + format_number(rep.min_forward_dF));
    if (!hist.warnings.empty() && contains(fatal, "mixed_ricci")) ctx.breaches.push_back("mixed_ricci: " + hist.warnings.front());
    if (rep.min_sigma < 0 && contains(fatal, "sigma"))
      ctx.breaches.push_back("sigma: min " + format_number(rep.min_sigma) + " < 0");
  }
};

struct FlowAnsatz final : PreparedCommand {
  GridChart chart;
  AnsatzConfig a;
  double dchi = 0.0, tol_mixed = 1e-6;
  std::size_t steps = 0;
  bool with_mixed = true;
  std::vector<std::string> fatal;

  void run(CommandContext& ctx) override {
    const auto gd = build_generating_data(a, chart, ctx.seed);
    const auto rec = flow::run_ansatz_flow(gd, dchi, steps, with_mixed);
    const auto family = flow::phi_family(gd);
    std::vector<Field> dphi;
    Table s;
    Field h3min, h3max, h4min, h4max;
    for (std::size_t k = 0; k < rec.metrics.size(); ++k) {
      const auto& m = rec.metrics[k];
      h3min.push_back(field_min(m.h3));
      h3max.push_back(field_max(m.h3));
      h4min.push_back(field_min(m.h4));
      h4max.push_back(field_max(m.h4));
      dphi.push_back(ansatz::phi_star(chart, family(rec.chi[k])));
    }
    s.add("chi", rec.chi);
    s.add("h3_min", h3min);
    s.add("h3_max", h3max);
    s.add("h4_min", h4min);
    s.add("h4_max", h4max);
    s.add("mixed", with_mixed ? rec.mixed : Field(rec.chi.size(), kNaN));
    ctx.dir->write_csv("series.csv", s);
    write_metric(*ctx.dir, "metric_final.csv", rec.metrics.back().to_dmetric());
    const double eq2 = rec.metrics.size() >= 3 ? ansatz::eq2_residual(rec.metrics, rec.chi, dphi) : kNaN;
    const double max_mixed = with_mixed ? *std::max_element(rec.mixed.begin(), rec.mixed.end()) : kNaN;
    ctx.dir->write_json("summary.json", {{"mode", "ansatz"},
                                         {"dchi", dchi},
                                         {"steps", steps},
                                         {"chi_final", rec.chi.back()},
                                         {"eq2_residual", number_or_null(eq2)},
                                         {"max_mixed_ricci", number_or_null(max_mixed)}});
    if (with_mixed && max_mixed > tol_mixed && contains(fatal, "mixed_ricci"))
      ctx.breaches.push_back("mixed_ricci: max " + format_number(max_mixed) + " exceeds " + format_number(tol_mixed));
  }
};

// ---- spde ----------------------------------------------------------------------

struct Spde final : PreparedCommand {
  int dim = 2;
  std::array<double, 3> lo{0, 0, 0}, hi{1, 1, 1};
  std::array<std::size_t, 3> count{1, 1, 1};
  std::string metric_kind = "flat";
  Expression conformal;
  MetricSource h_block;
  std::optional<GridChart> h_chart;
  std::size_t k3 = 0, k4 = 0;
  std::string graph_kind;
  std::array<double, 4> gp{};
  Expression initial;
  int modes = 4;
  std::vector<double> nu;
  double nu_scale = 1.0;
  std::string reference = "e1";
  double dchi = 1e-3, positivity_tol = 1e-8, burn_in = 0.1, alpha = 0.05;
  std::optional<double> c_u;
  std::size_t steps = 100, paths = 1;
  spde::StepOptions sopt;
  int levels = 0;
  std::uint64_t refine_path = 0;
  std::vector<std::string> fatal;

  spde::MonotoneGraph graph() const {
    if (graph_kind == "stefan") return spde::MonotoneGraph::stefan(gp[0], gp[1], gp[2], gp[3]);
    if (graph_kind == "sign_power") return spde::MonotoneGraph::sign_power(gp[0], gp[1]);
    if (graph_kind == "heaviside_soc") return spde::MonotoneGraph::heaviside_soc(gp[0], gp[1]);
    return spde::MonotoneGraph::linear(gp[0]);
  }

  void run(CommandContext& ctx) override {
    spde::SpdeDomain dom;
    if (metric_kind == "h_block") {
      dom = spde::SpdeDomain::from_h_block(build_metric(h_block, h_chart), k3, k4);
    } else if (metric_kind == "conformal") {
      dom = spde::SpdeDomain::conformal(dim, lo, hi, count, [&](const std::array<double, 3>& x) {
        return conformal.eval({x[0], x[1], x[2], 0.0});
      });
    } else {
      dom = spde::SpdeDomain::flat(dim, lo, hi, count);
    }
    spde::SpdeProblem pb;
    pb.disc = spde::discretize(dom);
    pb.graph = graph();
    auto basis = spde::eigensolve_laplacian(pb.disc, modes);
    std::optional<Eigen::VectorXd> l;
    if (reference == "uniform") l = Eigen::VectorXd(basis.vectors.rowwise().sum() / std::sqrt(double(modes)));
    std::optional<std::vector<double>> nus;
    if (!nu.empty()) nus = nu;
    pb.noise = spde::make_noise(pb.disc, std::move(basis), nus, l, nu_scale);
    Field u0(dom.size());
    for (std::size_t p = 0; p < u0.size(); ++p) {
      const auto x = dom.coords(p);
      u0[p] = initial.eval({x[0], x[1], x[2], 0.0});
    }
    pb.initial = pb.disc.restrict_field(u0);
    pb.dchi = dchi;
    pb.steps = steps;
    pb.c_u = c_u ? *c_u : pb.graph.critical_level();
    pb.positivity_tol = positivity_tol;
    pb.options = sopt;

    const auto ens = spde::ensemble_run(pb, ctx.seed, paths);
    const auto soc = spde::soc_statistics(ens, burn_in, alpha);
    Table e;
    e.add("chi", ens.chi);
    e.add("mean_l2", ens.mean_l2);
    e.add("mean_m", ens.mean_m);
    e.add("stderr_m", ens.stderr_m);
    e.add("min_u", ens.min_u);
    ctx.dir->write_csv("ensemble.csv", e);
    Table pt;
    Field idx, done, pos, mn, l2, mfin, iters;
    for (std::size_t k = 0; k < ens.paths.size(); ++k) {
      const auto& r = ens.paths[k];
      idx.push_back(double(k));
      done.push_back(r.converged ? 1.0 : 0.0);
      pos.push_back(r.positivity_ok ? 1.0 : 0.0);
      mn.push_back(r.min.empty() ? kNaN : field_min(r.min));
      l2.push_back(r.l2.empty() ? kNaN : r.l2.back());
      mfin.push_back(r.m.empty() ? kNaN : r.m.back());
      iters.push_back(double(r.max_inner_iterations));
    }
    pt.add("path", idx);
    pt.add("converged", done);
    pt.add("positivity_ok", pos);
    pt.add("min_u", mn);
    pt.add("final_l2", l2);
    pt.add("final_m", mfin);
    pt.add("max_inner_iterations", iters);
    ctx.dir->write_csv("paths.csv", pt);

    bool m_monotone = true;
    for (std::size_t k = 1; k < ens.mean_m.size(); ++k) m_monotone = m_monotone && ens.mean_m[k] <= ens.mean_m[k - 1];
    json summary = {{"graph", pb.graph.describe()},
                    {"graph_kind", spde::to_string(pb.graph.kind())},
                    {"c_u", pb.c_u},
                    {"eps", spde::yosida_eps(sopt, dchi)},
                    {"unknowns", pb.disc.unknowns()},
                    {"modes", pb.noise.modes()},
                    {"trace_sum", pb.noise.trace_sum},
                    {"paths", paths},
                    {"failed", ens.failed},
                    {"positivity", ens.positivity},
                    {"global_min", number_or_null(ens.global_min)},
                    {"m_initial", number_or_null(ens.mean_m.front())},
                    {"m_final", number_or_null(ens.mean_m.back())},
                    {"m_monotone", m_monotone},
                    {"absorption_flag", soc.absorption_flag},
                    {"inconclusive", soc.inconclusive},
                    {"trend_rho", number_or_null(soc.trend_rho)},
                    {"trend_p", number_or_null(soc.trend_p)},
                    {"tail_slope", number_or_null(soc.tail_slope)}};
    if (levels > 0) {
      const auto rs = spde::refinement_study(pb, ctx.seed, refine_path, levels);
      Table rt;
      rt.add("dchi", rs.dchi);
      rt.add("error", rs.error);
      ctx.dir->write_csv("refinement.csv", rt);
      summary["refinement_order"] = number_or_null(rs.order);
      summary["solver_gap"] = number_or_null(rs.solver_gap);
    }
    ctx.dir->write_json("summary.json", summary);
    if (!ens.positivity && contains(fatal, "positivity"))
      ctx.breaches.push_back("positivity: min U = " + format_number(ens.global_min));
    if (!soc.absorption_flag && contains(fatal, "absorption")) ctx.breaches.push_back("absorption: flag is false");
    if (ens.failed > 0 && contains(fatal, "convergence"))
      ctx.breaches.push_back("convergence: " + std::to_string(ens.failed) + " paths failed");
  }
};

// ---- functionals -----------------------------------------------------------------

struct Functionals final : PreparedCommand {
  MetricSource metric;
  std::optional<GridChart> chart;
  Expression f;
  double tau = 1.0, tol_S = 1e-8;
  bool normalize = false, compare = true;
  ConnectionKind kind = ConnectionKind::canonical;

  void run(CommandContext& ctx) override {
    const DMetric m = build_metric(metric, chart);
    Field fv = sample_expr(m.chart, f);
    if (normalize) fv = functionals::normalize_f(fv, tau, m);
    const auto in = functionals::ingredients(m, fv, kind);
    const auto rep = functionals::thermodynamics(in, tau);
    json summary = {{"connection", to_string(kind)},
                    {"tau", tau},
                    {"F", rep.F},
                    {"W", rep.W},
                    {"E", rep.E},
                    {"S_entropy", rep.S_entropy},
                    {"sigma", rep.sigma},
                    {"Z_log", rep.Z_log},
                    {"F_rate", functionals::F_rate_integrand(in)},
                    {"W_rate", functionals::W_rate_integrand(in, tau)},
                    {"weighted_volume", functionals::weighted_volume(m, fv)}};
    if (compare) {
      const auto cc = functionals::compare_connections(m, fv, tau, tol_S);
      summary["comparison"] = {{"S_canonical", cc.S_canonical},
                               {"S_levi_civita", cc.S_levi_civita},
                               {"delta_S", cc.S_canonical - cc.S_levi_civita},
                               {"tol_S", tol_S},
                               {"verdict", functionals::to_string(cc.verdict)}};
    }
    Table t = node_table(m.chart);
    t.add("f", fv);
    t.add("R", in.R);
    t.add("S", in.S);
    t.add("grad_h", in.grad_h);
    t.add("grad_v", in.grad_v);
    t.add("lap_h", in.lap_h);
    t.add("lap_v", in.lap_v);
    ctx.dir->write_csv("fields.csv", t);
    ctx.dir->write_json("summary.json", summary);
  }
};

}  // namespace

std::unique_ptr<PreparedCommand> prepare_gen_metric(Obj& root) {
  auto c = std::make_unique<GenMetric>();
  c->chart = parse_grid(root.obj("grid"));
  Obj o = root.obj("gen_metric");
  c->tolerance = o.num("residual_tolerance", 1e-4);
  c->fatal = o.strings("fatal", {"residuals"});
  c->a = parse_ansatz(o.obj("ansatz"));
  o.finish();
  return c;
}

std::unique_ptr<PreparedCommand> prepare_flow(Obj& root) {
  Obj o = root.obj("flow");
  const std::string mode = o.choice("mode", {"general", "ansatz"}, "general");
  const double dchi = o.num("dchi");
  const long steps = o.integer("steps", 10, 1, 10000000);
  if (!(dchi > 0)) o.fail("dchi", "must be positive");
  if (mode == "ansatz") {
    auto c = std::make_unique<FlowAnsatz>();
    c->chart = parse_grid(root.obj("grid"));
    c->a = parse_ansatz(o.obj("ansatz"));
    c->dchi = dchi;
    c->steps = static_cast<std::size_t>(steps);
    c->with_mixed = o.flag("with_mixed", true);
    c->tol_mixed = o.num("tol_mixed", 1e-6);
    c->fatal = o.strings("fatal", {"mixed_ricci"});
    o.finish();
    return c;
  }
  auto c = std::make_unique<FlowGeneral>();
  c->metric = parse_metric(o.obj("metric"));
  c->chart = grid_for(root, c->metric);
  c->dchi = dchi;
  c->steps = static_cast<std::size_t>(steps);
  c->lambda = o.num("lambda", 0.0);
  c->chi0 = o.num("chi0", 0.0);
  c->tau0 = o.num("tau0", 1.0);
  if (!(c->tau0 > dchi * double(steps))) o.fail("tau0", "must exceed dchi * steps so that tau stays positive");
  c->f_final = o.expr("f_final", 0.0);
  c->fopt.tau_term = o.flag("tau_term", false);
  c->fopt.zero_normal_flux = o.flag("zero_normal_flux", true);
  c->fopt.reaction = o.choice("reaction", {"curvature", "volume_rate"}, "curvature") == "volume_rate"
                         ? flow::ReactionKind::volume_rate
                         : flow::ReactionKind::curvature;
  c->dissipation = o.num("dissipation", 0.2);
  if (c->dissipation < 0) o.fail("dissipation", "must be nonnegative");
  c->deturck = o.flag("deturck", false);
  if (auto b = o.opt_obj("boundary")) {
    c->boundary = b->choice("kind", {"free", "fixed", "einstein"}, "free");
    c->k_g = b->num("k_g", 0.0);
    c->k_h = b->num("k_h", 0.0);
    b->finish();
  }
  c->tol_mixed = o.num("tol_mixed", 1e-6);
  c->tol_mono = o.num("tol_mono", 1e-6);
  c->fatal = o.strings("fatal", {"monotone", "mixed_ricci", "sigma"});
  o.finish();
  return c;
}

std::unique_ptr<PreparedCommand> prepare_spde(Obj& root) {
  auto c = std::make_unique<Spde>();
  Obj o = root.obj("spde");
  Obj d = o.obj("domain");
  if (d.has("h_block")) {
    c->metric_kind = "h_block";
    Obj hb = d.obj("h_block");
    c->k3 = static_cast<std::size_t>(hb.integer("k3", 0, 0, 1000000));
    c->k4 = static_cast<std::size_t>(hb.integer("k4", 0, 0, 1000000));
    std::optional<Obj> g = hb.opt_obj("grid");
    std::optional<GridChart> chart;
    if (g) chart = parse_grid(*g);
    c->h_block = parse_metric(hb);
    if ((c->h_block.kind == MetricSource::Kind::from_run) == chart.has_value())
      throw ConfigError(hb.path() + ": grid is required for expression metrics and not allowed with from_run");
    c->h_chart = chart;
  } else {
    c->dim = static_cast<int>(d.integer("dim", 2, 1, 3));
    const auto lo = d.numbers("lo", {});
    const auto hi = d.numbers("hi", {});
    const auto n = d.numbers("count", {});
    const std::size_t dim = static_cast<std::size_t>(c->dim);
    if (lo.size() != dim || hi.size() != dim || n.size() != dim) throw ConfigError(d.path() + ": lo, hi, count need dim entries");
    for (std::size_t a = 0; a < dim; ++a) {
      if (!(hi[a] > lo[a])) d.fail("hi", "must exceed lo");
      if (n[a] < 3 || n[a] != std::floor(n[a])) d.fail("count", "needs integers >= 3");
      c->lo[a] = lo[a];
      c->hi[a] = hi[a];
      c->count[a] = static_cast<std::size_t>(n[a]);
    }
    if (d.has("conformal")) {
      c->metric_kind = "conformal";
      c->conformal = d.expr("conformal");
    }
  }
  d.finish();
  Obj g = o.obj("graph");
  c->graph_kind = g.choice("kind", {"stefan", "sign_power", "heaviside_soc", "linear"}, "linear");
  if (c->graph_kind == "stefan")
    c->gp = {g.num("chi0"), g.num("rho"), g.num("alpha1"), g.num("alpha2")};
  else if (c->graph_kind == "sign_power")
    c->gp = {g.num("rho"), g.num("alpha"), 0, 0};
  else if (c->graph_kind == "heaviside_soc")
    c->gp = {g.num("kappa"), g.num("c_u"), 0, 0};
  else
    c->gp = {g.num("slope"), 0, 0, 0};
  g.finish();
  try {
    (void)c->graph();
  } catch (const InvalidArgument& e) {
    throw ConfigError(g.path() + ": " + e.what());
  }
  c->initial = o.expr("initial");
  if (auto nz = o.opt_obj("noise")) {
    c->modes = static_cast<int>(nz->integer("modes", 4, 1, 10000));
    c->nu = nz->numbers("nu", {});
    if (!c->nu.empty() && c->nu.size() != static_cast<std::size_t>(c->modes)) nz->fail("nu", "needs one entry per mode");
    c->nu_scale = nz->num("nu_scale", 1.0);
    c->reference = nz->choice("reference", {"e1", "uniform"}, "e1");
    nz->finish();
  }
  c->dchi = o.num("dchi");
  if (!(c->dchi > 0)) o.fail("dchi", "must be positive");
  c->steps = static_cast<std::size_t>(o.integer("steps", 100, 1, 100000000));
  c->paths = static_cast<std::size_t>(o.integer("paths", 1, 1, 1000000));
  if (o.has("c_u")) c->c_u = o.num("c_u");
  c->positivity_tol = o.num("positivity_tol", 1e-8);
  c->burn_in = o.num("burn_in_fraction", 0.1);
  c->alpha = o.num("alpha", 0.05);
  if (c->burn_in < 0 || c->burn_in >= 1) o.fail("burn_in_fraction", "must lie in [0, 1)");
  if (auto s = o.opt_obj("solver")) {
    c->sopt.solver = s->choice("kind", {"newton", "fixed_point"}, "newton") == "fixed_point" ? spde::InnerSolver::fixed_point
                                                                                            : spde::InnerSolver::newton;
    c->sopt.eps_min = s->num("eps_min", c->sopt.eps_min);
    c->sopt.eps_c = s->num("eps_c", c->sopt.eps_c);
    c->sopt.tol = s->num("tol", c->sopt.tol);
    c->sopt.max_iter = static_cast<int>(s->integer("max_iter", 0, 0, 100000000));
    c->sopt.anderson_depth = static_cast<int>(s->integer("anderson_depth", 6, 0, 64));
    if (!(c->sopt.eps_min > 0) || !(c->sopt.eps_c >= 0) || !(c->sopt.tol > 0))
      throw ConfigError(s->path() + ": eps_min and tol must be positive, eps_c nonnegative");
    s->finish();
  }
  if (auto r = o.opt_obj("refinement")) {
    c->levels = static_cast<int>(r->integer("levels", 0, 0, 12));
    c->refine_path = r->u64("path", 0);
    if (c->levels == 1) r->fail("levels", "needs 0 (off) or at least 2");
    r->finish();
  }
  c->fatal = o.strings("fatal", {"positivity", "absorption", "convergence"});
  o.finish();
  return c;
}

std::unique_ptr<PreparedCommand> prepare_functionals(Obj& root) {
  auto c = std::make_unique<Functionals>();
  Obj o = root.obj("functionals");
  c->metric = parse_metric(o.obj("metric"));
  c->chart = grid_for(root, c->metric);
  c->f = o.expr("f", 0.0);
  c->tau = o.num("tau", 1.0);
  if (!(c->tau > 0)) o.fail("tau", "must be positive");
  c->normalize = o.flag("normalize", false);
  c->kind = o.choice("connection", {"canonical", "levi_civita"}, "canonical") == "levi_civita" ? ConnectionKind::levi_civita
                                                                                              : ConnectionKind::canonical;
  c->compare = o.flag("compare", true);
  c->tol_S = o.num("tol_S", 1e-8);
  o.finish();
  return c;
}

}  // namespace anholo::app
