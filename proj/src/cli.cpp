#include "vman/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "json.hpp"

namespace vman {

namespace {

std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string short_num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 6);
  return std::string(buf, res.ptr);
}

struct Context {
  const Scene& scene;
  const RunOptions& options;
  Report& report;
  QuadratureSpec q;
  double tol;
  std::uint64_t seed;
  std::vector<double> u_probes;
};

void merge(Report& r, const std::string& prefix, const ValidationReport& v) {
  for (const auto& c : v.checks()) r.check(prefix + c.name, c.passed, c.detail);
  for (const auto& w : v.warnings()) r.warnings.push_back(prefix + w);
}

const Scene& need_complex(const Scene& s, const std::string& command) {
  if (!s.has_complex) throw SchemaError("/charts", "command '" + command + "' needs charts");
  return s;
}

std::string pick(const std::string& flag, const std::string& scene_choice, const Scene& s, bool want_virtual,
                 const std::string& command) {
  if (!flag.empty()) {
    const SceneForm& f = s.form(flag);
    if (want_virtual && !f.virtual_form) throw SchemaError("/forms", "form '" + flag + "' is not a virtual form");
    return flag;
  }
  if (!scene_choice.empty()) return scene_choice;
  for (const auto& f : s.forms)
    if (f.virtual_form || !want_virtual) return f.name;
  throw SchemaError("/forms", "command '" + command + "' needs a virtual form");
}

// CSV of the top-degree coefficient of each chart form at sampled points.
void dump_samples(const Context& ctx, const FormFamily& forms, double u) {
  if (ctx.options.dump_samples.empty()) return;
  std::ofstream out(ctx.options.dump_samples, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + ctx.options.dump_samples);
  const VirtualComplex& c = ctx.scene.complex;
  int width = 0;
  for (const auto& [I, f] : forms) width = std::max(width, c.dim(I));
  out << "chart";
  for (int k = 0; k < width; ++k) out << ",x" << k;
  out << ",value\n";
  const int per_chart = static_cast<int>(std::min<std::int64_t>(ctx.q.sample_count, 2000));
  std::mt19937_64 rng(ctx.seed);
  for (const auto& [I, f] : forms) {
    const int d = c.dim(I);
    const CompiledForm cf(f);
    for (const Point& x : sample_region(c.chart(I), per_chart, rng)) {
      out << '"' << I.str() << '"';
      for (int k = 0; k < width; ++k) {
        out << ',';
        if (k < d) out << num(x[k]);
      }
      out << ',' << num(cf.value(top_monomial(d), x.data(), u)) << '\n';
    }
  }
}

void cmd_validate(Context& ctx) {
  const Scene& s = ctx.scene;
  Report& r = ctx.report;
  const int n = ctx.options.validation_samples;
  const std::uint64_t seed = ctx.seed;
  if (s.has_complex) {
    merge(r, "complex: ", validate_patchable(s.complex, n, 1e-8, seed));
    merge(r, "complex: ", validate_virtual(s.complex, n, 1e-8, seed));
    if (!s.theta.empty()) merge(r, "transition data: ", validate_transition_data(s.complex, s.theta, n, 1e-8, seed));
    for (const auto& f : s.forms) {
      const std::string prefix = "form " + f.name + ": ";
      if (f.virtual_form)
        merge(r, prefix, validate_virtual_form(s.complex, s.virtual_form(f.name), n, 1e-8, seed));
      else
        merge(r, prefix, validate_form_family(s.complex, f.charts, n, 1e-8, seed));
    }
    for (const auto& b : s.bundles)
      merge(r, "bundle " + b.name + ": ",
            validate_virtual_bundle(s.complex, b.bundle, b.section, radial_thom_family(b.bundle, b.thom_radius), s.theta,
                                    n, 1e-8, seed));
    for (const auto& a : s.actions) {
      merge(r, "action " + a.name + ": ", validate_action(s.complex, a.action, n, 1e-8, seed));
      if (!a.fixed.empty())
        merge(r, "fixed locus " + a.name + ": ", verify_fixed_locus(s.complex, a.action, a.fixed, n, 1e-8, seed));
    }
  }
  if (s.fredholm) {
    const SceneFredholm& f = *s.fredholm;
    const ValidationReport stab = verify_stabilization(f.system, f.stabilization, 256, 1e-8, seed);
    merge(r, "stabilization: ", stab);
    for (std::size_t k = 0; k < f.alternatives.size(); ++k)
      merge(r, "stabilization " + std::to_string(k + 1) + ": ",
            verify_stabilization(f.system, f.alternatives[k], 256, 1e-8, seed));
    if (stab.ok()) {
      const auto w = build_virtual_neighborhoods(f.system, f.stabilization, f.options);
      merge(r, "neighborhoods: ", validate_neighborhoods(w, n, seed));
    }
  }
  if (r.checks.empty()) r.warnings.push_back("scene declares nothing to validate");
}

void agreement(Report& r, const std::string& name, double a, double b, double tol) {
  r.check(name, std::abs(a - b) <= tol, "|difference| = " + short_num(std::abs(a - b)) + ", tol " + short_num(tol));
}

void cmd_integrate(Context& ctx) {
  const Scene& s = need_complex(ctx.scene, "integrate");
  const std::string name = pick(ctx.options.form, s.commands.integrate_form, s, true, "integrate");
  const VirtualFormFamily z = s.virtual_form(name);
  const IntegralResult ie = integrate_incl_excl(s.complex, z, ctx.q);
  const PartitionOfUnity pou = build_pou(s.complex, 0.9, 2000, ctx.seed);
  const IntegralResult pu = integrate_pou(s.complex, z, pou, ctx.q);
  ctx.report.value("incl_excl", ie);
  ctx.report.value("pou", pu);
  agreement(ctx.report, "incl_excl vs pou", ie.value, pu.value, ctx.tol);
  dump_samples(ctx, z.forms, 0.0);
}

void cmd_stokes(Context& ctx) {
  const Scene& s = need_complex(ctx.scene, "stokes");
  const std::string name = pick(ctx.options.form, s.commands.stokes_form, s, true, "stokes");
  const VirtualFormFamily z = s.virtual_form(name);
  const StokesResult st = stokes_check(s.complex, z, ctx.q);
  ctx.report.value("lhs", st.lhs);
  ctx.report.value("rhs", st.rhs);
  ctx.report.value("boundary_components", static_cast<double>(st.components));
  ctx.report.check("stokes residual", st.residual <= ctx.tol,
                   "|lhs - rhs| = " + short_num(st.residual) + ", tol " + short_num(ctx.tol));
  dump_samples(ctx, exterior_derivative(z).forms, 0.0);
}

void cmd_pair(Context& ctx) {
  const Scene& s = need_complex(ctx.scene, "pair");
  std::string a_name = s.commands.pair_a;
  std::string z_name = pick(ctx.options.form, s.commands.pair_z, s, true, "pair");
  if (a_name.empty())
    for (const auto& f : s.forms)
      if (!f.virtual_form) a_name = f.name;
  if (a_name.empty()) throw SchemaError("/forms", "command 'pair' needs a form family a");
  const FormFamily& a = s.form(a_name).charts;
  const VirtualFormFamily z = s.virtual_form(z_name);
  const double da = closedness_defect(s.complex, a, ctx.options.validation_samples, ctx.seed);
  const double dz = closedness_defect(s.complex, z.forms, ctx.options.validation_samples, ctx.seed);
  ctx.report.check("a closed", da <= 1e-8, "max |da| = " + short_num(da));
  ctx.report.check("z closed", dz <= 1e-8, "max |dz| = " + short_num(dz));
  const PartitionOfUnity pou = build_pou(s.complex, 0.9, 2000, ctx.seed);
  const IntegralResult mu = pairing_mu(s.complex, a, z, pou, ctx.q);
  ctx.report.value("mu", mu);
  dump_samples(ctx, wedge(a, z).forms, 0.0);
}

void cmd_euler(Context& ctx) {
  const Scene& s = need_complex(ctx.scene, "euler");
  if (s.bundles.empty()) throw SchemaError("/bundles", "command 'euler' needs a bundle");
  const std::string bname = s.commands.euler_bundle.empty() ? s.bundles.front().name : s.commands.euler_bundle;
  const SceneBundle* b = nullptr;
  for (const auto& x : s.bundles)
    if (x.name == bname) b = &x;
  const ThomFamily lambda = radial_thom_family(b->bundle, b->thom_radius);
  const ValidationReport v = validate_virtual_bundle(s.complex, b->bundle, b->section, lambda, s.theta,
                                                     ctx.options.validation_samples, 1e-8, ctx.seed);
  merge(ctx.report, "bundle " + b->name + ": ", v);
  const VirtualFormFamily e = euler_form(s.complex, b->bundle, b->section, lambda, s.theta);
  const std::string a_name = !ctx.options.form.empty() ? ctx.options.form : s.commands.euler_form;
  if (a_name.empty()) {
    ctx.report.value("euler", integrate_incl_excl(s.complex, e, ctx.q));
    dump_samples(ctx, e.forms, 0.0);
  } else {
    const FormFamily& a = s.form(a_name).charts;
    const VirtualFormFamily ae = wedge(a, e);
    ctx.report.value("euler", integrate_incl_excl(s.complex, ae, ctx.q));
    dump_samples(ctx, ae.forms, 0.0);
  }
}

void cmd_localize(Context& ctx) {
  const Scene& s = need_complex(ctx.scene, "localize");
  if (s.actions.empty()) throw SchemaError("/actions", "command 'localize' needs an action");
  const auto& c = s.commands;
  const SceneAction* act = &s.actions.front();
  for (const auto& a : s.actions)
    if (a.name == c.localize_action) act = &a;
  if (c.localize_alpha.empty() || c.localize_zeta.empty())
    throw SchemaError("/commands", "command 'localize' needs commands.localize.alpha and .zeta");
  const EquivariantForm& alpha = s.form(c.localize_alpha).charts;
  const VirtualFormFamily zeta = s.virtual_form(c.localize_zeta);
  const auto fixed = fixed_locus(s.complex, act->action, act->fixed, ctx.options.validation_samples, 1e-8, ctx.seed);
  const PartitionOfUnity pou = build_pou(s.complex, 0.9, 2000, ctx.seed);
  const LocalizationResult res = localize(s.complex, act->action, alpha, zeta, fixed, pou, ctx.q, ctx.u_probes);
  merge(ctx.report, "fixed locus: ", res.report);
  for (const auto& p : res.probes) {
    const std::string tag = "u=" + short_num(p.u);
    ctx.report.value("lhs " + tag, p.lhs);
    ctx.report.value("rhs " + tag, p.rhs);
    if (p.rejected) {
      ctx.report.check("localization " + tag, false, "e_G vanishes on the fixed locus");
      continue;
    }
    ctx.report.check("localization " + tag, p.residual <= ctx.tol,
                     "|lhs - rhs| = " + short_num(p.residual) + ", tol " + short_num(ctx.tol));
  }
  if (!ctx.u_probes.empty()) dump_samples(ctx, wedge(alpha, zeta).forms, ctx.u_probes.front());
}

void cmd_fredholm(Context& ctx) {
  const Scene& s = ctx.scene;
  if (!s.fredholm) throw SchemaError("/fredholm", "command 'fredholm' needs a fredholm section");
  const SceneFredholm& f = *s.fredholm;
  Report& r = ctx.report;
  if (!ctx.options.dump_samples.empty()) r.warnings.push_back("--dump-samples is not supported by 'fredholm'");
  const ValidationReport stab = verify_stabilization(f.system, f.stabilization, 256, 1e-8, ctx.seed);
  merge(r, "stabilization: ", stab);
  if (!stab.ok()) return;
  const InvariantResult phi = invariant(f.system, f.stabilization, f.form, ctx.q, f.options);
  r.value("phi", phi.value);
  for (const auto& w : phi.warnings) r.warnings.push_back(w);
  if (f.expected)
    r.check("phi vs expected", std::abs(phi.value.value - *f.expected) <= ctx.tol,
            "expected " + short_num(*f.expected) + ", |difference| = " +
                short_num(std::abs(phi.value.value - *f.expected)) + ", tol " + short_num(ctx.tol));
  for (std::size_t k = 0; k < f.alternatives.size(); ++k) {
    const std::string tag = std::to_string(k + 1);
    const ValidationReport alt = verify_stabilization(f.system, f.alternatives[k], 256, 1e-8, ctx.seed);
    merge(r, "stabilization " + tag + ": ", alt);
    if (!alt.ok()) continue;
    const IndependenceResult ind =
        check_independence(f.system, f.stabilization, f.alternatives[k], f.form, ctx.q, f.options, ctx.seed + k);
    r.value("phi alternative " + tag, ind.phi_b);
    r.value("phi redrawn radii " + tag, ind.phi_a_radii);
    const double bound = 3.0 * std::max(ind.phi_a.error, ind.phi_b.error) + 1e-12;
    r.check("independence " + tag, ind.residual <= bound,
            "residual " + short_num(ind.residual) + ", bound " + short_num(bound));
    const double rbound = 3.0 * std::max(ind.phi_a.error, ind.phi_a_radii.error) + 1e-12;
    r.check("radius independence " + tag, ind.radius_residual <= rbound,
            "residual " + short_num(ind.radius_residual) + ", bound " + short_num(rbound));
  }
  if (f.action) {
    const EquivariantInvariantResult eq = invariant_equivariant(f.system, *f.action, f.stabilization, f.form,
                                                                f.fixed_points, ctx.q, ctx.u_probes, f.options);
    r.value("fixed points", static_cast<double>(eq.fixed_points.size()));
    for (const auto& p : eq.probes) {
      const std::string tag = "u=" + short_num(p.u);
      r.value("phi_G " + tag, p.lhs);
      r.value("fixed point sum " + tag, p.rhs);
      r.check("equivariant " + tag, p.residual <= ctx.tol,
              "|lhs - rhs| = " + short_num(p.residual) + ", tol " + short_num(ctx.tol));
    }
  }
}

const std::map<std::string, std::function<void(Context&)>>& commands() {
  static const std::map<std::string, std::function<void(Context&)>> table{
      {"validate", cmd_validate}, {"integrate", cmd_integrate}, {"stokes", cmd_stokes},
      {"pair", cmd_pair},         {"euler", cmd_euler},         {"localize", cmd_localize},
      {"fredholm", cmd_fredholm},
  };
  return table;
}

}  // namespace

bool Report::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

void Report::value(std::string name, const IntegralResult& r) {
  values.push_back({std::move(name), r.value, r.error, r.samples});
  for (const auto& w : r.warnings) warnings.push_back(w);
}

void Report::value(std::string name, double v) { values.push_back({std::move(name), v, 0.0, 0}); }

void Report::check(std::string name, bool ok, std::string detail) {
  checks.push_back({std::move(name), ok, std::move(detail)});
}

std::string Report::json(bool include_timing) const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["scene_hash"] = scene_hash;
  j["seed"] = seed;
  j["method"] = method;
  j["passed"] = passed();
  auto& cs = j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : checks) cs.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  auto& vs = j["values"] = nlohmann::ordered_json::array();
  for (const auto& v : values)
    vs.push_back({{"name", v.name}, {"value", v.value}, {"error", v.error}, {"samples", v.samples}});
  j["warnings"] = warnings;
  if (include_timing) j["wall_time_s"] = wall_time;
  return j.dump(2);
}

std::string Report::text() const {
  std::ostringstream out;
  out << command << "  scene " << scene_hash << "  seed " << seed << "  method " << method << '\n';
  for (const auto& v : values) {
    out << "  " << v.name << " = " << num(v.value);
    if (v.error > 0) out << " +- " << short_num(v.error);
    if (v.samples > 0) out << "  (" << v.samples << " samples)";
    out << '\n';
  }
  for (const auto& c : checks) {
    out << (c.passed ? "  PASS " : "  FAIL ") << c.name;
    if (!c.detail.empty()) out << "  " << c.detail;
    out << '\n';
  }
  for (const auto& w : warnings) out << "  warning: " << w << '\n';
  out << (passed() ? "PASS" : "FAIL") << "  " << short_num(wall_time) << " s\n";
  return out.str();
}

std::vector<std::string> command_names() {
  std::vector<std::string> out;
  for (const auto& [name, f] : commands()) out.push_back(name);
  return out;
}

Report run(const std::string& command, const Scene& scene, const std::string& scene_hash, const RunOptions& options) {
  const auto it = commands().find(command);
  if (it == commands().end()) throw SchemaError("", "unknown command '" + command + "'");
  const auto start = std::chrono::steady_clock::now();
  Report report;
  report.command = command;
  report.scene_hash = scene_hash;
  QuadratureSpec q = scene.quadrature;
  if (options.method) q.method = *options.method;
  if (options.samples) q.sample_count = *options.samples;
  if (options.seed) q.seed = *options.seed;
  q.workers = options.workers;
  const double tol = options.tolerance.value_or(scene.tolerance);
  q.tol = tol;
  report.seed = q.seed;
  report.method = to_string(q.method);
  Context ctx{scene, options, report, q, tol, q.seed, options.u_probes.value_or(scene.u_probes)};
  try {
    it->second(ctx);
  } catch (const SchemaError&) {
    throw;
  } catch (const std::exception& e) {
    report.check("error", false, e.what());
  }
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

int run_file(const std::string& command, const std::string& scene_path, const RunOptions& options, bool json_report,
             std::ostream& out, std::ostream& err) {
  std::string bytes;
  Scene scene;
  try {
    std::ifstream in(scene_path, std::ios::binary);
    if (!in) throw SchemaError(scene_path, "cannot open scene file");
    std::ostringstream ss;
    ss << in.rdbuf();
    bytes = ss.str();
    scene = parse_scene(bytes);
    const Report report = run(command, scene, fnv1a_hex(bytes), options);
    out << (json_report ? report.json() + "\n" : report.text());
    if (!report.passed())
      for (const auto& c : report.checks)
        if (!c.passed) err << "violation: " << c.name << (c.detail.empty() ? "" : ": " + c.detail) << '\n';
    return report.exit_code();
  } catch (const SchemaError& e) {
    err << "scene error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace vman
