#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vman/cli.hpp"
#include "vman/fixtures.hpp"

namespace py = pybind11;
using namespace vman;

namespace {

QuadratureSpec quadrature(const std::string& method, std::int64_t samples, std::uint64_t seed, int workers) {
  QuadratureSpec q;
  q.method = quadrature_method_from_string(method);
  q.sample_count = samples;
  q.seed = seed;
  q.workers = workers;
  return q;
}

py::dict to_dict(const IntegralResult& r) {
  py::dict d;
  d["value"] = r.value;
  d["error"] = r.error;
  d["samples"] = r.samples;
  d["warnings"] = r.warnings;
  return d;
}

py::dict to_dict(const Report& r) {
  py::dict d;
  d["command"] = r.command;
  d["scene_hash"] = r.scene_hash;
  d["seed"] = r.seed;
  d["method"] = r.method;
  d["passed"] = r.passed();
  py::list checks;
  for (const auto& c : r.checks) checks.append(py::make_tuple(c.name, c.passed, c.detail));
  d["checks"] = checks;
  py::dict values;
  for (const auto& v : r.values) values[py::str(v.name)] = py::make_tuple(v.value, v.error);
  d["values"] = values;
  d["warnings"] = r.warnings;
  d["wall_time_s"] = r.wall_time;
  return d;
}

FredholmSystem system_from(const std::vector<double>& lo, const std::vector<double>& hi,
                           const std::vector<std::string>& section, const std::vector<std::string>& constraints) {
  FredholmSystem s;
  s.base = ChartRegion(lo, hi, FaceKind::Free);
  for (const auto& g : constraints) s.base.add_constraint(Expression::parse(g), FaceKind::Free);
  for (const auto& e : section) s.section.push_back(Expression::parse(e));
  s.rank = static_cast<int>(s.section.size());
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Virtual manifolds: charts, forms, integration, localization and Fredholm invariants";

  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<StructureError>(m, "StructureError", PyExc_RuntimeError);
  py::register_exception<SupportError>(m, "SupportError", PyExc_RuntimeError);

  py::class_<Expression>(m, "Expression")
      .def(py::init([](const std::string& text, bool allow_u) { return Expression::parse(text, allow_u); }),
           py::arg("text"), py::arg("allow_u") = false)
      .def("__call__",
           [](const Expression& e, const std::vector<double>& x, std::optional<double> u) { return e.evaluate(x, u); },
           py::arg("x"), py::arg("u") = py::none())
      .def("derivative", &Expression::derivative, py::arg("var"))
      .def("node_count", &Expression::node_count)
      .def("__str__", &Expression::str)
      .def("__repr__", [](const Expression& e) { return "Expression('" + e.str() + "')"; });

  py::class_<IndexSet>(m, "IndexSet")
      .def(py::init([](const std::vector<int>& elements) { return IndexSet::of(elements); }), py::arg("elements"))
      .def_static("parse", &IndexSet::parse)
      .def("elements", &IndexSet::elements)
      .def("__len__", &IndexSet::size)
      .def("__eq__", [](IndexSet a, IndexSet b) { return a == b; })
      .def("__hash__", [](IndexSet a) { return a.bits(); })
      .def("__str__", &IndexSet::str);

  py::class_<Scene>(m, "Scene")
      .def_readonly("name", &Scene::name)
      .def_property_readonly("charts",
                             [](const Scene& s) {
                               std::vector<std::string> out;
                               if (s.has_complex)
                                 for (IndexSet I : s.complex.chart_indices()) out.push_back(I.str());
                               return out;
                             })
      .def_property_readonly("forms",
                             [](const Scene& s) {
                               std::vector<std::string> out;
                               for (const auto& f : s.forms) out.push_back(f.name);
                               return out;
                             })
      .def_property_readonly("has_fredholm", [](const Scene& s) { return s.fredholm.has_value(); });

  m.def("parse_scene", &parse_scene, py::arg("text"));
  m.def("load_scene", &load_scene, py::arg("path"));
  m.def("fnv1a_hex", &fnv1a_hex, py::arg("data"));
  m.def("commands", &command_names);

  m.def(
      "run",
      [](const std::string& command, const Scene& scene, std::optional<double> tolerance,
         std::optional<std::string> method, std::optional<std::int64_t> samples, std::optional<std::uint64_t> seed,
         int workers, std::optional<std::vector<double>> u_probes, const std::string& form) {
        RunOptions opt;
        opt.tolerance = tolerance;
        if (method) opt.method = quadrature_method_from_string(*method);
        opt.samples = samples;
        opt.seed = seed;
        opt.workers = workers;
        opt.u_probes = u_probes;
        opt.form = form;
        Report r;
        {
          py::gil_scoped_release release;
          r = run(command, scene, "", opt);
        }
        return to_dict(r);
      },
      py::arg("command"), py::arg("scene"), py::arg("tolerance") = py::none(), py::arg("method") = py::none(),
      py::arg("samples") = py::none(), py::arg("seed") = py::none(), py::arg("workers") = 1,
      py::arg("u_probes") = py::none(), py::arg("form") = "",
      "Runs a CLI command on a parsed scene and returns the report as a dict.");

  m.def("bump_mass", &bump_mass, py::arg("rank"));

  m.def(
      "integrate_interval_cover",
      [](const std::string& integrand, const std::string& method, std::int64_t samples, std::uint64_t seed) {
        const VirtualComplex c = fixtures::interval_cover();
        VirtualFormFamily z;
        const Expression f = Expression::parse(integrand);
        for (IndexSet I : c.chart_indices()) z.forms[I] = ChartForm::top(1, f);
        const QuadratureSpec q = quadrature(method, samples, seed, 1);
        const PartitionOfUnity pou = build_pou(c);
        py::dict d;
        d["incl_excl"] = to_dict(integrate_incl_excl(c, z, q));
        d["pou"] = to_dict(integrate_pou(c, z, pou, q));
        return d;
      },
      py::arg("integrand"), py::arg("method") = "grid", py::arg("samples") = 200000, py::arg("seed") = 1,
      "Integrates f(x0) dx0 over [0, 1] presented by the two-chart interval cover.");

  m.def(
      "fredholm_invariant",
      [](const std::vector<double>& lo, const std::vector<double>& hi, const std::vector<std::string>& section,
         const std::vector<std::vector<double>>& centers, const std::vector<double>& radii,
         const std::vector<std::string>& constraints, const std::string& method, std::int64_t samples,
         std::uint64_t seed) {
        const FredholmSystem sys = system_from(lo, hi, section, constraints);
        const auto stab = build_stabilization_system(sys, centers, radii);
        const ChartForm one = ChartForm::function(sys.dim(), Expression::constant(1.0));
        InvariantResult r;
        {
          py::gil_scoped_release release;
          r = invariant(sys, stab, one, quadrature(method, samples, seed, 1));
        }
        py::dict d = to_dict(r.value);
        d["warnings"] = r.warnings;
        return d;
      },
      py::arg("lo"), py::arg("hi"), py::arg("section"), py::arg("centers"), py::arg("radii"),
      py::arg("constraints") = std::vector<std::string>{}, py::arg("method") = "grid", py::arg("samples") = 40000,
      py::arg("seed") = 1,
      "Φ(1) of a section of the trivial bundle over a box cut by constraints (all faces free).");
}
