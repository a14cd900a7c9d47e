#include "vman/scene.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace vman {

using json = nlohmann::json;

namespace {

class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  const json& raw() const { return j_; }
  const std::string& path() const { return path_; }

  [[noreturn]] void fail(const std::string& what) const { throw SchemaError(path_, what); }

  Node at(const std::string& key) const { return Node(j_.at(key), path_ + "/" + key); }
  Node at(std::size_t i) const { return Node(j_.at(i), path_ + "/" + std::to_string(i)); }
  bool has(const std::string& key) const { return j_.contains(key); }

  const Node& object(std::initializer_list<const char*> allowed) const {
    if (!j_.is_object()) fail("expected an object");
    std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& item : j_.items())
      if (!keys.count(item.key())) fail("unknown key '" + item.key() + "'");
    return *this;
  }

  Node required(const std::string& key) const {
    if (!j_.contains(key)) fail("missing key '" + key + "'");
    return at(key);
  }

  std::size_t size() const {
    if (!j_.is_array()) fail("expected an array");
    return j_.size();
  }

  std::string str() const {
    if (!j_.is_string()) fail("expected a string");
    return j_.get<std::string>();
  }

  bool boolean() const {
    if (!j_.is_boolean()) fail("expected a boolean");
    return j_.get<bool>();
  }

  std::int64_t integer() const {
    if (!j_.is_number_integer()) fail("expected an integer");
    return j_.get<std::int64_t>();
  }

  // A number, or a string holding a constant expression such as "2*pi".
  double number() const {
    if (j_.is_number()) return j_.get<double>();
    if (j_.is_string()) {
      const Expression e = parse_expr(false);
      if (e.variable_mask() != 0) fail("expected a constant");
      return e.evaluate({});
    }
    fail("expected a number");
  }

  Expression parse_expr(bool allow_u) const {
    const std::string text = str();
    try {
      return Expression::parse(text, allow_u);
    } catch (const ParseError& e) {
      fail(e.what());
    }
  }

  std::vector<double> numbers() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i).number());
    return out;
  }

  std::vector<Expression> exprs(bool allow_u = false) const {
    std::vector<Expression> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i).parse_expr(allow_u));
    return out;
  }

  IndexSet index_set() const {
    std::vector<int> elements;
    if (j_.is_string()) {
      try {
        return IndexSet::parse(str());
      } catch (const std::exception& e) {
        fail(e.what());
      }
    }
    for (std::size_t i = 0; i < size(); ++i) {
      const auto v = at(i).integer();
      if (v < 1 || v > IndexSet::kMaxElement) at(i).fail("index out of range 1..15");
      elements.push_back(static_cast<int>(v));
    }
    return IndexSet::of(elements);
  }

  template <class F>
  auto wrap(F&& f) const -> decltype(f()) {
    try {
      return f();
    } catch (const SchemaError&) {
      throw;
    } catch (const std::exception& e) {
      fail(e.what());
    }
  }

 private:
  const json& j_;
  std::string path_;
};

FaceKind face_kind(const Node& n) {
  return n.wrap([&] { return face_kind_from_string(n.str()); });
}

ChartRegion parse_region(const Node& n) {
  n.object({"lo", "hi", "periodic", "faces", "lo_faces", "hi_faces", "constraints"});
  std::vector<double> lo, hi;
  if (n.has("lo")) lo = n.at("lo").numbers();
  if (n.has("hi")) hi = n.at("hi").numbers();
  if (lo.size() != hi.size()) n.fail("lo and hi differ in length");
  const FaceKind faces = n.has("faces") ? face_kind(n.at("faces")) : FaceKind::Open;
  ChartRegion r = n.wrap([&] { return ChartRegion(lo, hi, faces); });
  const int d = r.dim();
  if (n.has("periodic")) {
    const Node p = n.at("periodic");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto axis = p.at(i).integer();
      if (axis < 0 || axis >= d) p.at(i).fail("axis out of range");
      r.set_periodic(static_cast<int>(axis));
    }
  }
  for (const char* key : {"lo_faces", "hi_faces"}) {
    if (!n.has(key)) continue;
    const Node f = n.at(key);
    if (static_cast<int>(f.size()) != d) f.fail("expected one face kind per axis");
    for (int a = 0; a < d; ++a) r.set_face(a, key[0] == 'h', face_kind(f.at(a)));
  }
  if (n.has("constraints")) {
    const Node cs = n.at("constraints");
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const Node c = cs.at(i).object({"g", "kind", "face"});
      const Expression g = c.required("g").parse_expr(false);
      const FaceKind kind = c.has("kind") ? face_kind(c.at("kind")) : FaceKind::Open;
      std::optional<FaceParametrization> fp;
      if (c.has("face")) {
        const Node f = c.at("face").object({"map", "lo", "hi", "periodic"});
        FaceParametrization p;
        p.map = f.required("map").exprs();
        p.lo = f.required("lo").numbers();
        p.hi = f.required("hi").numbers();
        if (p.lo.size() != p.hi.size() || static_cast<int>(p.lo.size()) != d - 1)
          f.fail("face parameters must have dimension " + std::to_string(d - 1));
        if (static_cast<int>(p.map.size()) != d) f.fail("face map needs one expression per chart axis");
        p.periodic.assign(p.lo.size(), false);
        if (f.has("periodic")) {
          const Node pp = f.at("periodic");
          for (std::size_t k = 0; k < pp.size(); ++k) {
            const auto axis = pp.at(k).integer();
            if (axis < 0 || axis >= d - 1) pp.at(k).fail("axis out of range");
            p.periodic[axis] = true;
          }
        }
        fp = std::move(p);
      }
      r.add_constraint(g, kind, std::move(fp));
    }
  }
  return r;
}

void check_arity(const Node& n, const std::vector<Expression>& es, int vars, bool allow_u = false) {
  for (std::size_t i = 0; i < es.size(); ++i) {
    if (vars < 32 && (es[i].variable_mask() >> vars) != 0)
      n.at(i).fail("uses a variable beyond x" + std::to_string(vars - 1));
    if (!allow_u && es[i].uses_u()) n.at(i).fail("u is not allowed here");
  }
}

ChartForm parse_terms(const Node& n, int dim) {
  if (!n.raw().is_object()) n.fail("expected an object of monomial terms");
  ChartForm f(dim);
  for (const auto& item : n.raw().items()) {
    const Node t = n.at(item.key());
    const Monomial m = t.wrap([&] { return monomial_from_label(item.key()); });
    if (dim < 32 && (m >> dim) != 0) t.fail("monomial exceeds the chart dimension " + std::to_string(dim));
    const Expression e = t.parse_expr(true);
    if ((e.variable_mask() >> dim) != 0) t.fail("coefficient uses a variable beyond the chart dimension");
    f.add(m, e);
  }
  return f;
}

struct Parser {
  Scene s;

  const ChartRegion& chart(const Node& n, IndexSet I) const {
    if (!s.has_complex) n.fail("no charts are declared");
    if (!s.complex.has_chart(I)) n.fail("unknown chart " + I.str());
    return s.complex.chart(I);
  }

  void complex(const Node& root) {
    const bool has_charts = root.has("charts");
    const bool has_cover = root.has("cover");
    if (has_charts && has_cover) root.fail("'charts' and 'cover' are exclusive");
    if (!has_charts && !has_cover) {
      if (root.has("overlaps")) root.fail("'overlaps' requires 'charts'");
      return;
    }
    s.has_complex = true;
    if (has_cover) {
      const Node c = root.at("cover").object({"regions", "shrink"});
      const Node rs = c.required("regions");
      std::vector<ChartRegion> regions;
      for (std::size_t i = 0; i < rs.size(); ++i) regions.push_back(parse_region(rs.at(i)));
      if (regions.empty()) rs.fail("no regions");
      const double shrink = c.has("shrink") ? c.at("shrink").number() : 0.75;
      for (const auto& r : regions)
        if (r.dim() != regions[0].dim()) rs.fail("regions differ in dimension");
      s.complex = c.wrap([&] { return from_cover(regions[0].dim(), regions, shrink); });
      if (root.has("overlaps")) root.fail("'overlaps' cannot be combined with 'cover'");
      return;
    }
    s.complex = VirtualComplex(s.n);
    const Node cs = root.at("charts");
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const Node c = cs.at(i).object({"index", "region"});
      const IndexSet I = c.required("index").index_set();
      if (s.complex.has_chart(I)) c.fail("duplicate chart " + I.str());
      ChartRegion region = parse_region(c.required("region"));
      c.wrap([&] {
        s.complex.set_chart(I, std::move(region));
        return 0;
      });
    }
    if (!s.complex.has_chart(IndexSet())) cs.fail("the chart {} is required");
    if (!root.has("overlaps")) return;
    const Node os = root.at("overlaps");
    for (std::size_t i = 0; i < os.size(); ++i) {
      const Node o = os.at(i).object({"small", "big", "rank", "region_in_small", "region_in_big", "projection",
                                      "fiber_param", "identity"});
      Overlap ov;
      ov.small = o.required("small").index_set();
      ov.big = o.required("big").index_set();
      const ChartRegion& xs = chart(o.at("small"), ov.small);
      const ChartRegion& xb = chart(o.at("big"), ov.big);
      if (!ov.small.proper_subset_of(ov.big)) o.fail("small must be a proper subset of big");
      if (s.complex.overlap(ov.small, ov.big)) o.fail("duplicate overlap");
      if (o.has("identity")) {
        const Node id = o.at("identity");
        if (xs.dim() != xb.dim()) id.fail("identity overlap needs charts of equal dimension");
        const ChartRegion region = parse_region(id);
        if (region.dim() != xs.dim()) id.fail("dimension mismatch");
        for (const char* k : {"rank", "region_in_small", "region_in_big", "projection", "fiber_param"})
          if (o.has(k)) o.fail(std::string("'") + k + "' is implied by 'identity'");
        s.complex.add_overlap(identity_overlap(ov.small, ov.big, region));
        continue;
      }
      ov.rank = static_cast<int>(o.required("rank").integer());
      if (ov.rank != xb.dim() - xs.dim()) o.at("rank").fail("rank must equal the dimension difference");
      ov.region_in_small = parse_region(o.required("region_in_small"));
      ov.region_in_big = parse_region(o.required("region_in_big"));
      if (ov.region_in_small.dim() != xs.dim()) o.at("region_in_small").fail("dimension mismatch");
      if (ov.region_in_big.dim() != xb.dim()) o.at("region_in_big").fail("dimension mismatch");
      ov.projection = o.required("projection").exprs();
      ov.fiber_param = o.required("fiber_param").exprs();
      if (static_cast<int>(ov.projection.size()) != xs.dim()) o.at("projection").fail("expected d_small entries");
      if (static_cast<int>(ov.fiber_param.size()) != xb.dim()) o.at("fiber_param").fail("expected d_big entries");
      check_arity(o.at("projection"), ov.projection, xb.dim());
      check_arity(o.at("fiber_param"), ov.fiber_param, xb.dim());
      o.wrap([&] {
        s.complex.add_overlap(std::move(ov));
        return 0;
      });
    }
  }

  void forms(const Node& root) {
    if (root.has("transition_data")) {
      const Node ts = root.at("transition_data");
      for (std::size_t i = 0; i < ts.size(); ++i) {
        const Node t = ts.at(i).object({"small", "big", "terms", "thom"});
        const IndexSet I = t.required("small").index_set();
        const IndexSet J = t.required("big").index_set();
        chart(t.at("small"), I);
        const ChartRegion& xj = chart(t.at("big"), J);
        if (!s.complex.overlap(I, J)) t.fail("no overlap " + I.str() + " < " + J.str());
        if (s.theta.count({I, J})) t.fail("duplicate transition form");
        if (t.has("terms") == t.has("thom")) t.fail("expected exactly one of 'terms' and 'thom'");
        if (t.has("terms")) {
          s.theta[{I, J}] = parse_terms(t.at("terms"), xj.dim());
          continue;
        }
        const Node th = t.at("thom").object({"axes", "radius", "weights"});
        std::vector<int> axes;
        const Node ax = th.required("axes");
        for (std::size_t a = 0; a < ax.size(); ++a) {
          const auto v = ax.at(a).integer();
          if (v < 0 || v >= xj.dim()) ax.at(a).fail("axis out of range");
          axes.push_back(static_cast<int>(v));
        }
        const double radius = th.required("radius").number();
        if (!(radius > 0)) th.at("radius").fail("radius must be positive");
        if (th.has("weights")) {
          std::vector<int> weights;
          const Node ws = th.at("weights");
          for (std::size_t a = 0; a < ws.size(); ++a) weights.push_back(static_cast<int>(ws.at(a).integer()));
          s.theta[{I, J}] = th.wrap([&] { return equivariant_thom_form_on(xj.dim(), axes, weights, radius); });
        } else {
          s.theta[{I, J}] = th.wrap([&] { return thom_form_on(xj.dim(), axes, radius); });
        }
      }
    }
    if (!root.has("forms")) return;
    const Node fs = root.at("forms");
    for (std::size_t i = 0; i < fs.size(); ++i) {
      const Node f = fs.at(i).object({"name", "kind", "charts", "terms"});
      SceneForm form;
      form.name = f.required("name").str();
      for (const auto& other : s.forms)
        if (other.name == form.name) f.at("name").fail("duplicate form name");
      if (f.has("kind")) {
        const std::string kind = f.at("kind").str();
        if (kind != "virtual" && kind != "family") f.at("kind").fail("expected 'virtual' or 'family'");
        form.virtual_form = kind == "virtual";
      }
      if (!f.has("charts") && !f.has("terms")) f.fail("expected 'charts' or 'terms'");
      if (f.has("charts")) {
        const Node cs = f.at("charts");
        for (std::size_t k = 0; k < cs.size(); ++k) {
          const Node c = cs.at(k).object({"index", "terms", "extend"});
          const IndexSet J = c.required("index").index_set();
          const ChartRegion& x = chart(c.at("index"), J);
          if (form.charts.count(J)) c.fail("duplicate chart " + J.str());
          if (c.has("terms") == c.has("extend")) c.fail("expected exactly one of 'terms' and 'extend'");
          if (c.has("terms")) {
            form.charts[J] = parse_terms(c.at("terms"), x.dim());
            continue;
          }
          // z_J = ε φ*z_I ∧ Θ_{J,I}
          const IndexSet I = c.at("extend").index_set();
          const Overlap* o = s.complex.overlap(I, J);
          if (!o) c.at("extend").fail("no overlap " + I.str() + " < " + J.str());
          if (!form.charts.count(I)) c.at("extend").fail("chart " + I.str() + " must be declared first");
          const int eps = c.wrap([&] { return overlap_orientation(s.complex, *o); });
          const ChartForm lifted = pullback(o->projection, x.dim(), form.charts.at(I));
          const ChartForm wedged =
              form.virtual_form ? c.wrap([&] { return wedge(lifted, transition(s.complex, s.theta, I, J)); }) : lifted;
          form.charts[J] = eps > 0 || !form.virtual_form ? wedged : -wedged;
        }
      }
      for (IndexSet I : s.complex.chart_indices()) {
        if (form.charts.count(I)) continue;
        form.charts[I] = f.has("terms") ? parse_terms(f.at("terms"), s.complex.dim(I)) : ChartForm(s.complex.dim(I));
      }
      s.forms.push_back(std::move(form));
    }
  }

  void bundles(const Node& root) {
    if (!root.has("bundles")) return;
    const Node bs = root.at("bundles");
    for (std::size_t i = 0; i < bs.size(); ++i) {
      const Node b = bs.at(i).object({"name", "ranks", "order", "section", "thom_radius"});
      SceneBundle sb;
      sb.name = b.required("name").str();
      const Node rs = b.required("ranks");
      for (std::size_t k = 0; k < rs.size(); ++k) {
        const Node r = rs.at(k).object({"index", "rank"});
        const IndexSet I = r.required("index").index_set();
        chart(r.at("index"), I);
        const auto rank = r.required("rank").integer();
        if (rank < 0 || rank > kMaxVariables) r.at("rank").fail("rank out of range");
        sb.bundle.rank[I] = static_cast<int>(rank);
      }
      for (IndexSet I : s.complex.chart_indices())
        if (!sb.bundle.rank.count(I)) rs.fail("missing rank for chart " + I.str());
      if (b.has("order")) {
        const Node os = b.at("order");
        for (std::size_t k = 0; k < os.size(); ++k) {
          const Node o = os.at(k).object({"small", "big", "order"});
          const IndexSet I = o.required("small").index_set();
          const IndexSet J = o.required("big").index_set();
          if (!s.complex.overlap(I, J)) o.fail("no overlap " + I.str() + " < " + J.str());
          std::vector<int> order;
          const Node ord = o.required("order");
          for (std::size_t a = 0; a < ord.size(); ++a) order.push_back(static_cast<int>(ord.at(a).integer()));
          sb.bundle.order[{I, J}] = order;
        }
      }
      const Node ss = b.required("section");
      for (std::size_t k = 0; k < ss.size(); ++k) {
        const Node e = ss.at(k).object({"index", "exprs"});
        const IndexSet I = e.required("index").index_set();
        const ChartRegion& x = chart(e.at("index"), I);
        auto exprs = e.required("exprs").exprs();
        check_arity(e.at("exprs"), exprs, x.dim());
        if (static_cast<int>(exprs.size()) != sb.bundle.rank_of(I)) e.at("exprs").fail("expected one entry per fiber axis");
        sb.section[I] = std::move(exprs);
      }
      for (IndexSet I : s.complex.chart_indices())
        if (!sb.section.count(I)) ss.fail("missing section on chart " + I.str());
      if (b.has("thom_radius")) sb.thom_radius = b.at("thom_radius").number();
      if (!(sb.thom_radius > 0)) b.fail("thom_radius must be positive");
      s.bundles.push_back(std::move(sb));
    }
  }

  void actions(const Node& root) {
    if (root.has("actions")) {
      const Node as = root.at("actions");
      for (std::size_t i = 0; i < as.size(); ++i) {
        const Node a = as.at(i).object({"name", "flows"});
        SceneAction sa;
        sa.name = a.required("name").str();
        const Node fs = a.required("flows");
        for (std::size_t k = 0; k < fs.size(); ++k) {
          const Node f = fs.at(k).object({"index", "flow"});
          const IndexSet I = f.required("index").index_set();
          const int d = chart(f.at("index"), I).dim();
          auto flow = f.required("flow").exprs();
          if (static_cast<int>(flow.size()) != d) f.at("flow").fail("expected one entry per chart axis");
          check_arity(f.at("flow"), flow, d + 1);
          sa.action.flow[I] = std::move(flow);
        }
        for (IndexSet I : s.complex.chart_indices())
          if (!sa.action.flow.count(I)) fs.fail("missing flow on chart " + I.str());
        s.actions.push_back(std::move(sa));
      }
    }
    if (!root.has("fixed_components")) return;
    const Node cs = root.at("fixed_components");
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const Node c = cs.at(i).object({"action", "charts"});
      SceneAction& act = action(c.required("action"));
      FixedComponent comp;
      const Node fs = c.required("charts");
      for (std::size_t k = 0; k < fs.size(); ++k) {
        const Node f = fs.at(k).object({"index", "region", "embedding", "weights", "normal_coords", "euler"});
        const IndexSet I = f.required("index").index_set();
        const int d = chart(f.at("index"), I).dim();
        FixedChart fc;
        if (f.has("region")) fc.region = parse_region(f.at("region"));
        fc.embedding = f.required("embedding").exprs();
        if (static_cast<int>(fc.embedding.size()) != d) f.at("embedding").fail("expected one entry per chart axis");
        check_arity(f.at("embedding"), fc.embedding, fc.region.dim());
        const Node w = f.required("weights");
        for (std::size_t a = 0; a < w.size(); ++a) fc.weights.push_back(static_cast<int>(w.at(a).integer()));
        if (f.has("normal_coords")) {
          fc.normal_coords = f.at("normal_coords").exprs();
          if (static_cast<int>(fc.normal_coords.size()) != fc.normal_rank())
            f.at("normal_coords").fail("expected twice as many entries as weights");
          check_arity(f.at("normal_coords"), fc.normal_coords, d);
        }
        if (f.has("euler")) fc.euler = parse_terms(f.at("euler"), fc.region.dim());
        comp.charts[I] = std::move(fc);
      }
      act.fixed.push_back(std::move(comp));
    }
  }

  SceneAction& action(const Node& n) {
    const std::string name = n.str();
    for (auto& a : s.actions)
      if (a.name == name) return a;
    n.fail("unknown action '" + name + "'");
  }

  StabilizationDatum datum(const Node& n, const FredholmSystem& sys) {
    n.object({"center", "radius", "columns"});
    StabilizationDatum d;
    d.center = n.required("center").numbers();
    if (static_cast<int>(d.center.size()) != sys.dim()) n.at("center").fail("dimension mismatch");
    d.radius = n.required("radius").number();
    if (!(d.radius > 0)) n.at("radius").fail("radius must be positive");
    d.cutoff = stabilization_cutoff(d.center, d.radius);
    if (n.has("columns")) {
      const Node cs = n.at("columns");
      for (std::size_t k = 0; k < cs.size(); ++k) {
        Point col = cs.at(k).numbers();
        if (static_cast<int>(col.size()) != sys.rank) cs.at(k).fail("column length must equal the section rank");
        d.columns.push_back(std::move(col));
      }
    } else {
      d.columns = n.wrap([&] { return cokernel_basis(linearization(sys, d.center)); });
    }
    return d;
  }

  std::vector<StabilizationDatum> stabilization(const Node& n, const FredholmSystem& sys) {
    std::vector<StabilizationDatum> out;
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(datum(n.at(i), sys));
    return out;
  }

  void fredholm(const Node& root) {
    if (!root.has("fredholm")) return;
    const Node f = root.at("fredholm").object({"base", "section", "stabilization", "alternatives", "options", "form",
                                               "expected", "action", "fixed_points"});
    SceneFredholm fr;
    fr.system.base = parse_region(f.required("base"));
    const int n = fr.system.dim();
    fr.system.section = f.required("section").exprs();
    check_arity(f.at("section"), fr.system.section, n);
    fr.system.rank = static_cast<int>(fr.system.section.size());
    fr.stabilization = stabilization(f.required("stabilization"), fr.system);
    if (f.has("alternatives")) {
      const Node as = f.at("alternatives");
      for (std::size_t i = 0; i < as.size(); ++i) fr.alternatives.push_back(stabilization(as.at(i), fr.system));
    }
    if (f.has("options")) {
      const Node o = f.at("options").object({"thom_radius", "section_radius", "fiber_extent", "shrink"});
      if (o.has("thom_radius")) fr.options.thom_radius = o.at("thom_radius").number();
      if (o.has("section_radius")) fr.options.section_radius = o.at("section_radius").number();
      if (o.has("fiber_extent")) fr.options.fiber_extent = o.at("fiber_extent").number();
      if (o.has("shrink")) fr.options.shrink = o.at("shrink").number();
    }
    fr.form = f.has("form") ? parse_terms(f.at("form"), n) : ChartForm::function(n, Expression::constant(1.0));
    if (f.has("expected")) fr.expected = f.at("expected").number();
    if (f.has("action")) {
      const Node a = f.at("action").object({"base_flow", "fiber_flow"});
      FredholmAction act;
      act.base_flow = a.required("base_flow").exprs();
      act.fiber_flow = a.required("fiber_flow").exprs();
      if (static_cast<int>(act.base_flow.size()) != n) a.at("base_flow").fail("expected one entry per base axis");
      if (static_cast<int>(act.fiber_flow.size()) != fr.system.rank)
        a.at("fiber_flow").fail("expected one entry per section component");
      check_arity(a.at("base_flow"), act.base_flow, n + 1);
      check_arity(a.at("fiber_flow"), act.fiber_flow, fr.system.rank + 1);
      fr.action = std::move(act);
    }
    if (f.has("fixed_points")) {
      const Node ps = f.at("fixed_points");
      for (std::size_t i = 0; i < ps.size(); ++i) {
        Point p = ps.at(i).numbers();
        if (static_cast<int>(p.size()) != n) ps.at(i).fail("dimension mismatch");
        fr.fixed_points.push_back(std::move(p));
      }
    }
    s.fredholm = std::move(fr);
  }

  void quadrature(const Node& root) {
    if (!root.has("quadrature")) return;
    const Node q = root.at("quadrature").object({"method", "samples", "points_per_axis", "seed", "tolerance",
                                                 "u_probes", "workers"});
    if (q.has("method")) s.quadrature.method = q.wrap([&] { return quadrature_method_from_string(q.at("method").str()); });
    if (q.has("samples")) s.quadrature.sample_count = q.at("samples").integer();
    if (s.quadrature.sample_count <= 0) q.fail("samples must be positive");
    if (q.has("points_per_axis")) s.quadrature.points_per_axis = static_cast<int>(q.at("points_per_axis").integer());
    if (q.has("seed")) s.quadrature.seed = static_cast<std::uint64_t>(q.at("seed").integer());
    if (q.has("workers")) s.quadrature.workers = static_cast<int>(q.at("workers").integer());
    if (q.has("tolerance")) s.tolerance = q.at("tolerance").number();
    if (q.has("u_probes")) s.u_probes = q.at("u_probes").numbers();
    s.quadrature.tol = s.tolerance;
  }

  std::string form_ref(const Node& n, bool want_virtual) {
    const std::string name = n.str();
    for (const auto& f : s.forms)
      if (f.name == name) {
        if (want_virtual && !f.virtual_form) n.fail("form '" + name + "' is not a virtual form");
        return name;
      }
    n.fail("unknown form '" + name + "'");
  }

  void commands(const Node& root) {
    auto& c = s.commands;
    if (!root.has("commands")) return;
    const Node cs = root.at("commands").object({"integrate", "stokes", "pair", "euler", "localize"});
    if (cs.has("integrate")) c.integrate_form = form_ref(cs.at("integrate").object({"form"}).required("form"), true);
    if (cs.has("stokes")) c.stokes_form = form_ref(cs.at("stokes").object({"form"}).required("form"), true);
    if (cs.has("pair")) {
      const Node p = cs.at("pair").object({"a", "z"});
      c.pair_a = form_ref(p.required("a"), false);
      c.pair_z = form_ref(p.required("z"), true);
    }
    if (cs.has("euler")) {
      const Node e = cs.at("euler").object({"bundle", "form"});
      const std::string name = e.required("bundle").str();
      bool found = false;
      for (const auto& b : s.bundles) found = found || b.name == name;
      if (!found) e.at("bundle").fail("unknown bundle '" + name + "'");
      c.euler_bundle = name;
      if (e.has("form")) c.euler_form = form_ref(e.at("form"), false);
    }
    if (cs.has("localize")) {
      const Node l = cs.at("localize").object({"action", "alpha", "zeta"});
      c.localize_action = action(l.required("action")).name;
      c.localize_alpha = form_ref(l.required("alpha"), false);
      c.localize_zeta = form_ref(l.required("zeta"), true);
    }
  }

  void parse(const Node& root) {
    root.object({"schema_version", "meta", "charts", "cover", "overlaps", "forms", "transition_data", "bundles",
                 "actions", "fixed_components", "fredholm", "quadrature", "commands"});
    const auto version = root.required("schema_version").integer();
    if (version != kSchemaVersion) root.at("schema_version").fail("unsupported schema version " + std::to_string(version));
    if (root.has("meta")) {
      const Node m = root.at("meta").object({"name", "n", "virtual_dim"});
      if (m.has("name")) s.name = m.at("name").str();
      if (m.has("n")) s.n = static_cast<int>(m.at("n").integer());
      if (m.has("virtual_dim")) s.virtual_dim = static_cast<int>(m.at("virtual_dim").integer());
      if (s.n < 0) m.at("n").fail("n must be non-negative");
    }
    complex(root);
    if (!s.has_complex) {
      for (const char* k : {"forms", "transition_data", "bundles", "actions", "fixed_components"})
        if (root.has(k)) root.fail(std::string("'") + k + "' requires charts");
    }
    if (s.has_complex && s.virtual_dim && root.wrap([&] { return s.complex.virtual_dim(); }) != *s.virtual_dim)
      root.at("meta").fail("virtual_dim disagrees with the charts");
    forms(root);
    bundles(root);
    actions(root);
    fredholm(root);
    quadrature(root);
    commands(root);
  }
};

}  // namespace

const SceneForm& Scene::form(const std::string& name) const {
  for (const auto& f : forms)
    if (f.name == name) return f;
  throw SchemaError("/forms", "unknown form '" + name + "'");
}

VirtualFormFamily Scene::virtual_form(const std::string& name) const {
  return VirtualFormFamily{form(name).charts, theta};
}

Scene parse_scene(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("", std::string("invalid JSON: ") + e.what());
  }
  Parser p;
  try {
    p.parse(Node(j, ""));
  } catch (const SchemaError&) {
    throw;
  } catch (const std::exception& e) {
    throw SchemaError("", e.what());
  }
  return std::move(p.s);
}

Scene load_scene(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError(path, "cannot open scene file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scene(ss.str());
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace vman
