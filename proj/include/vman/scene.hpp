#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vman/bundles.hpp"
#include "vman/equivariant.hpp"
#include "vman/fredholm.hpp"

namespace vman {

/// Malformed scene: bad JSON, unknown keys, wrong types, dangling indices.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(const std::string& path, const std::string& what)
      : std::runtime_error((path.empty() ? std::string("/") : path) + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

inline constexpr int kSchemaVersion = 1;

struct SceneForm {
  std::string name;
  bool virtual_form = true;  // Θ-form (uses the scene transition data) or plain family
  FormFamily charts;
};

struct SceneBundle {
  std::string name;
  VirtualBundle bundle;
  VirtualSection section;
  double thom_radius = 0.5;
};

struct SceneAction {
  std::string name;
  CircleAction action;
  std::vector<FixedComponent> fixed;
};

struct SceneFredholm {
  FredholmSystem system;
  std::vector<StabilizationDatum> stabilization;
  std::vector<std::vector<StabilizationDatum>> alternatives;
  NeighborhoodOptions options;
  ChartForm form;                  // a on the base; 1 by default
  std::optional<double> expected;  // oracle value of Φ(a)
  std::optional<FredholmAction> action;
  std::vector<Point> fixed_points;
};

/// Per-command choices; names refer to forms, bundles and actions.
struct SceneCommands {
  std::string integrate_form;
  std::string stokes_form;
  std::string pair_a, pair_z;
  std::string euler_bundle, euler_form;
  std::string localize_action, localize_alpha, localize_zeta;
};

struct Scene {
  std::string name;
  int n = 0;
  std::optional<int> virtual_dim;
  VirtualComplex complex;
  bool has_complex = false;
  TransitionData theta;
  std::vector<SceneForm> forms;
  std::vector<SceneBundle> bundles;
  std::vector<SceneAction> actions;
  std::optional<SceneFredholm> fredholm;
  QuadratureSpec quadrature;
  double tolerance = 1e-6;
  std::vector<double> u_probes{0.5, 1.0, 2.0};
  SceneCommands commands;

  const SceneForm& form(const std::string& name) const;
  VirtualFormFamily virtual_form(const std::string& name) const;
};

/// Parses and schema-checks a scene document.
Scene parse_scene(const std::string& text);
Scene load_scene(const std::string& path);

/// FNV-1a 64-bit hash, hex encoded.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace vman
