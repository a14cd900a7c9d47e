#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vman/scene.hpp"

namespace vman {

inline constexpr int kExitPass = 0;
inline constexpr int kExitViolation = 1;
inline constexpr int kExitUsage = 2;

struct RunOptions {
  std::optional<double> tolerance;
  std::optional<QuadratureMethod> method;
  std::optional<std::int64_t> samples;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::optional<std::vector<double>> u_probes;
  std::string form;          // overrides the form chosen by the scene
  std::string dump_samples;  // CSV path; empty disables
  int validation_samples = 64;
};

struct ReportValue {
  std::string name;
  double value = 0.0;
  double error = 0.0;
  std::int64_t samples = 0;
};

struct Report {
  std::string command;
  std::string scene_hash;
  std::uint64_t seed = 0;
  std::string method;
  std::vector<CheckResult> checks;
  std::vector<ReportValue> values;
  std::vector<std::string> warnings;
  double wall_time = 0.0;

  bool passed() const;
  int exit_code() const { return passed() ? kExitPass : kExitViolation; }
  void value(std::string name, const IntegralResult& r);
  void value(std::string name, double v);
  void check(std::string name, bool ok, std::string detail = {});

  /// Everything except the wall time is a function of scene, seed and method.
  std::string json(bool include_timing = true) const;
  std::string text() const;
};

std::vector<std::string> command_names();

/// Runs one command. Throws SchemaError for unknown commands or when the
/// scene lacks what the command needs; module errors become failed checks.
Report run(const std::string& command, const Scene& scene, const std::string& scene_hash, const RunOptions& options);

/// Loads the scene, runs the command and prints the report (text or JSON) to
/// `out`, diagnostics to `err`. Returns the exit code.
int run_file(const std::string& command, const std::string& scene_path, const RunOptions& options, bool json_report,
             std::ostream& out, std::ostream& err);

}  // namespace vman
