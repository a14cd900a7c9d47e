#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "vman/cli.hpp"

namespace {

std::vector<double> parse_probes(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  ss.imbue(std::locale::classic());
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    out.push_back(std::stod(item, &used));
    if (used != item.size()) throw std::invalid_argument(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual manifold scenes: validation, integration, localization and Fredholm invariants"};
  app.require_subcommand(1, 1);

  vman::RunOptions opt;
  std::string report = "text";
  std::string method;
  std::string probes;
  double tolerance = 0.0;
  std::int64_t samples = 0;
  std::uint64_t seed = 0;

  for (const std::string& name : vman::command_names()) {
    CLI::App* sub = app.add_subcommand(name, "run '" + name + "' on a scene");
    sub->add_option("scene", "scene file (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--report", report, "report format")->check(CLI::IsMember({"text", "json"}));
    sub->add_option("--tolerance", tolerance, "pass/fail tolerance (overrides the scene)");
    sub->add_option("--method", method, "quadrature method")->check(CLI::IsMember({"grid", "mc"}));
    sub->add_option("--samples", samples, "quadrature budget")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--workers", opt.workers, "worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
    sub->add_option("--u-probes", probes, "comma separated values of u");
    sub->add_option("--form", opt.form, "form to use instead of the scene's choice");
    sub->add_option("--dump-samples", opt.dump_samples, "write (point, integrand) samples as CSV");
    sub->add_option("--validation-samples", opt.validation_samples, "samples per validator check")
        ->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : vman::kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--tolerance")) opt.tolerance = tolerance;
  if (sub->count("--samples")) opt.samples = samples;
  if (sub->count("--seed")) opt.seed = seed;
  if (!method.empty()) opt.method = vman::quadrature_method_from_string(method);
  if (!probes.empty()) {
    try {
      opt.u_probes = parse_probes(probes);
    } catch (const std::exception&) {
      std::cerr << "--u-probes: expected comma separated numbers\n";
      return vman::kExitUsage;
    }
  }
  const std::string scene = sub->get_option("scene")->as<std::string>();
  return vman::run_file(sub->get_name(), scene, opt, report == "json", std::cout, std::cerr);
}
