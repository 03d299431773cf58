#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "selftune/checks.hpp"
#include "selftune/config.hpp"
#include "selftune/diagnostics.hpp"
#include "selftune/envs.hpp"
#include "selftune/errors.hpp"
#include "selftune/meta.hpp"
#include "selftune/plot.hpp"
#include "selftune/runner.hpp"

namespace py = pybind11;
using namespace selftune;

namespace {

ExperimentConfig config_from_text(const std::string& text,
                                  const std::vector<std::string>& overrides) {
  ExperimentConfig config = parse_config(text);
  for (const std::string& s : overrides) apply_override(config, s);
  validate_config(config);
  return config;
}

py::dict row_dict(const MetricsRow& row, bool fd) {
  py::dict d;
  d["meta_update"] = row.meta_update;
  d["env_steps"] = row.env_steps;
  d["mean_return"] = row.mean_return;
  d["gamma"] = row.gamma;
  d["meta_grad"] = row.meta_grad;
  if (fd) d["meta_grad_fd"] = row.meta_grad_fd;
  d["advantage_mean"] = row.advantage_mean;
  d["advantage_std"] = row.advantage_std;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Meta-gradient discount tuning: presets, training runs, aggregate "
      "CSV/SVG codecs, and the finite-difference meta-gradient validator.";

  // Translators run newest-first, so the base class goes first: ConfigError
  // and SchemaError are claimed before the catch-all Error translator sees
  // them.
  py::register_exception<Error>(m, "EngineError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);

  m.def("preset_names", &preset_names, "Names of the built-in experiment cells.");
  m.def(
      "preset_config",
      [](const std::string& name) { return dump_config(preset_config(name)); },
      py::arg("name"), "Full config of a preset as key = value text.");
  m.def(
      "canonical_config",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        return dump_config(config_from_text(text, overrides));
      },
      py::arg("text"), py::arg("overrides") = std::vector<std::string>{},
      "Parse, override, validate, and re-dump a config.");
  m.def(
      "run",
      [](const std::string& config_text,
         const std::vector<std::string>& overrides, int seed) {
        const ExperimentConfig config = config_from_text(config_text, overrides);
        const std::vector<MetricsRow> rows = run_rows(config, seed);
        py::list out;
        for (const MetricsRow& row : rows) out.append(row_dict(row, config.fd_check));
        return out;
      },
      py::arg("config_text"), py::arg("overrides") = std::vector<std::string>{},
      py::arg("seed") = 0,
      "Train one seed in memory; returns the metrics rows as dicts.");
  m.def(
      "run_metrics_csv",
      [](const std::string& config_text,
         const std::vector<std::string>& overrides, int seed) {
        const ExperimentConfig config = config_from_text(config_text, overrides);
        return metrics_csv(run_rows(config, seed), config.fd_check);
      },
      py::arg("config_text"), py::arg("overrides") = std::vector<std::string>{},
      py::arg("seed") = 0,
      "Train one seed and return the deterministic metrics CSV.");
  m.def(
      "aggregate_csv",
      [](const std::string& config_text,
         const std::vector<std::string>& overrides,
         const std::vector<int>& seeds) {
        const ExperimentConfig config = config_from_text(config_text, overrides);
        std::vector<std::vector<MetricsRow>> runs;
        runs.reserve(seeds.size());
        for (int seed : seeds) runs.push_back(run_rows(config, seed));
        return write_csv(aggregate_runs(runs, config.fd_check));
      },
      py::arg("config_text"), py::arg("overrides") = std::vector<std::string>{},
      py::arg("seeds") = std::vector<int>{0},
      "Train several seeds and return the mean/std aggregate CSV.");
  m.def(
      "plot_svg",
      [](const std::string& aggregate_csv, const std::string& quantity) {
        return render_plot_svg(read_csv(aggregate_csv), quantity);
      },
      py::arg("aggregate_csv"), py::arg("quantity"),
      "Render an aggregate CSV column ('return', 'gamma', 'advantage_mean') "
      "as an SVG chart.");
  m.def(
      "check_meta_gradients",
      [](int draws, double epsilon, double tolerance, std::uint64_t seed) {
        const MetaGradCheck c =
            check_meta_gradients(draws, epsilon, tolerance, seed);
        py::dict d;
        d["draws"] = c.draws;
        d["failures"] = c.failures;
        d["worst_mg"] = c.worst_mg;
        d["worst_bmg"] = c.worst_bmg;
        return d;
      },
      py::arg("draws") = 100, py::arg("epsilon") = 1e-4,
      py::arg("tolerance") = 1e-5, py::arg("seed") = 2024,
      "Validate both analytic meta-gradients against finite differences on "
      "random discounting-chain cells.");
  m.def(
      "gamma_of_logit",
      [](double z, double lo, double hi) {
        const DualScalar g = gamma_of_logit(MetaParams{z, lo, hi});
        return py::make_tuple(g.v, g.t);
      },
      py::arg("z"), py::arg("lo") = 0.0, py::arg("hi") = 1.0,
      "Squash a logit into (lo, hi); returns (gamma, dgamma/dz).");
  m.def("logit_of_gamma", &logit_of_gamma, py::arg("gamma"), py::arg("lo") = 0.0,
        py::arg("hi") = 1.0, "Inverse of gamma_of_logit's value part.");
  m.def(
      "chain_value",
      [](int selected, int timestep, double gamma,
         const std::vector<double>& selection_probs) {
        if (selection_probs.size() !=
            static_cast<std::size_t>(DiscountingChain::kChains))
          throw ConfigError("selection_probs must have 5 entries");
        return DiscountingChain::analytic_value(selected, timestep, gamma,
                                                selection_probs.data());
      },
      py::arg("selected"), py::arg("timestep"), py::arg("gamma"),
      py::arg("selection_probs") = std::vector<double>(5, 0.2),
      "Exact discounted value of a chain state (selected = -1 before the "
      "first action, where the value averages over selection_probs).");

  m.attr("__version__") = "0.1.0";
}
