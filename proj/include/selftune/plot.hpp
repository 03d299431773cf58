#ifndef SELFTUNE_PLOT_HPP
#define SELFTUNE_PLOT_HPP

#include <string>

#include "selftune/runner.hpp"

namespace selftune {

// Renders one quantity of an aggregate table as a self-contained SVG line
// chart: mean curve plus a shaded one-standard-deviation band across
// seeds.  Quantities: "return", "gamma", "advantage_mean".  A table
// without the needed columns (or with no usable rows) raises SchemaError;
// an unknown quantity raises ConfigError.
std::string render_plot_svg(const CsvTable& aggregate,
                            const std::string& quantity);

// File-to-file convenience: read aggregate CSV, write the SVG.
void emit_plot(const std::string& aggregate_path, const std::string& quantity,
               const std::string& output_path);

}  // namespace selftune

#endif
