#include "selftune/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "selftune/errors.hpp"

namespace selftune {

namespace {

constexpr double kWidth = 960.0;
constexpr double kHeight = 540.0;
constexpr double kLeft = 72.0;
constexpr double kRight = 24.0;
constexpr double kTop = 44.0;
constexpr double kBottom = 56.0;

struct Series {
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> std;
};

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.5g", v);
  return buf;
}

std::string point_list(const std::vector<double>& xs,
                       const std::vector<double>& ys) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", xs[i], ys[i]);
    out += buf;
  }
  if (!out.empty()) out.pop_back();
  return out;
}

struct Quantity {
  const char* name;
  const char* column_base;
  const char* title;
};

constexpr Quantity kQuantities[] = {
    {"return", "mean_return", "Mean episode return"},
    {"gamma", "gamma", "Discount"},
    {"advantage_mean", "advantage_mean", "Outer advantage mean"},
};

const Quantity& quantity_of(const std::string& name) {
  for (const Quantity& q : kQuantities) {
    if (name == q.name) return q;
  }
  throw ConfigError("unknown plot quantity '" + name +
                    "' (expected return, gamma, or advantage_mean)");
}

}  // namespace

std::string render_plot_svg(const CsvTable& aggregate,
                            const std::string& quantity) {
  const Quantity& q = quantity_of(quantity);
  const int xcol = aggregate.column("meta_update");
  const int mcol = aggregate.column(std::string(q.column_base) + "_mean");
  const int scol = aggregate.column(std::string(q.column_base) + "_std");
  if (aggregate.rows.empty()) throw SchemaError("aggregate has no rows");

  Series s;
  for (const std::vector<double>& row : aggregate.rows) {
    const double x = row[static_cast<std::size_t>(xcol)];
    const double m = row[static_cast<std::size_t>(mcol)];
    const double sd = row[static_cast<std::size_t>(scol)];
    if (!std::isfinite(x) || !std::isfinite(m) || !std::isfinite(sd)) continue;
    s.x.push_back(x);
    s.mean.push_back(m);
    s.std.push_back(sd);
  }
  if (s.x.empty()) {
    throw SchemaError("aggregate has no finite rows for '" + quantity + "'");
  }

  double xmin = s.x.front(), xmax = s.x.front();
  double ymin = s.mean.front() - s.std.front();
  double ymax = s.mean.front() + s.std.front();
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    xmin = std::min(xmin, s.x[i]);
    xmax = std::max(xmax, s.x[i]);
    ymin = std::min(ymin, s.mean[i] - s.std[i]);
    ymax = std::max(ymax, s.mean[i] + s.std[i]);
  }
  if (xmax == xmin) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  const double ypad = (ymax == ymin) ? std::max(0.5, std::abs(ymax) * 0.1)
                                     : (ymax - ymin) * 0.06;
  ymin -= ypad;
  ymax += ypad;

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const auto sx = [&](double v) {
    return kLeft + (v - xmin) / (xmax - xmin) * plot_w;
  };
  const auto sy = [&](double v) {
    return kTop + (ymax - v) / (ymax - ymin) * plot_h;
  };

  std::vector<double> band_x, band_y;
  band_x.reserve(2 * s.x.size());
  band_y.reserve(2 * s.x.size());
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    band_x.push_back(sx(s.x[i]));
    band_y.push_back(sy(s.mean[i] + s.std[i]));
  }
  for (std::size_t i = s.x.size(); i-- > 0;) {
    band_x.push_back(sx(s.x[i]));
    band_y.push_back(sy(s.mean[i] - s.std[i]));
  }
  std::vector<double> line_x, line_y;
  line_x.reserve(s.x.size());
  line_y.reserve(s.x.size());
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    line_x.push_back(sx(s.x[i]));
    line_y.push_back(sy(s.mean[i]));
  }

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " "
      << kHeight << "\">\n";
  svg << "  <rect width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" fill=\"#ffffff\"/>\n";
  svg << "  <text x=\"" << kWidth / 2 << "\" y=\"26\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"17\" fill=\"#222\">"
      << q.title << "</text>\n";

  // gridlines and ticks
  const int ticks = 5;
  for (int i = 0; i <= ticks; ++i) {
    const double xv = xmin + (xmax - xmin) * i / ticks;
    const double yv = ymin + (ymax - ymin) * i / ticks;
    const double px = sx(xv);
    const double py = sy(yv);
    svg << "  <line x1=\"" << px << "\" y1=\"" << kTop << "\" x2=\"" << px
        << "\" y2=\"" << kTop + plot_h
        << "\" stroke=\"#e4e4e4\" stroke-width=\"1\"/>\n";
    svg << "  <line x1=\"" << kLeft << "\" y1=\"" << py << "\" x2=\""
        << kLeft + plot_w << "\" y2=\"" << py
        << "\" stroke=\"#e4e4e4\" stroke-width=\"1\"/>\n";
    svg << "  <text x=\"" << px << "\" y=\"" << kTop + plot_h + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"12\" fill=\"#444\">"
        << short_number(xv) << "</text>\n";
    svg << "  <text x=\"" << kLeft - 8 << "\" y=\"" << py + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"12\" fill=\"#444\">"
        << short_number(yv) << "</text>\n";
  }

  svg << "  <polygon points=\"" << point_list(band_x, band_y)
      << "\" fill=\"#4c78a8\" fill-opacity=\"0.22\" stroke=\"none\"/>\n";
  svg << "  <polyline points=\"" << point_list(line_x, line_y)
      << "\" fill=\"none\" stroke=\"#4c78a8\" stroke-width=\"2\"/>\n";

  // frame and axis labels
  svg << "  <rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w
      << "\" height=\"" << plot_h
      << "\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n";
  svg << "  <text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 14
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" fill=\"#222\">meta-update</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

void emit_plot(const std::string& aggregate_path, const std::string& quantity,
               const std::string& output_path) {
  std::ifstream in(aggregate_path, std::ios::binary);
  if (!in) throw StateError("cannot open aggregate '" + aggregate_path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string svg = render_plot_svg(read_csv(buf.str()), quantity);
  std::ofstream out(output_path, std::ios::binary);
  if (!out) throw StateError("cannot open '" + output_path + "' for writing");
  out << svg;
  if (!out) throw StateError("failed writing '" + output_path + "'");
}

}  // namespace selftune
