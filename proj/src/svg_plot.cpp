#include "gradnorm/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace gradnorm {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 440.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 170.0;
constexpr double kTop = 30.0;
constexpr double kBottom = 50.0;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fixed(double v, int digits = 2) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string tick_label(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

const char* title_for(PlotKind kind) {
  switch (kind) {
    case PlotKind::weights:
      return "Task weights";
    case PlotKind::losses:
      return "Test loss (log scale)";
    case PlotKind::normalized:
      return "Test loss / initial test loss";
  }
  return "";
}

}  // namespace

PlotKind parse_plot_kind(const std::string& name) {
  if (name == "weights") return PlotKind::weights;
  if (name == "losses") return PlotKind::losses;
  if (name == "normalized") return PlotKind::normalized;
  throw std::invalid_argument("unknown plot kind '" + name +
                              "' (expected weights|losses|normalized)");
}

std::string render_trace_svg(const TraceTable& trace, PlotKind kind,
                             std::span<const double> sigmas) {
  if (trace.rows.empty()) throw std::invalid_argument("trace has no rows to plot");
  const std::size_t n = trace.num_tasks;
  const bool log_axis = kind == PlotKind::losses;

  std::vector<std::vector<double>> series(n, std::vector<double>(trace.rows.size()));
  for (std::size_t r = 0; r < trace.rows.size(); ++r) {
    const auto& row = trace.rows[r];
    for (std::size_t t = 0; t < n; ++t) {
      double v = 0.0;
      switch (kind) {
        case PlotKind::weights:
          v = row.weights[t];
          break;
        case PlotKind::losses:
          v = row.test_losses[t];
          break;
        case PlotKind::normalized:
          v = row.test_losses[t] / trace.rows.front().test_losses[t];
          break;
      }
      if (log_axis) v = std::log10(std::max(v, 1e-300));
      series[t][r] = v;
    }
  }

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& s : series) {
    for (double v : s) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    const double pad = std::max(std::abs(lo) * 0.1, 0.5);
    lo -= pad;
    hi += pad;
  }
  const double x_lo = static_cast<double>(trace.rows.front().step);
  double x_hi = static_cast<double>(trace.rows.back().step);
  if (x_hi <= x_lo) x_hi = x_lo + 1.0;

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x_lo) / (x_hi - x_lo) * plot_w; };
  auto py = [&](double y) { return kTop + (hi - y) / (hi - lo) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(kWidth, 0)
      << "\" height=\"" << fixed(kHeight, 0) << "\" viewBox=\"0 0 " << fixed(kWidth, 0) << ' '
      << fixed(kHeight, 0) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << fixed(kLeft) << "\" y=\"18\" font-size=\"14\">" << title_for(kind)
      << "</text>\n";
  svg << "<rect x=\"" << fixed(kLeft) << "\" y=\"" << fixed(kTop) << "\" width=\"" << fixed(plot_w)
      << "\" height=\"" << fixed(plot_h) << "\" fill=\"none\" stroke=\"black\"/>\n";

  constexpr int kTicks = 5;
  for (int i = 0; i <= kTicks; ++i) {
    const double y = lo + (hi - lo) * i / kTicks;
    const double x = x_lo + (x_hi - x_lo) * i / kTicks;
    const double label = log_axis ? std::pow(10.0, y) : y;
    svg << "<line x1=\"" << fixed(kLeft - 4) << "\" y1=\"" << fixed(py(y)) << "\" x2=\""
        << fixed(kLeft) << "\" y2=\"" << fixed(py(y)) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << fixed(kLeft - 6) << "\" y=\"" << fixed(py(y) + 4)
        << "\" text-anchor=\"end\">" << tick_label(label) << "</text>\n";
    svg << "<line x1=\"" << fixed(px(x)) << "\" y1=\"" << fixed(kTop + plot_h) << "\" x2=\""
        << fixed(px(x)) << "\" y2=\"" << fixed(kTop + plot_h + 4) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << fixed(px(x)) << "\" y=\"" << fixed(kTop + plot_h + 18)
        << "\" text-anchor=\"middle\">" << tick_label(x) << "</text>\n";
  }
  svg << "<text x=\"" << fixed(kLeft + plot_w / 2) << "\" y=\"" << fixed(kHeight - 10)
      << "\" text-anchor=\"middle\">step</text>\n";

  for (std::size_t t = 0; t < n; ++t) {
    const char* color = kPalette[t % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t r = 0; r < trace.rows.size(); ++r) {
      const double v = series[t][r];
      if (!std::isfinite(v)) continue;
      if (!first) svg << ' ';
      first = false;
      svg << fixed(px(static_cast<double>(trace.rows[r].step))) << ',' << fixed(py(v));
    }
    svg << "\"/>\n";

    const double ly = kTop + 10 + 18.0 * static_cast<double>(t);
    const double lx = kWidth - kRight + 15;
    svg << "<line x1=\"" << fixed(lx) << "\" y1=\"" << fixed(ly) << "\" x2=\"" << fixed(lx + 20)
        << "\" y2=\"" << fixed(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << fixed(lx + 26) << "\" y=\"" << fixed(ly + 4) << "\">task " << t + 1;
    if (sigmas.size() == n) svg << " (sigma=" << tick_label(sigmas[t]) << ")";
    svg << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace gradnorm
