#pragma once

#include <span>
#include <string>

#include "gradnorm/trace_io.hpp"

namespace gradnorm {

enum class PlotKind { weights, losses, normalized };

/// Throws std::invalid_argument for anything other than weights|losses|normalized.
PlotKind parse_plot_kind(const std::string& name);

/// Line chart of one series per task against step.
///
/// weights: w_i. losses: test loss on a log axis. normalized: test loss over
/// its step-0 value. When `sigmas` has one entry per task the legend shows it.
/// Output depends only on the inputs. Rejects a trace with no rows.
std::string render_trace_svg(const TraceTable& trace, PlotKind kind,
                             std::span<const double> sigmas = {});

}  // namespace gradnorm
