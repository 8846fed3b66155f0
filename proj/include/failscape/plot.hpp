#pragma once

#include <array>
#include <string>

#include <json.hpp>

namespace failscape {

// Colour for a mean reward within [lo, hi]: blue-violet at lo through green
// to yellow at hi, piecewise linear so yellowness is monotone in the mean.
std::array<int, 3> mean_color(double mean, double lo, double hi);

// Marker radius in pixels for a confidence: 3 + 2 * log10(1 + confidence),
// capped at 14. Monotone in confidence.
double confidence_radius(double confidence);

// Self-contained HTML page with an SVG scatter of a plot-data export
// (isometric projection of the first three coordinates; lower-rank spaces
// pad with zeros). Hover titles show the combo words, mean, confidence and n.
std::string render_plot_html(const nlohmann::json& plot_data, const std::string& title);

}  // namespace failscape
