#include "failscape/plot.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "failscape/errors.hpp"

namespace failscape {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::array<int, 3> mean_color(double mean, double lo, double hi) {
  // Stops of a viridis-like ramp.
  static constexpr std::array<std::array<double, 3>, 3> kStops = {
      {{68, 1, 84}, {33, 145, 140}, {253, 231, 37}}};
  double t = hi > lo ? (mean - lo) / (hi - lo) : 1.0;
  t = std::clamp(t, 0.0, 1.0);
  const double pos = t * 2.0;
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(pos), 1);
  const double f = pos - static_cast<double>(i);
  std::array<int, 3> rgb{};
  for (std::size_t c = 0; c < 3; ++c) {
    rgb[c] = static_cast<int>(std::lround(kStops[i][c] + f * (kStops[i + 1][c] - kStops[i][c])));
  }
  return rgb;
}

double confidence_radius(double confidence) {
  return std::min(14.0, 3.0 + 2.0 * std::log10(1.0 + std::max(0.0, confidence)));
}

std::string render_plot_html(const nlohmann::json& plot, const std::string& title) {
  if (!plot.is_object() || !plot.contains("points")) {
    throw Error(ErrorCode::kInvalidArgument, "plot data needs a 'points' array");
  }
  const auto& points = plot.at("points");
  std::vector<std::string> axes;
  for (const auto& d : plot.value("dimensions", nlohmann::json::array())) {
    axes.push_back(d.is_string() ? d.get<std::string>() : d.value("name", std::string()));
  }
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& p : points) {
    const double m = p.at("mean").get<double>();
    lo = first ? m : std::min(lo, m);
    hi = first ? m : std::max(hi, m);
    first = false;
  }

  constexpr double kWidth = 900, kHeight = 640, kUnit = 40;
  auto coord = [](const nlohmann::json& p, std::size_t k) {
    const auto& c = p.at("coords");
    return k < c.size() ? c[k].get<double>() : 0.0;
  };
  // Isometric projection: x to the right-down, y to the left-down, z up.
  auto project = [&](double x, double y, double z) {
    const double sx = kWidth / 2 + (x - y) * kUnit * 0.866;
    const double sy = kHeight * 0.55 + (x + y) * kUnit * 0.5 - z * kUnit;
    return std::pair<double, double>{sx, sy};
  };

  // Draw far points first so near ones stay on top.
  std::vector<const nlohmann::json*> order;
  for (const auto& p : points) order.push_back(&p);
  std::stable_sort(order.begin(), order.end(), [&](const nlohmann::json* a, const nlohmann::json* b) {
    return coord(*a, 0) + coord(*a, 1) < coord(*b, 0) + coord(*b, 1);
  });

  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" << escape(title)
      << "</title>\n<style>body{font-family:sans-serif;margin:16px}svg{border:1px solid #ccc}"
         "</style></head><body>\n<h2>"
      << escape(title) << "</h2>\n<p>" << points.size()
      << " cells. Colour: mean reward (violet low, yellow high), range [" << lo << ", " << hi
      << "]. Size: confidence. Axes: ";
  for (std::size_t k = 0; k < axes.size(); ++k) out << (k ? ", " : "") << escape(axes[k]);
  out << ".</p>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\">\n";
  const auto o = project(0, 0, 0);
  const std::array<std::array<double, 3>, 3> dirs = {{{8, 0, 0}, {0, 8, 0}, {0, 0, 8}}};
  for (std::size_t k = 0; k < 3; ++k) {
    const auto e = project(dirs[k][0], dirs[k][1], dirs[k][2]);
    out << "<line x1=\"" << o.first << "\" y1=\"" << o.second << "\" x2=\"" << e.first << "\" y2=\""
        << e.second << "\" stroke=\"#999\"/>\n";
    if (k < axes.size()) {
      out << "<text x=\"" << e.first << "\" y=\"" << e.second << "\" font-size=\"12\">"
          << escape(axes[k]) << "</text>\n";
    }
  }
  for (const nlohmann::json* p : order) {
    const auto [sx, sy] = project(coord(*p, 0), coord(*p, 1), coord(*p, 2));
    const auto rgb = mean_color(p->at("mean").get<double>(), lo, hi);
    std::string words;
    for (const auto& w : p->value("words", nlohmann::json::array())) {
      words += (words.empty() ? "" : " / ") + w.get<std::string>();
    }
    out << "<circle cx=\"" << sx << "\" cy=\"" << sy << "\" r=\""
        << confidence_radius(p->value("confidence", 0.0)) << "\" fill=\"rgb(" << rgb[0] << ","
        << rgb[1] << "," << rgb[2] << ")\" fill-opacity=\"0.85\" stroke=\"#333\" stroke-width=\"0.5\">"
        << "<title>" << escape(words) << " | mean " << p->at("mean").get<double>() << " | confidence "
        << p->value("confidence", 0.0) << " | n " << p->value("count", 0) << "</title></circle>\n";
  }
  out << "</svg>\n</body></html>\n";
  return out.str();
}

}  // namespace failscape
