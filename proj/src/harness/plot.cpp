#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "trackgpt/error.hpp"
#include "trackgpt/harness/pipeline.hpp"
#include "trackgpt/kv_text.hpp"

namespace trackgpt::harness {
namespace {

constexpr double kWidth = 800.0;
constexpr double kHeight = 600.0;
constexpr double kMargin = 40.0;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string svg_open() {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
         "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string color_for(const std::string& kind) {
  if (kind == "prompt") return "#1f77b4";
  if (kind == "sample") return "#bbbbbb";
  if (kind == "mean_route") return "#d62728";
  if (kind == "consensus_destination") return "#2ca02c";
  return "#555555";
}

struct Bounds {
  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  double y_min = x_min, y_max = -x_min;
  void add(double x, double y) {
    x_min = std::min(x_min, x), x_max = std::max(x_max, x);
    y_min = std::min(y_min, y), y_max = std::max(y_max, y);
  }
  bool empty() const { return !(x_min <= x_max); }
};

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::Parse, "plot: " + what); }

GeoPoint coord(const nlohmann::json& c) {
  if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number()) bad("coordinate is not [lon, lat]");
  return {c[1].get<double>(), c[0].get<double>()};
}

}  // namespace

std::string plot_geojson(const nlohmann::json& collection) {
  if (!collection.is_object() || collection.value("type", "") != "FeatureCollection" ||
      !collection.contains("features") || !collection["features"].is_array()) {
    bad("expected a GeoJSON FeatureCollection");
  }
  struct Shape {
    std::string kind;
    std::vector<GeoPoint> pts;
    bool point = false;
  };
  std::vector<Shape> shapes;
  for (const auto& f : collection["features"]) {
    if (!f.is_object() || !f.contains("geometry")) bad("feature without geometry");
    const auto& g = f["geometry"];
    if (g.is_null()) continue;
    if (!g.is_object() || !g.contains("coordinates")) bad("geometry without coordinates");
    Shape s;
    if (f.contains("properties") && f["properties"].is_object()) s.kind = f["properties"].value("kind", "");
    const std::string type = g.value("type", "");
    if (type == "LineString") {
      if (!g["coordinates"].is_array()) bad("LineString coordinates are not an array");
      for (const auto& c : g["coordinates"]) s.pts.push_back(coord(c));
    } else if (type == "Point") {
      s.pts.push_back(coord(g["coordinates"]));
      s.point = true;
    } else {
      bad("unsupported geometry type '" + type + "'");
    }
    shapes.push_back(std::move(s));
  }

  // Local equirectangular projection about the mean latitude.
  double lat_sum = 0.0, ref_lon = 0.0;
  std::size_t count = 0;
  for (const auto& s : shapes) {
    for (const auto& p : s.pts) {
      if (count == 0) ref_lon = p.lon;
      lat_sum += p.lat;
      ++count;
    }
  }
  const double kx = count ? std::cos(lat_sum / count * std::numbers::pi / 180.0) : 1.0;
  auto project = [&](const GeoPoint& p) { return std::pair{lon_delta(ref_lon, p.lon) * kx, p.lat}; };
  Bounds b;
  for (const auto& s : shapes) {
    for (const auto& p : s.pts) {
      const auto [x, y] = project(p);
      b.add(x, y);
    }
  }
  const double span = b.empty() ? 1.0 : std::max({b.x_max - b.x_min, b.y_max - b.y_min, 1e-9});
  const double scale = std::min(kWidth, kHeight) - 2.0 * kMargin;
  auto to_svg = [&](const GeoPoint& p) {
    const auto [x, y] = project(p);
    return std::pair{kMargin + (x - b.x_min) / span * scale, kHeight - kMargin - (y - b.y_min) / span * scale};
  };

  std::string out = svg_open();
  for (const auto& s : shapes) {
    const std::string color = color_for(s.kind);
    if (s.point) {
      const auto [x, y] = to_svg(s.pts.front());
      out += "<circle class=\"" + s.kind + "\" cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"5\" fill=\"" + color +
             "\"/>\n";
      continue;
    }
    out += "<polyline class=\"" + s.kind + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"" +
           (s.kind == "sample" ? "1" : "2") + "\" points=\"";
    for (std::size_t i = 0; i < s.pts.size(); ++i) {
      const auto [x, y] = to_svg(s.pts[i]);
      out += (i ? " " : "") + num(x) + "," + num(y);
    }
    out += "\"/>\n";
  }
  return out + "</svg>\n";
}

std::string plot_report_csv(std::istream& csv) {
  std::string line;
  if (!std::getline(csv, line)) bad("empty report");
  const auto header = split_csv_line(line, ',');
  auto column = [&](const std::string& name) {
    const auto it = std::find_if(header.begin(), header.end(), [&](const std::string& h) { return trim(h) == name; });
    if (it == header.end()) bad("report has no '" + name + "' column");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_off = column("interval_offset"), c_err = column("interval_error");

  std::map<double, std::pair<double, int>> curve;  // offset -> (sum, count)
  while (std::getline(csv, line)) {
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line, ',');
    if (f.size() < header.size()) bad("short report row");
    const std::string off = trim(f[c_off]), err = trim(f[c_err]);
    if (off.empty()) continue;
    try {
      auto& slot = curve[std::stod(off)];
      if (!err.empty()) {
        slot.first += std::stod(err);
        ++slot.second;
      }
    } catch (const std::logic_error&) {
      bad("non-numeric value in report row");
    }
  }

  std::vector<std::pair<double, double>> pts;
  double y_max = 0.0;
  for (const auto& [off, acc] : curve) {
    if (acc.second == 0) continue;
    pts.emplace_back(off, acc.first / acc.second);
    y_max = std::max(y_max, pts.back().second);
  }
  const double x_lo = curve.empty() ? 0.0 : curve.begin()->first;
  const double x_hi = curve.empty() ? 1.0 : std::max(curve.rbegin()->first, x_lo + 1e-9);
  const double y_hi = y_max > 0.0 ? y_max : 1.0;
  auto sx = [&](double x) { return kMargin + (x - x_lo) / (x_hi - x_lo) * (kWidth - 2.0 * kMargin); };
  auto sy = [&](double y) { return kHeight - kMargin - y / y_hi * (kHeight - 2.0 * kMargin); };

  std::string out = svg_open();
  out += "<line class=\"axis\" x1=\"" + num(kMargin) + "\" y1=\"" + num(kHeight - kMargin) + "\" x2=\"" +
         num(kWidth - kMargin) + "\" y2=\"" + num(kHeight - kMargin) + "\" stroke=\"black\"/>\n";
  out += "<line class=\"axis\" x1=\"" + num(kMargin) + "\" y1=\"" + num(kMargin) + "\" x2=\"" + num(kMargin) +
         "\" y2=\"" + num(kHeight - kMargin) + "\" stroke=\"black\"/>\n";
  for (const auto& [off, acc] : curve) {
    out += "<text class=\"xtick\" data-offset=\"" + format_double(off) + "\" x=\"" + num(sx(off)) + "\" y=\"" +
           num(kHeight - kMargin + 16.0) + "\" font-size=\"10\" text-anchor=\"middle\">" + format_double(off) +
           "</text>\n";
  }
  out += "<text class=\"ylabel\" x=\"4\" y=\"" + num(kMargin - 8.0) + "\" font-size=\"10\">max " + num(y_max) +
         "</text>\n";
  if (!pts.empty()) {
    out += "<polyline class=\"error_curve\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) out += (i ? " " : "") + num(sx(pts[i].first)) + "," + num(sy(pts[i].second));
    out += "\"/>\n";
  }
  return out + "</svg>\n";
}

std::string run_plot(const std::string& input_path) {
  std::ifstream in(input_path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + input_path + "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      bad(std::string("invalid JSON: ") + e.what());
    }
    return plot_geojson(doc);
  }
  std::istringstream csv(text);
  return plot_report_csv(csv);
}

}  // namespace trackgpt::harness
