#pragma once

#include <cmath>

namespace trackgpt {

/// Latitude in [-90, 90], longitude in [-180, 180).
struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

/// Maps any finite longitude into [-180, 180).
inline double normalize_lon(double lon) {
  double r = std::fmod(lon + 180.0, 360.0);
  if (r < 0.0) r += 360.0;
  double out = r - 180.0;
  return out >= 180.0 ? out - 360.0 : out;
}

/// Signed shortest longitude difference b - a, in (-180, 180].
inline double lon_delta(double a, double b) {
  double d = std::fmod(b - a, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

inline bool is_valid(const GeoPoint& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
         p.lon >= -180.0 && p.lon < 180.0;
}

}  // namespace trackgpt
