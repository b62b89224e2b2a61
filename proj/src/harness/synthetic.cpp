#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "trackgpt/error.hpp"
#include "trackgpt/harness/pipeline.hpp"
#include "trackgpt/metrics.hpp"
#include "trackgpt/rng.hpp"

namespace trackgpt::harness {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

// Fixed equirectangular projection about a reference point. Straight lines
// in (x, y) stay straight in (lon, lat), which keeps constant-velocity tracks
// exactly linear in degree space.
struct LocalFrame {
  GeoPoint origin;
  double km_per_deg_lat = 0.0;
  double km_per_deg_lon = 0.0;

  explicit LocalFrame(const GeoPoint& o) : origin(o) {
    km_per_deg_lat = metrics::kEarthRadiusKm * kDegToRad;
    km_per_deg_lon = km_per_deg_lat * std::cos(o.lat * kDegToRad);
  }
  GeoPoint to_geo(double x, double y) const {
    return {origin.lat + y / km_per_deg_lat, normalize_lon(origin.lon + x / km_per_deg_lon)};
  }
  std::pair<double, double> to_xy(const GeoPoint& p) const {
    return {lon_delta(origin.lon, p.lon) * km_per_deg_lon, (p.lat - origin.lat) * km_per_deg_lat};
  }
};

struct Leg {
  double t = 0.0;  // seconds after track start
  double x = 0.0, y = 0.0;
};

}  // namespace

std::vector<trackprep::RawTrack> synth_fleet(const FleetSpec& spec) {
  if (spec.vessels < 0 || spec.stationary < 0) throw Error(ErrorCode::Config, "vessel counts must be non-negative");
  if (!(spec.aoi_km > 0.0) || !(spec.duration > 0.0) || !(spec.report_interval > 0.0)) {
    throw Error(ErrorCode::Config, "aoi_km, duration and report_interval must be positive");
  }
  if (!(spec.speed_min_kmh > 0.0) || spec.speed_max_kmh < spec.speed_min_kmh) {
    throw Error(ErrorCode::Config, "speed range is invalid");
  }
  if (spec.speed_max_kmh * spec.duration / 3600.0 > spec.aoi_km) {
    throw Error(ErrorCode::Config, "fastest vessel leaves the area within the track duration");
  }
  if (spec.turn_fraction < 0.0 || spec.turn_fraction > 1.0 || spec.turn_earliest > spec.turn_latest) {
    throw Error(ErrorCode::Config, "turn settings are invalid");
  }

  const LocalFrame frame(spec.center);
  const double half = 0.5 * spec.aoi_km;
  std::vector<trackprep::RawTrack> out;
  const int total = spec.vessels + spec.stationary;
  out.reserve(static_cast<std::size_t>(total));

  for (int v = 0; v < total; ++v) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(v)));
    char id[16];
    std::snprintf(id, sizeof id, "v%04d", v);
    trackprep::RawTrack track{id, {}};
    const double t0 = spec.t_start + std::floor(rng.uniform(0.0, 3600.0));

    if (v >= spec.vessels) {
      // Exact repeated fixes: the track never leaves its cell.
      const GeoPoint p = frame.to_geo(rng.uniform(-half, half), rng.uniform(-half, half));
      for (double t = 0.0; t <= spec.duration; t += spec.report_interval) track.obs.push_back({p, t0 + t});
      out.push_back(std::move(track));
      continue;
    }

    const double speed = rng.uniform(spec.speed_min_kmh, spec.speed_max_kmh) / 3600.0;  // km/s
    double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::vector<Leg> legs{{0.0, 0.0, 0.0}};
    if (rng.uniform() < spec.turn_fraction) {
      const double t_turn = rng.uniform(spec.turn_earliest, spec.turn_latest);
      const double angle = rng.uniform(spec.turn_min_deg, spec.turn_max_deg) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      legs.push_back({t_turn, speed * t_turn * std::cos(heading), speed * t_turn * std::sin(heading)});
      heading += angle * kDegToRad;
    }
    const Leg& last = legs.back();
    const double rest = spec.duration - last.t;
    legs.push_back({spec.duration, last.x + speed * rest * std::cos(heading), last.y + speed * rest * std::sin(heading)});

    // Place the noise-free path uniformly at random inside the square.
    double x_lo = 0.0, x_hi = 0.0, y_lo = 0.0, y_hi = 0.0;
    for (const auto& l : legs) {
      x_lo = std::min(x_lo, l.x), x_hi = std::max(x_hi, l.x);
      y_lo = std::min(y_lo, l.y), y_hi = std::max(y_hi, l.y);
    }
    const double ox = rng.uniform(-half - x_lo, half - x_hi);
    const double oy = rng.uniform(-half - y_lo, half - y_hi);

    auto position = [&](double t) {
      std::size_t i = 1;
      while (i + 1 < legs.size() && legs[i].t < t) ++i;
      const Leg& a = legs[i - 1];
      const Leg& b = legs[i];
      const double f = b.t > a.t ? (t - a.t) / (b.t - a.t) : 0.0;
      return std::pair{a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)};
    };

    double t = 0.0;
    while (t <= spec.duration) {
      auto [x, y] = position(t);
      x += ox + rng.normal(0.0, spec.noise_km);
      y += oy + rng.normal(0.0, spec.noise_km);
      track.obs.push_back({frame.to_geo(x, y), t0 + t});
      t += std::round(spec.report_interval * rng.uniform(0.75, 1.25));
    }
    out.push_back(std::move(track));
  }
  return out;
}

trackprep::RawTrack inject_turn(const trackprep::RawTrack& track, double t_turn, double angle_deg) {
  if (track.obs.size() < 2 || t_turn < track.obs.front().t || t_turn > track.obs.back().t) {
    throw Error(ErrorCode::Input, "turn time lies outside the track");
  }
  const GeoPoint pivot = trackprep::interpolate_at(track, t_turn);
  const LocalFrame frame(pivot);
  const double c = std::cos(angle_deg * kDegToRad), s = std::sin(angle_deg * kDegToRad);
  trackprep::RawTrack out = track;
  for (auto& o : out.obs) {
    if (o.t <= t_turn) continue;
    const auto [x, y] = frame.to_xy(o.point);
    const GeoPoint p = frame.to_geo(c * x - s * y, s * x + c * y);
    o.point = GeoPoint{std::clamp(p.lat, -90.0, 90.0), p.lon};
  }
  return out;
}

}  // namespace trackgpt::harness
