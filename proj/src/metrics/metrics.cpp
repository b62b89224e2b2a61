#include "trackgpt/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>

#include "trackgpt/error.hpp"
#include "trackgpt/kv_text.hpp"

namespace trackgpt::metrics {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

std::string fixed(double v, int digits = 3) {
  if (std::isnan(v)) return "-";
  std::array<char, 64> buf{};
  std::snprintf(buf.data(), buf.size(), "%.*f", digits, v);
  return buf.data();
}

std::string csv_number(double v) { return std::isnan(v) ? "" : format_double(v); }

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

}  // namespace

double from_km(double km, Units units) { return units == Units::NauticalMiles ? km / kKmPerNauticalMile : km; }
double to_km(double value, Units units) { return units == Units::NauticalMiles ? value * kKmPerNauticalMile : value; }
std::string units_label(Units units) { return units == Units::NauticalMiles ? "NM" : "km"; }

Units parse_units(const std::string& text) {
  if (text == "km" || text == "kilometers") return Units::Kilometers;
  if (text == "NM" || text == "nm" || text == "nautical_miles") return Units::NauticalMiles;
  throw Error(ErrorCode::Config, "unknown distance units '" + text + "' (expected km or NM)");
}

double geodesic_km(const GeoPoint& a, const GeoPoint& b) {
  const double dlat = radians(b.lat - a.lat);
  const double dlon = radians(b.lon - a.lon);
  const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(radians(a.lat)) * std::cos(radians(b.lat)) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

double cell_error_km(const GeoPoint& truth, const geocodec::CellId& predicted) {
  const geocodec::CellBBox box = geocodec::cell_bbox(predicted);
  if (box.contains_closed(truth)) return 0.0;
  const std::array<GeoPoint, 4> corners = {GeoPoint{box.lat_min, box.lon_min}, GeoPoint{box.lat_min, box.lon_max},
                                           GeoPoint{box.lat_max, box.lon_min}, GeoPoint{box.lat_max, box.lon_max}};
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : corners) best = std::min(best, geodesic_km(truth, c));
  return best;
}

void EvalConfig::validate() const {
  if (best_of_n < 1) throw Error(ErrorCode::Config, "best_of_n must be positive");
  if (coarsen_bits < 0) throw Error(ErrorCode::Config, "coarsen_bits must be non-negative");
  if (full_length_margin < 0.0) throw Error(ErrorCode::Config, "full_length_margin must be non-negative");
  for (double m : interval_marks) {
    if (!(m > 0.0)) throw Error(ErrorCode::Config, "interval marks must be positive offsets");
  }
}

std::vector<double> sample_errors(const std::vector<GeoPoint>& truth, const regulator::ForecastSample& sample,
                                  const EvalConfig& cfg) {
  std::vector<double> out;
  const std::size_t n = std::min(truth.size(), static_cast<std::size_t>(sample.valid_len));
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& cell = sample.cells[k];
    const auto scored = cfg.coarsen_bits > 0 ? cell.truncated(std::max(0, cell.depth() - cfg.coarsen_bits)) : cell;
    out.push_back(from_km(cell_error_km(truth[k], scored), cfg.units));
  }
  return out;
}

TrackScore score_track(const trackprep::GroomedTrack& truth, const regulator::ForecastEnsemble& ens,
                       const EvalConfig& cfg) {
  cfg.validate();
  int horizon = 0;
  for (const auto& s : ens.samples) horizon = std::max(horizon, static_cast<int>(s.tokens.size()));
  if (!ens.horizon_times.empty()) horizon = static_cast<int>(ens.horizon_times.size());
  if (truth.points.size() < static_cast<std::size_t>(horizon)) {
    throw Error(ErrorCode::Input, "truth covers " + std::to_string(truth.points.size()) + " of " +
                                      std::to_string(horizon) + " horizon steps");
  }
  if (!ens.horizon_times.empty()) {
    const double tol = 1e-6 * std::max(1.0, ens.dt);
    if (std::abs(truth.t0 - ens.horizon_times.front()) > tol || std::abs(truth.dt - ens.dt) > tol) {
      throw Error(ErrorCode::Input, "truth timestamps are not aligned with the forecast horizon");
    }
  }
  if (static_cast<int>(ens.samples.size()) < cfg.best_of_n) {
    throw Error(ErrorCode::Input, "ensemble has " + std::to_string(ens.samples.size()) +
                                      " samples, fewer than best_of_n = " + std::to_string(cfg.best_of_n));
  }

  TrackScore score;
  score.track_id = truth.entity_id;
  score.horizon = horizon;

  struct Candidate {
    int index;
    std::vector<double> errors;
    double ade;
    bool full;
  };
  auto collect = [&](bool include_discarded) {
    std::vector<Candidate> out;
    for (int i = 0; i < cfg.best_of_n; ++i) {
      const auto& s = ens.samples[static_cast<std::size_t>(i)];
      if (s.valid_len < 1 || (s.discarded && !include_discarded)) continue;
      auto errs = sample_errors(truth.points, s, cfg);
      double sum = 0.0;
      for (double e : errs) sum += e;
      const double ade = sum / static_cast<double>(errs.size());
      out.push_back({i, std::move(errs), ade, s.valid_len >= horizon});
    }
    return out;
  };
  auto candidates = collect(false);
  if (candidates.empty()) candidates = collect(true);
  if (candidates.empty()) {
    score.ade = score.fde = kNaN;
    for (double m : cfg.interval_marks) score.interval_errors.push_back({m, kNaN});
    return score;
  }

  auto argmin = [](const std::vector<Candidate>& cs, bool full_only) {
    const Candidate* best = nullptr;
    for (const auto& c : cs) {
      if (full_only && !c.full) continue;
      if (best == nullptr || c.ade < best->ade) best = &c;
    }
    return best;
  };
  const Candidate* chosen = argmin(candidates, false);
  if (!chosen->full) {
    const Candidate* full = argmin(candidates, true);
    if (full != nullptr && full->ade <= (1.0 + cfg.full_length_margin) * chosen->ade) chosen = full;
  }

  score.chosen_sample = chosen->index;
  score.per_step_error = chosen->errors;
  score.ade = chosen->ade;
  score.fde = chosen->errors.back();
  score.coverage = horizon == 0 ? 0.0 : static_cast<double>(chosen->errors.size()) / horizon;
  const double dt = ens.dt > 0.0 ? ens.dt : truth.dt;
  for (double m : cfg.interval_marks) {
    const long step = std::lround(m / dt) - 1;
    const bool covered = step >= 0 && static_cast<std::size_t>(step) < chosen->errors.size();
    score.interval_errors.push_back({m, covered ? chosen->errors[static_cast<std::size_t>(step)] : kNaN});
  }
  return score;
}

BenchmarkReport aggregate(const std::vector<TrackScore>& scores, const EvalConfig& cfg, const std::string& label) {
  BenchmarkReport r;
  r.label = label;
  r.units = cfg.units;
  r.tracks = scores.size();
  r.marks = cfg.interval_marks;
  r.mark_error.assign(r.marks.size(), 0.0);
  r.mark_count.assign(r.marks.size(), 0);
  for (const auto& s : scores) {
    if (!s.scored()) continue;
    ++r.scored;
    r.mean_ade += s.ade;
    r.mean_fde += s.fde;
    r.mean_coverage += s.coverage;
    for (std::size_t i = 0; i < r.marks.size() && i < s.interval_errors.size(); ++i) {
      if (std::isnan(s.interval_errors[i].error)) continue;
      r.mark_error[i] += s.interval_errors[i].error;
      ++r.mark_count[i];
    }
  }
  if (r.scored == 0) {
    r.mean_ade = r.mean_fde = r.mean_coverage = kNaN;
  } else {
    const auto n = static_cast<double>(r.scored);
    r.mean_ade /= n;
    r.mean_fde /= n;
    r.mean_coverage /= n;
  }
  for (std::size_t i = 0; i < r.marks.size(); ++i) {
    r.mark_error[i] = r.mark_count[i] == 0 ? kNaN : r.mark_error[i] / static_cast<double>(r.mark_count[i]);
  }
  return r;
}

void write_report_text(std::ostream& out, const std::vector<BenchmarkReport>& reports) {
  if (reports.empty()) return;
  const auto& first = reports.front();
  const std::string unit = units_label(first.units);
  constexpr std::size_t kCol = 16;

  if (!first.marks.empty()) {
    bool hours = true;
    for (double m : first.marks) hours = hours && std::fmod(m, 3600.0) == 0.0;
    out << "Forecast Error (" << unit << ")\n";
    out << pad(hours ? "Forecast Time (h)" : "Forecast Time (s)", 20);
    for (const auto& r : reports) out << pad(r.label, kCol);
    out << "\n";
    for (std::size_t i = 0; i < first.marks.size(); ++i) {
      const double m = first.marks[i];
      out << pad(hours ? fixed(m / 3600.0, 0) : fixed(m, 2), 20);
      for (const auto& r : reports) out << pad(i < r.mark_error.size() ? fixed(r.mark_error[i]) : "-", kCol);
      out << "\n";
    }
    out << "\n";
  }

  out << pad("Model", 20) << pad("ADE (" + unit + ")", kCol) << pad("FDE (" + unit + ")", kCol) << pad("Tracks", 10)
      << "Coverage\n";
  for (const auto& r : reports) {
    out << pad(r.label, 20) << pad(fixed(r.mean_ade), kCol) << pad(fixed(r.mean_fde), kCol)
        << pad(std::to_string(r.scored) + "/" + std::to_string(r.tracks), 10) << fixed(r.mean_coverage) << "\n";
  }
}

void write_report_csv(std::ostream& out, const std::vector<TrackScore>& scores) {
  out << "track_id,ade,fde,interval_offset,interval_error,chosen_sample,coverage\n";
  for (const auto& s : scores) {
    const std::string head = s.track_id + "," + csv_number(s.ade) + "," + csv_number(s.fde) + ",";
    const std::string tail = "," + std::to_string(s.chosen_sample) + "," + csv_number(s.coverage) + "\n";
    if (s.interval_errors.empty()) {
      out << head << "," << tail;
      continue;
    }
    for (const auto& ie : s.interval_errors) out << head << csv_number(ie.offset) << "," << csv_number(ie.error) << tail;
  }
}

}  // namespace trackgpt::metrics
