#pragma once

// Geodesic forecast errors, best-of-N track scoring and benchmark reports.

#include <iosfwd>
#include <string>
#include <vector>

#include "trackgpt/geo_point.hpp"
#include "trackgpt/geocodec.hpp"
#include "trackgpt/regulator.hpp"
#include "trackgpt/trackprep.hpp"

namespace trackgpt::metrics {

inline constexpr double kEarthRadiusKm = 6371.0088;
inline constexpr double kKmPerNauticalMile = 1.852;

enum class Units { Kilometers, NauticalMiles };

double from_km(double km, Units units);
double to_km(double value, Units units);
std::string units_label(Units units);  // "km" or "NM"
Units parse_units(const std::string& text);

/// Haversine great-circle distance in kilometers.
double geodesic_km(const GeoPoint& a, const GeoPoint& b);

/// 0 inside the closed cell box, otherwise the distance (km) to its nearest corner.
double cell_error_km(const GeoPoint& truth, const geocodec::CellId& predicted);

struct EvalConfig {
  int best_of_n = 16;
  std::vector<double> interval_marks;  // horizon offsets in seconds
  Units units = Units::Kilometers;
  int coarsen_bits = 0;               // score against coarser cells when > 0
  double full_length_margin = 0.10;   // truncated winners yield to full-length samples within this ADE margin

  void validate() const;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct IntervalError {
  double offset = 0.0;  // seconds after the prompt end
  double error = 0.0;   // NaN when the chosen sample does not reach it
};

struct TrackScore {
  std::string track_id;
  std::vector<double> per_step_error;  // chosen sample, valid steps only
  double ade = 0.0;
  double fde = 0.0;
  std::vector<IntervalError> interval_errors;
  int chosen_sample = -1;  // -1 when no sample produced a valid step
  int horizon = 0;
  double coverage = 0.0;  // valid steps of the chosen sample / horizon

  bool scored() const { return chosen_sample >= 0; }
};

/// Per-sample error sequence against time-aligned truth (valid steps only).
std::vector<double> sample_errors(const std::vector<GeoPoint>& truth, const regulator::ForecastSample& sample,
                                  const EvalConfig& cfg);

/// `truth` must start one dt after the prompt end and cover the horizon.
TrackScore score_track(const trackprep::GroomedTrack& truth, const regulator::ForecastEnsemble& ensemble,
                       const EvalConfig& cfg);

struct BenchmarkReport {
  std::string label;
  Units units = Units::Kilometers;
  std::size_t tracks = 0;
  std::size_t scored = 0;
  double mean_ade = 0.0;
  double mean_fde = 0.0;
  double mean_coverage = 0.0;
  std::vector<double> marks;
  std::vector<double> mark_error;  // mean over tracks reaching the mark; NaN if none
  std::vector<std::size_t> mark_count;
};

BenchmarkReport aggregate(const std::vector<TrackScore>& scores, const EvalConfig& cfg, const std::string& label = "");

/// Aligned text tables: a forecast-time error table and an ADE/FDE summary.
void write_report_text(std::ostream& out, const std::vector<BenchmarkReport>& reports);
/// One row per (track, interval mark); columns
/// track_id,ade,fde,interval_offset,interval_error,chosen_sample,coverage.
void write_report_csv(std::ostream& out, const std::vector<TrackScore>& scores);

}  // namespace trackgpt::metrics
