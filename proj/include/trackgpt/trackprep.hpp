#pragma once

// Track grooming: blackout splitting, filtering, interpolation, uniform
// resampling, interval selection and tokenization.

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trackgpt/geo_point.hpp"
#include "trackgpt/geocodec.hpp"

namespace trackgpt::trackprep {

struct Observation {
  GeoPoint point;
  double t = 0.0;  // seconds since epoch
};

/// Observations strictly ascending in time.
struct RawTrack {
  std::string entity_id;
  std::vector<Observation> obs;

  double span() const { return obs.size() < 2 ? 0.0 : obs.back().t - obs.front().t; }
};

/// Points sampled at t0 + k * dt.
struct GroomedTrack {
  std::string entity_id;
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<GeoPoint> points;

  double span() const { return points.empty() ? 0.0 : static_cast<double>(points.size() - 1) * dt; }
  double time_at(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
};

struct TokenTrack {
  std::string entity_id;
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<geocodec::TokenId> tokens;
};

struct PrepConfig {
  double max_gap = 3600.0;
  double min_duration = 4.0 * 3600.0;
  double max_duration = 20.0 * 3600.0;
  std::optional<double> dt_override;

  void validate() const;

  friend bool operator==(const PrepConfig&, const PrepConfig&) = default;
};

/// Throws when timestamps are not strictly ascending or points are invalid.
void validate_track(const RawTrack& track);

std::vector<RawTrack> split_on_blackout(const RawTrack& track, double max_gap);

/// True when every observation resolves to the same full-depth cell.
bool is_stationary(const RawTrack& track, const geocodec::CodecConfig& codec);
bool is_stationary(const GroomedTrack& track, const geocodec::CodecConfig& codec);

/// Keeps tracks spanning at least `min_duration` with two or more points.
/// With a codec, stationary tracks are dropped as well.
std::vector<RawTrack> filter_tracks(std::vector<RawTrack> tracks, double min_duration,
                                    const geocodec::CodecConfig* codec = nullptr);
std::vector<GroomedTrack> filter_tracks(std::vector<GroomedTrack> tracks, double min_duration,
                                        const geocodec::CodecConfig* codec = nullptr);

/// Piecewise-linear position with shorter-arc longitude.
GeoPoint interpolate_at(const RawTrack& track, double t);

/// nullopt when the track spans less than one interval.
std::optional<GroomedTrack> resample(const RawTrack& track, double dt);

/// Smallest dt that fits every (capped) track span into one block.
double compute_dt_mc(std::span<const RawTrack> tracks, int block_size,
                     double span_cap = std::numeric_limits<double>::infinity());

struct DtSearch {
  double quantile = 0.99;
  double lower = 1.0;
  int iterations = 10;
};

/// Largest dt (bisection on [lower, longest span]) whose consecutive
/// full-depth hop distances have their `quantile` at most one.
double compute_dt_an(std::span<const RawTrack> tracks, const geocodec::CodecConfig& codec,
                     const DtSearch& search = {});

/// max(dt_an, dt_mc); warns when the block constraint breaks adjacency.
double choose_dt(double dt_an, double dt_mc);

std::vector<GroomedTrack> split_long(const GroomedTrack& track, double max_duration);

struct Tokenized {
  TokenTrack track;
  std::size_t transitions = 0;
  std::size_t jumps = 0;  // consecutive pairs with hop > 1

  double jump_fraction() const {
    return transitions == 0 ? 0.0 : static_cast<double>(jumps) / static_cast<double>(transitions);
  }
};

Tokenized tokenize(const GroomedTrack& track, const geocodec::CodecConfig& codec);

// ---------------------------------------------------------------------------
// Full grooming pipeline

struct PrepStats {
  std::size_t tracks_in = 0;
  std::size_t after_blackout_split = 0;
  std::size_t after_duration_filter = 0;
  std::size_t stationary_removed = 0;
  std::size_t uncovered_removed = 0;
  std::size_t resampled = 0;
  std::size_t segments = 0;
  std::size_t tracks_out = 0;
  std::size_t transitions = 0;
  std::size_t jumps = 0;
  double dt_an = 0.0;
  double dt_mc = 0.0;

  double jump_fraction() const {
    return transitions == 0 ? 0.0 : static_cast<double>(jumps) / static_cast<double>(transitions);
  }
};

struct GroomResult {
  geocodec::CodecConfig codec;
  double dt = 0.0;
  std::vector<GroomedTrack> groomed;
  std::vector<TokenTrack> tokens;
  PrepStats stats;
};

struct GroomOptions {
  int block_size = 128;
  /// When set, the codec is reused and uncovered tracks are dropped.
  std::optional<geocodec::CodecConfig> codec;
  DtSearch dt_search;
  /// Skip the max_duration split (evaluation keeps whole tracks).
  bool split_long_tracks = true;
};

/// Blackout split, duration filter, codec, stationary removal, dt,
/// resample, long-track split, final filter and tokenization. Output is
/// ordered by (entity_id, t0).
GroomResult groom(std::span<const RawTrack> tracks, const PrepConfig& config, const GroomOptions& options);

// ---------------------------------------------------------------------------
// Token corpus file: a header line with the codec and dt, then one track per
// line as space-separated decimal token values.

struct Corpus {
  geocodec::CodecConfig codec;
  double dt = 0.0;
  std::vector<TokenTrack> tracks;
};

void write_corpus(std::ostream& out, const Corpus& corpus);
Corpus read_corpus(std::istream& in);
void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

}  // namespace trackgpt::trackprep
