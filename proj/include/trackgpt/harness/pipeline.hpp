#pragma once

// End-to-end drivers behind the CLI subcommands, plus the synthetic fleet
// generator and the constant-velocity baseline.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trackgpt/geocodec.hpp"
#include "trackgpt/gptcore.hpp"
#include "trackgpt/harness/protocol.hpp"
#include "trackgpt/metrics.hpp"
#include "trackgpt/regulator.hpp"
#include "trackgpt/trackprep.hpp"

namespace trackgpt::harness {

// ---------------------------------------------------------------------------
// Threading

/// 1 in deterministic mode, otherwise `requested` or the hardware count.
int resolve_threads(int requested, bool deterministic);

/// Runs fn(0..n-1) on up to `threads` workers. Each index is handled exactly
/// once; the first exception is rethrown after all workers stop.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

// ---------------------------------------------------------------------------
// Synthetic data

struct FleetSpec {
  GeoPoint center{50.625, 7.5};
  double aoi_km = 100.0;            // side of the square area tracks stay in
  int vessels = 500;
  double duration = 21.0 * 3600.0;  // seconds per track
  double report_interval = 300.0;   // mean seconds between reports (jittered +-25%)
  double speed_min_kmh = 2.5;
  double speed_max_kmh = 4.5;
  double noise_km = 0.05;           // isotropic position noise (1 sigma)
  double turn_fraction = 0.0;       // share of vessels with one heading change
  double turn_min_deg = 45.0;
  double turn_max_deg = 90.0;
  double turn_earliest = 5.0 * 3600.0;  // turn window, seconds after track start
  double turn_latest = 15.0 * 3600.0;
  int stationary = 0;               // extra vessels that never move
  double t_start = 1.7e9;
  std::uint64_t seed = 1;
};

/// Constant-velocity vessels with noisy reports, laid out so every track
/// stays inside the square area. Entity ids are "v0000", "v0001", ...
std::vector<trackprep::RawTrack> synth_fleet(const FleetSpec& spec);

/// Rotates all motion after `t_turn` by `angle_deg` (positive is
/// counter-clockwise) about the position at `t_turn`.
trackprep::RawTrack inject_turn(const trackprep::RawTrack& track, double t_turn, double angle_deg);

// ---------------------------------------------------------------------------
// Prep

struct PrepOutput {
  trackprep::Corpus corpus;
  trackprep::PrepStats stats;
};

/// Grooms with the protocol's prep settings; empty output is a data error.
PrepOutput run_prep(const std::vector<trackprep::RawTrack>& tracks, const ProtocolSpec& protocol, int block_size);
void print_prep_stats(std::ostream& out, const PrepOutput& prep);

// ---------------------------------------------------------------------------
// Train

struct TrainRunOptions {
  std::string checkpoint_path;   // written every checkpoint_every steps and at the end
  std::string log_path;          // "step loss lr" lines; truncated unless resuming
  std::optional<gptcore::Checkpoint> resume;
  std::ostream* progress = nullptr;
};

/// Trains until config.train.steps total steps (a resumed run continues
/// from its stored step with the same schedule).
gptcore::Checkpoint run_train(const trackprep::Corpus& corpus, const RunConfig& config, const TrainRunOptions& options);

// ---------------------------------------------------------------------------
// Forecast and evaluation

struct PromptSplit {
  trackprep::GroomedTrack prompt;
  trackprep::GroomedTrack truth;  // starts one dt after the prompt end
};

/// Grooms test tracks with the checkpoint codec and dt (no long-track
/// split). Uncovered tracks are dropped and counted in the stats.
trackprep::GroomResult groom_for_checkpoint(const std::vector<trackprep::RawTrack>& tracks,
                                            const gptcore::Checkpoint& ckpt, const ProtocolSpec& protocol);

/// nullopt when the track is shorter than prompt + horizon.
std::optional<PromptSplit> split_prompt(const trackprep::GroomedTrack& track, int prompt_points, int horizon_steps);

/// Linear extrapolation of the mean velocity over the prompt's last quarter.
std::vector<GeoPoint> const_velocity_points(const trackprep::GroomedTrack& prompt, int horizon_steps);
/// The extrapolation as a one-sample ensemble of full-depth cells.
regulator::ForecastEnsemble baseline_const_velocity(const trackprep::GroomedTrack& prompt, int horizon_steps,
                                                    const geocodec::CodecConfig& codec);

struct ForecastRun {
  nlohmann::json geojson;
  std::string summary;
  std::vector<regulator::ForecastEnsemble> ensembles;
};

/// Forecasts from the first prompt_points of each track (whole track if shorter).
ForecastRun run_forecast(const gptcore::Checkpoint& ckpt, const std::vector<trackprep::RawTrack>& tracks,
                         const ProtocolSpec& protocol, int threads);

struct EvalRun {
  std::vector<metrics::TrackScore> model_scores;
  std::vector<metrics::TrackScore> baseline_scores;
  metrics::BenchmarkReport model_report;
  metrics::BenchmarkReport baseline_report;
  std::size_t skipped_short = 0;
  std::size_t skipped_uncovered = 0;
  std::string report_text;
};

EvalRun run_eval(const gptcore::Checkpoint& ckpt, const std::vector<trackprep::RawTrack>& tracks,
                 const ProtocolSpec& protocol, int threads);

// ---------------------------------------------------------------------------
// Plot

/// Renders GeoJSON features as polylines/points in a local equirectangular
/// projection. Throws a parse error on malformed input.
std::string plot_geojson(const nlohmann::json& collection);
/// Renders mean interval error against horizon offset from a report CSV.
std::string plot_report_csv(std::istream& csv);
/// Chooses the renderer by content (a JSON object or a CSV header).
std::string run_plot(const std::string& input_path);

}  // namespace trackgpt::harness
