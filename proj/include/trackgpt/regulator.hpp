#pragma once

// Hop-based truncation of generated token sequences and ensembling of the
// surviving samples into a mean route and a consensus destination.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trackgpt/geo_point.hpp"
#include "trackgpt/geocodec.hpp"
#include "trackgpt/gptcore.hpp"
#include "trackgpt/trackprep.hpp"

namespace trackgpt::regulator {

using geocodec::CellId;
using geocodec::TokenId;

struct RegulatorConfig {
  int max_hops = 3;
  int min_valid_steps = 0;

  void validate() const;
  /// min_valid_steps = ceil(25% of max_steps).
  static RegulatorConfig for_horizon(int max_hops, int max_steps);

  friend bool operator==(const RegulatorConfig&, const RegulatorConfig&) = default;
};

struct ForecastSample {
  std::vector<TokenId> tokens;
  std::vector<CellId> cells;  // decoded cells of the valid prefix
  std::optional<int> truncated_at;
  int valid_len = 0;
  bool discarded = false;  // valid_len < min_valid_steps
};

struct ConsensusDestination {
  CellId cell;  // coarsened cell
  GeoPoint point;
  int support = 0;
};

struct ForecastEnsemble {
  std::vector<ForecastSample> samples;
  std::vector<GeoPoint> mean_route;
  std::vector<int> route_support;  // samples averaged at each step
  std::optional<ConsensusDestination> consensus;
  std::vector<double> horizon_times;  // t_T + k dt, k = 1..horizon
  double dt = 0.0;
  std::vector<GeoPoint> prompt;  // prompt positions, for export only
  std::vector<double> prompt_times;
};

/// Decodes and scans the forecast, starting from the prompt's final cell;
/// stops at the first hop above max_hops or the first undecodable token.
ForecastSample regulate(std::span<const TokenId> tokens, const CellId& last_prompt_cell, const RegulatorConfig& cfg,
                        const geocodec::CodecConfig& codec);

struct EnsembleOptions {
  int consensus_coarsen_bits = 6;

  friend bool operator==(const EnsembleOptions&, const EnsembleOptions&) = default;
};

/// Throws a data error when every sample is discarded.
ForecastEnsemble ensemble(std::vector<ForecastSample> samples, const EnsembleOptions& options = {});

struct ForecastRequest {
  gptcore::SamplerConfig sampler;
  RegulatorConfig regulator;
  EnsembleOptions ensemble;
};

/// Tokenizes the prompt under the checkpoint codec, draws k_samples
/// continuations (stream k seeded from (sampler.seed, k)), regulates and
/// ensembles them.
ForecastEnsemble forecast(const gptcore::Checkpoint& ckpt, const trackprep::GroomedTrack& prompt,
                          const ForecastRequest& request);

struct Waypoint {
  int step = 0;  // 0-based horizon index
  double t = 0.0;
  GeoPoint point;
};

/// Every `stride`-th mean-route point (steps stride-1, 2*stride-1, ...).
std::vector<Waypoint> waypoints(const ForecastEnsemble& e, int stride = 6);

/// FeatureCollection: the prompt, one LineString per sample, the mean route
/// and the consensus destination.
nlohmann::json to_geojson(const ForecastEnsemble& e, const std::string& track_id = "");

}  // namespace trackgpt::regulator
