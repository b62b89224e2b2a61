#include "trackgpt/regulator.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "trackgpt/error.hpp"

namespace trackgpt::regulator {

void RegulatorConfig::validate() const {
  if (max_hops < 1) throw Error(ErrorCode::Config, "max_hops must be at least 1");
  if (min_valid_steps < 0) throw Error(ErrorCode::Config, "min_valid_steps must be non-negative");
}

RegulatorConfig RegulatorConfig::for_horizon(int max_hops, int max_steps) {
  return RegulatorConfig{max_hops, (std::max(max_steps, 0) + 3) / 4};
}

ForecastSample regulate(std::span<const TokenId> tokens, const CellId& last_prompt_cell, const RegulatorConfig& cfg,
                        const geocodec::CodecConfig& codec) {
  cfg.validate();
  if (last_prompt_cell.depth() != codec.full_depth()) {
    throw Error(ErrorCode::Input, "prompt cell depth does not match the codec");
  }
  ForecastSample s;
  s.tokens.assign(tokens.begin(), tokens.end());
  CellId prev = last_prompt_cell;
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const auto cell = geocodec::try_cell_of(tokens[k], codec);
    if (!cell || geocodec::hop_distance(prev, *cell) > static_cast<std::uint64_t>(cfg.max_hops)) {
      s.truncated_at = static_cast<int>(k);
      break;
    }
    s.cells.push_back(*cell);
    prev = *cell;
  }
  s.valid_len = static_cast<int>(s.cells.size());
  s.discarded = s.valid_len < cfg.min_valid_steps;
  return s;
}

ForecastEnsemble ensemble(std::vector<ForecastSample> samples, const EnsembleOptions& options) {
  if (options.consensus_coarsen_bits < 0) throw Error(ErrorCode::Config, "negative consensus coarsening");
  ForecastEnsemble e;
  e.samples = std::move(samples);

  std::vector<const ForecastSample*> kept;
  for (const auto& s : e.samples) {
    if (!s.discarded && s.valid_len > 0) kept.push_back(&s);
  }
  if (kept.empty()) throw Error(ErrorCode::Data, "empty ensemble: every forecast sample was discarded");

  int horizon = 0;
  for (const auto* s : kept) horizon = std::max(horizon, s->valid_len);
  for (int k = 0; k < horizon; ++k) {
    double lat = 0.0, dlon = 0.0, ref = 0.0;
    int n = 0;
    for (const auto* s : kept) {
      if (s->valid_len <= k) continue;
      const GeoPoint c = geocodec::cell_center(s->cells[static_cast<std::size_t>(k)]);
      if (n == 0) ref = c.lon;
      lat += c.lat;
      dlon += lon_delta(ref, c.lon);  // unwrapped around the first sample
      ++n;
    }
    e.mean_route.push_back(GeoPoint{lat / n, normalize_lon(ref + dlon / n)});
    e.route_support.push_back(n);
  }

  struct Vote {
    int count = 0;
    long long total_len = 0;
  };
  std::map<CellId, Vote> votes;
  for (const auto* s : kept) {
    const CellId& last = s->cells.back();
    const int depth = std::max(0, last.depth() - options.consensus_coarsen_bits);
    Vote& v = votes[last.truncated(depth)];
    ++v.count;
    v.total_len += s->valid_len;
  }
  // std::map iterates in ascending cell order, so strict comparisons keep
  // the lowest cell on a full tie.
  auto best = votes.begin();
  for (auto it = votes.begin(); it != votes.end(); ++it) {
    if (it->second.count > best->second.count ||
        (it->second.count == best->second.count && it->second.total_len > best->second.total_len)) {
      best = it;
    }
  }
  e.consensus = ConsensusDestination{best->first, geocodec::cell_center(best->first), best->second.count};
  return e;
}

ForecastEnsemble forecast(const gptcore::Checkpoint& ckpt, const trackprep::GroomedTrack& prompt,
                          const ForecastRequest& request) {
  request.sampler.validate();
  request.regulator.validate();
  if (prompt.points.empty()) throw Error(ErrorCode::Input, "empty prompt track");
  if (!(ckpt.dt > 0.0) || std::abs(prompt.dt - ckpt.dt) > 1e-9 * ckpt.dt) {
    throw Error(ErrorCode::Input, "prompt interval " + std::to_string(prompt.dt) + " s differs from checkpoint dt " +
                                      std::to_string(ckpt.dt) + " s");
  }
  std::vector<TokenId> tokens;
  tokens.reserve(prompt.points.size());
  for (const auto& p : prompt.points) {
    try {
      tokens.push_back(geocodec::token_of(p, ckpt.codec));
    } catch (const Error& err) {
      throw Error(ErrorCode::Coverage, std::string(err.what()) + "; the prompt lies outside the checkpoint area (prefix '" +
                                           ckpt.codec.prefix.display() + "'), re-run prep on data covering it");
    }
  }
  const std::size_t keep = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(ckpt.config.block_size));
  const std::span<const TokenId> context(tokens.data() + tokens.size() - keep, keep);

  std::vector<Rng> rngs;
  rngs.reserve(static_cast<std::size_t>(request.sampler.k_samples));
  for (int k = 0; k < request.sampler.k_samples; ++k) {
    rngs.emplace_back(derive_seed(request.sampler.seed, static_cast<std::uint64_t>(k)));
  }
  const auto generated = gptcore::generate_batch(ckpt, context, request.sampler, rngs);

  const CellId last_cell = geocodec::cell_of(tokens.back(), ckpt.codec);
  std::vector<ForecastSample> samples;
  samples.reserve(generated.size());
  for (const auto& g : generated) samples.push_back(regulate(g, last_cell, request.regulator, ckpt.codec));

  ForecastEnsemble e = ensemble(std::move(samples), request.ensemble);
  e.dt = prompt.dt;
  const double t_end = prompt.time_at(prompt.points.size() - 1);
  for (int k = 1; k <= request.sampler.max_steps; ++k) e.horizon_times.push_back(t_end + k * prompt.dt);
  e.prompt = prompt.points;
  for (std::size_t i = 0; i < prompt.points.size(); ++i) e.prompt_times.push_back(prompt.time_at(i));
  return e;
}

std::vector<Waypoint> waypoints(const ForecastEnsemble& e, int stride) {
  if (stride < 1) throw Error(ErrorCode::Config, "waypoint stride must be positive");
  std::vector<Waypoint> out;
  for (std::size_t k = static_cast<std::size_t>(stride) - 1; k < e.mean_route.size(); k += static_cast<std::size_t>(stride)) {
    const double t = k < e.horizon_times.size() ? e.horizon_times[k] : 0.0;
    out.push_back(Waypoint{static_cast<int>(k), t, e.mean_route[k]});
  }
  return out;
}

namespace {

nlohmann::json line_or_null(const std::vector<GeoPoint>& pts) {
  if (pts.size() < 2) return nullptr;
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& p : pts) coords.push_back({p.lon, p.lat});
  return {{"type", "LineString"}, {"coordinates", coords}};
}

nlohmann::json times_prefix(const std::vector<double>& times, std::size_t n) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < std::min(n, times.size()); ++i) out.push_back(times[i]);
  return out;
}

}  // namespace

nlohmann::json to_geojson(const ForecastEnsemble& e, const std::string& track_id) {
  nlohmann::json features = nlohmann::json::array();
  if (!e.prompt.empty()) {
    features.push_back({{"type", "Feature"},
                        {"geometry", line_or_null(e.prompt)},
                        {"properties", {{"kind", "prompt"}, {"track_id", track_id}, {"times", e.prompt_times}}}});
  }
  for (std::size_t i = 0; i < e.samples.size(); ++i) {
    const auto& s = e.samples[i];
    std::vector<GeoPoint> pts;
    for (const auto& c : s.cells) pts.push_back(geocodec::cell_center(c));
    nlohmann::json props = {{"kind", "sample"},
                            {"track_id", track_id},
                            {"sample", i},
                            {"valid_len", s.valid_len},
                            {"steps", s.tokens.size()},
                            {"truncated_at", s.truncated_at ? nlohmann::json(*s.truncated_at) : nlohmann::json()},
                            {"discarded", s.discarded},
                            {"times", times_prefix(e.horizon_times, pts.size())}};
    features.push_back({{"type", "Feature"}, {"geometry", line_or_null(pts)}, {"properties", props}});
  }
  features.push_back({{"type", "Feature"},
                      {"geometry", line_or_null(e.mean_route)},
                      {"properties",
                       {{"kind", "mean_route"},
                        {"track_id", track_id},
                        {"support", e.route_support},
                        {"times", times_prefix(e.horizon_times, e.mean_route.size())}}}});
  if (e.consensus) {
    const auto& c = *e.consensus;
    nlohmann::json props = {{"kind", "consensus_destination"},
                            {"track_id", track_id},
                            {"support", c.support},
                            {"cell", c.cell.display()}};
    if (!e.mean_route.empty() && e.mean_route.size() <= e.horizon_times.size()) {
      props["time"] = e.horizon_times[e.mean_route.size() - 1];
    }
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Point"}, {"coordinates", {c.point.lon, c.point.lat}}}},
                        {"properties", props}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

}  // namespace trackgpt::regulator
