#pragma once

// Benchmark protocols and the per-run configuration file.
//
// Both use the sectioned "key = value" text format. A protocol names a
// built-in base ("dma-ais" or "trajair-adsb") and overrides individual keys;
// a run config adds ingest, model and training sections on top.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trackgpt/gptcore.hpp"
#include "trackgpt/harness/ingest.hpp"
#include "trackgpt/kv_text.hpp"
#include "trackgpt/metrics.hpp"
#include "trackgpt/regulator.hpp"
#include "trackgpt/trackprep.hpp"

namespace trackgpt::harness {

struct ProtocolSpec {
  std::string name;
  trackprep::PrepConfig prep;  // prep.dt_override empty means "derive"
  double prompt_duration = 0.0;   // seconds of track fed as the prompt
  double horizon_duration = 0.0;  // seconds forecast after the prompt
  double geohash_chars = 3.5;     // token resolution in characters beyond the prefix (informational)
  int max_hops = 3;
  std::optional<int> min_valid_steps;  // empty: 25% of the horizon
  double temperature = 0.92;
  int k_samples = 16;
  std::uint64_t sampler_seed = 0;
  int consensus_coarsen_bits = 6;
  metrics::EvalConfig eval;

  void validate() const;

  /// Prompt length in points (prompt_duration / dt + 1).
  int prompt_points(double dt) const;
  /// Horizon length in steps (horizon_duration / dt).
  int horizon_steps(double dt) const;

  gptcore::SamplerConfig sampler(double dt) const;
  regulator::RegulatorConfig regulator(double dt) const;
  regulator::ForecastRequest request(double dt) const;

  std::string to_text() const;
  /// Starts from the built-in named by "name" (default dma-ais) and applies
  /// every other key present.
  static ProtocolSpec parse(std::string_view text);
  static ProtocolSpec from_record(const KvRecord& rec);
  /// Applies keys from the [prep], [forecast] and [eval] sections.
  void apply(const KvRecord& rec);

  static ProtocolSpec builtin(const std::string& name);
  static std::vector<std::string> builtin_names();

  friend bool operator==(const ProtocolSpec&, const ProtocolSpec&) = default;
};

struct RunConfig {
  ProtocolSpec protocol = ProtocolSpec::builtin("dma-ais");
  IngestSpec ingest;
  gptcore::ModelConfig model;
  gptcore::TrainParams train;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t seed = 1337;
  int threads = 0;  // 0: hardware concurrency
  bool deterministic = false;

  /// Propagates `seed` to model init, batch sampling and forecasting.
  void set_seed(std::uint64_t s);
  static RunConfig from_record(const KvRecord& rec);
  static RunConfig load(const std::string& path);
};

std::vector<double> parse_number_list(const std::string& text);
std::string format_number_list(const std::vector<double>& values);

}  // namespace trackgpt::harness
