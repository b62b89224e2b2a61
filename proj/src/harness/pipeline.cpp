#include "trackgpt/harness/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "trackgpt/error.hpp"
#include "trackgpt/log.hpp"

namespace trackgpt::harness {

int resolve_threads(int requested, bool deterministic) {
  if (deterministic) return 1;
  if (requested > 0) return requested;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n && !failed; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Prep

PrepOutput run_prep(const std::vector<trackprep::RawTrack>& tracks, const ProtocolSpec& protocol, int block_size) {
  protocol.validate();
  trackprep::GroomOptions options;
  options.block_size = block_size;
  auto groomed = trackprep::groom(tracks, protocol.prep, options);
  if (groomed.tokens.empty()) {
    throw Error(ErrorCode::Data, "no track survived grooming (" + std::to_string(tracks.size()) + " tracks in)");
  }
  PrepOutput out;
  out.corpus = trackprep::Corpus{groomed.codec, groomed.dt, std::move(groomed.tokens)};
  out.stats = groomed.stats;
  return out;
}

void print_prep_stats(std::ostream& out, const PrepOutput& prep) {
  const auto& s = prep.stats;
  std::size_t tokens = 0;
  for (const auto& t : prep.corpus.tracks) tokens += t.tokens.size();
  char jump[32];
  std::snprintf(jump, sizeof jump, "%.4f", s.jump_fraction());
  out << "tracks in:              " << s.tracks_in << "\n"
      << "after blackout split:   " << s.after_blackout_split << "\n"
      << "after duration filter:  " << s.after_duration_filter << "\n"
      << "stationary removed:     " << s.stationary_removed << "\n"
      << "uncovered removed:      " << s.uncovered_removed << "\n"
      << "resampled:              " << s.resampled << "\n"
      << "segments:               " << s.segments << "\n"
      << "tracks out:             " << s.tracks_out << "\n"
      << "tokens:                 " << tokens << "\n"
      << "hop>1 fraction:         " << jump << " (" << s.jumps << "/" << s.transitions << ")\n"
      << "dt_an / dt_mc / dt:     " << format_double(s.dt_an) << " / " << format_double(s.dt_mc) << " / "
      << format_double(prep.corpus.dt) << " s\n"
      << "codec prefix:           " << prep.corpus.codec.prefix.display() << " (shift " << prep.corpus.codec.shift_dx
      << ", " << prep.corpus.codec.shift_dy << ")\n";
}

// ---------------------------------------------------------------------------
// Train

gptcore::Checkpoint run_train(const trackprep::Corpus& corpus, const RunConfig& config,
                              const TrainRunOptions& options) {
  gptcore::Checkpoint ckpt;
  if (options.resume) {
    ckpt = *options.resume;
    if (!(ckpt.codec == corpus.codec) || ckpt.dt != corpus.dt) {
      throw Error(ErrorCode::Input, "resume checkpoint was trained on a corpus with a different codec or dt");
    }
    if (!(ckpt.config == config.model)) log::warn("resuming with the checkpoint's model config, not the run config");
  } else {
    ckpt = gptcore::init_model(config.model);
    ckpt.codec = corpus.codec;
    ckpt.dt = corpus.dt;
  }

  const std::int64_t total = config.train.steps;
  gptcore::TrainParams params = config.train;
  params.total_steps = config.train.steps;

  std::ofstream log_file;
  if (!options.log_path.empty()) {
    log_file.open(options.log_path, options.resume ? std::ios::app : std::ios::trunc);
    if (!log_file) throw Error(ErrorCode::Io, "cannot open '" + options.log_path + "'");
  }
  auto on_log = [&](const gptcore::TrainRecord& r) {
    char line[96];
    std::snprintf(line, sizeof line, "%" PRId64 " %.6f %.6g\n", r.step, r.loss, r.lr);
    if (log_file) log_file << line << std::flush;
    if (options.progress) *options.progress << "step " << line << std::flush;
  };

  const std::int64_t chunk = config.checkpoint_every > 0 ? config.checkpoint_every : std::max<std::int64_t>(1, total);
  while (ckpt.step < total) {
    const std::int64_t next = std::min(total, (ckpt.step / chunk + 1) * chunk);
    params.steps = static_cast<int>(next - ckpt.step);
    ckpt = gptcore::train(std::move(ckpt), corpus.tracks, params, on_log);
    if (!options.checkpoint_path.empty() && (config.checkpoint_every > 0 || ckpt.step == total)) {
      gptcore::save_checkpoint(options.checkpoint_path, ckpt);
    }
  }
  if (!options.checkpoint_path.empty() && total == 0) gptcore::save_checkpoint(options.checkpoint_path, ckpt);
  return ckpt;
}

// ---------------------------------------------------------------------------
// Forecast and evaluation

trackprep::GroomResult groom_for_checkpoint(const std::vector<trackprep::RawTrack>& tracks,
                                            const gptcore::Checkpoint& ckpt, const ProtocolSpec& protocol) {
  trackprep::PrepConfig prep = protocol.prep;
  prep.dt_override = ckpt.dt;
  prep.min_duration = 0.0;
  trackprep::GroomOptions options;
  options.block_size = ckpt.config.block_size;
  options.codec = ckpt.codec;
  options.split_long_tracks = false;
  return trackprep::groom(tracks, prep, options);
}

std::optional<PromptSplit> split_prompt(const trackprep::GroomedTrack& track, int prompt_points, int horizon_steps) {
  if (prompt_points < 1 || horizon_steps < 1) throw Error(ErrorCode::Config, "prompt and horizon must be positive");
  const auto p = static_cast<std::size_t>(prompt_points), h = static_cast<std::size_t>(horizon_steps);
  if (track.points.size() < p + h) return std::nullopt;
  PromptSplit out;
  out.prompt = trackprep::GroomedTrack{track.entity_id, track.t0, track.dt,
                                       {track.points.begin(), track.points.begin() + static_cast<std::ptrdiff_t>(p)}};
  out.truth = trackprep::GroomedTrack{
      track.entity_id, track.time_at(p), track.dt,
      {track.points.begin() + static_cast<std::ptrdiff_t>(p), track.points.begin() + static_cast<std::ptrdiff_t>(p + h)}};
  return out;
}

std::vector<GeoPoint> const_velocity_points(const trackprep::GroomedTrack& prompt, int horizon_steps) {
  if (prompt.points.size() < 2) throw Error(ErrorCode::Input, "constant-velocity baseline needs two prompt points");
  const std::size_t n = prompt.points.size();
  const std::size_t span = std::max<std::size_t>(1, (n - 1) / 4);
  const GeoPoint& a = prompt.points[n - 1 - span];
  const GeoPoint& b = prompt.points[n - 1];
  const double vlat = (b.lat - a.lat) / static_cast<double>(span);
  const double vlon = lon_delta(a.lon, b.lon) / static_cast<double>(span);
  std::vector<GeoPoint> out;
  out.reserve(static_cast<std::size_t>(std::max(0, horizon_steps)));
  for (int k = 1; k <= horizon_steps; ++k) {
    out.push_back(GeoPoint{std::clamp(b.lat + k * vlat, -90.0, 90.0), normalize_lon(b.lon + k * vlon)});
  }
  return out;
}

regulator::ForecastEnsemble baseline_const_velocity(const trackprep::GroomedTrack& prompt, int horizon_steps,
                                                    const geocodec::CodecConfig& codec) {
  const auto points = const_velocity_points(prompt, horizon_steps);
  regulator::ForecastSample s;
  const std::uint64_t mask = (std::uint64_t{1} << geocodec::kTokenBits) - 1;
  for (const auto& p : points) {
    s.cells.push_back(geocodec::encode_point(p, codec.full_depth()));
    s.tokens.push_back(
        geocodec::TokenId{static_cast<std::uint16_t>(geocodec::shifted_cell(p, codec).bits() & mask)});
  }
  s.valid_len = static_cast<int>(s.cells.size());
  regulator::ForecastEnsemble e = regulator::ensemble({std::move(s)}, {0});
  e.dt = prompt.dt;
  const double t_end = prompt.time_at(prompt.points.size() - 1);
  for (int k = 1; k <= horizon_steps; ++k) e.horizon_times.push_back(t_end + k * prompt.dt);
  e.prompt = prompt.points;
  for (std::size_t i = 0; i < prompt.points.size(); ++i) e.prompt_times.push_back(prompt.time_at(i));
  return e;
}

namespace {

/// Per-track sampler stream so results do not depend on scheduling.
regulator::ForecastRequest track_request(const ProtocolSpec& protocol, double dt, std::size_t index) {
  auto req = protocol.request(dt);
  req.sampler.seed = derive_seed(protocol.sampler_seed, index);
  return req;
}

std::string fixed(double v, int digits = 3) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

ForecastRun run_forecast(const gptcore::Checkpoint& ckpt, const std::vector<trackprep::RawTrack>& tracks,
                         const ProtocolSpec& protocol, int threads) {
  protocol.validate();
  const auto groomed = groom_for_checkpoint(tracks, ckpt, protocol);
  if (groomed.groomed.empty()) {
    throw Error(ErrorCode::Coverage, "no prompt track lies inside the checkpoint area (prefix '" +
                                         ckpt.codec.prefix.display() + "'); re-run prep on data covering it");
  }
  const int prompt_points = protocol.prompt_points(ckpt.dt);
  const std::size_t n = groomed.groomed.size();
  std::vector<std::optional<regulator::ForecastEnsemble>> results(n);
  std::vector<std::string> failures(n);
  parallel_for(n, threads, [&](std::size_t i) {
    trackprep::GroomedTrack prompt = groomed.groomed[i];
    if (prompt.points.size() > static_cast<std::size_t>(prompt_points)) prompt.points.resize(prompt_points);
    try {
      results[i] = regulator::forecast(ckpt, prompt, track_request(protocol, ckpt.dt, i));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Data) throw;
      failures[i] = e.what();
    }
  });

  ForecastRun run;
  run.geojson = {{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
  std::ostringstream summary;
  summary << "tracks: " << n << "  dt: " << format_double(ckpt.dt) << " s  horizon: " << protocol.horizon_steps(ckpt.dt)
          << " steps  samples: " << protocol.k_samples << "\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& id = groomed.groomed[i].entity_id;
    if (!results[i]) {
      summary << id << ": no forecast (" << failures[i] << ")\n";
      continue;
    }
    const auto& e = *results[i];
    auto features = regulator::to_geojson(e, id);
    for (auto& f : features["features"]) run.geojson["features"].push_back(std::move(f));
    int truncated = 0, discarded = 0;
    std::string lengths;
    for (const auto& s : e.samples) {
      truncated += s.truncated_at ? 1 : 0;
      discarded += s.discarded ? 1 : 0;
      lengths += (lengths.empty() ? "" : " ") + std::to_string(s.valid_len);
    }
    summary << id << ": valid [" << lengths << "] truncated " << truncated << " discarded " << discarded;
    if (e.consensus) {
      summary << " consensus " << e.consensus->cell.display() << " (" << fixed(e.consensus->point.lat, 5) << ", "
              << fixed(e.consensus->point.lon, 5) << ") support " << e.consensus->support;
    }
    summary << "\n";
    run.ensembles.push_back(e);
  }
  run.summary = summary.str();
  return run;
}

EvalRun run_eval(const gptcore::Checkpoint& ckpt, const std::vector<trackprep::RawTrack>& tracks,
                 const ProtocolSpec& protocol, int threads) {
  protocol.validate();
  const auto groomed = groom_for_checkpoint(tracks, ckpt, protocol);
  const int prompt_points = protocol.prompt_points(ckpt.dt);
  const int horizon = protocol.horizon_steps(ckpt.dt);

  EvalRun run;
  run.skipped_uncovered = groomed.stats.uncovered_removed;
  std::vector<PromptSplit> splits;
  for (const auto& t : groomed.groomed) {
    if (auto s = split_prompt(t, prompt_points, horizon)) {
      splits.push_back(std::move(*s));
    } else {
      ++run.skipped_short;
    }
  }
  if (run.skipped_short > 0) {
    log::warn("eval: skipped " + std::to_string(run.skipped_short) + " tracks shorter than prompt + horizon");
  }

  metrics::EvalConfig base_cfg = protocol.eval;
  base_cfg.best_of_n = 1;
  run.model_scores.resize(splits.size());
  run.baseline_scores.resize(splits.size());
  parallel_for(splits.size(), threads, [&](std::size_t i) {
    const auto& sp = splits[i];
    try {
      const auto e = regulator::forecast(ckpt, sp.prompt, track_request(protocol, ckpt.dt, i));
      run.model_scores[i] = metrics::score_track(sp.truth, e, protocol.eval);
    } catch (const Error& err) {
      if (err.code() != ErrorCode::Data) throw;
      auto& s = run.model_scores[i];
      s.track_id = sp.truth.entity_id;
      s.horizon = horizon;
      s.ade = s.fde = std::nan("");
    }
    const auto b = baseline_const_velocity(sp.prompt, horizon, ckpt.codec);
    run.baseline_scores[i] = metrics::score_track(sp.truth, b, base_cfg);
  });

  run.model_report = metrics::aggregate(run.model_scores, protocol.eval, "TrackGPT");
  run.baseline_report = metrics::aggregate(run.baseline_scores, base_cfg, "Const. Vel");
  std::ostringstream text;
  text << "protocol: " << protocol.name << "  tracks evaluated: " << splits.size()
       << "  skipped (short): " << run.skipped_short << "  skipped (uncovered): " << run.skipped_uncovered << "\n\n";
  metrics::write_report_text(text, {run.model_report, run.baseline_report});
  run.report_text = text.str();
  return run;
}

}  // namespace trackgpt::harness
