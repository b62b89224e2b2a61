#include "trackgpt/trackprep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

#include "trackgpt/error.hpp"
#include "trackgpt/kv_text.hpp"
#include "trackgpt/log.hpp"

namespace trackgpt::trackprep {

using geocodec::CodecConfig;

void PrepConfig::validate() const {
  if (!(max_gap > 0.0)) throw Error(ErrorCode::Config, "max_gap must be positive");
  if (!(min_duration < max_duration)) {
    throw Error(ErrorCode::Config, "min_duration must be below max_duration");
  }
  if (dt_override && !(*dt_override > 0.0)) throw Error(ErrorCode::Config, "dt must be positive");
}

void validate_track(const RawTrack& track) {
  for (std::size_t i = 0; i < track.obs.size(); ++i) {
    if (!std::isfinite(track.obs[i].t) || !is_valid(track.obs[i].point)) {
      throw Error(ErrorCode::Input, "track '" + track.entity_id + "': invalid observation");
    }
    if (i > 0 && !(track.obs[i].t > track.obs[i - 1].t)) {
      throw Error(ErrorCode::Input, "track '" + track.entity_id + "': timestamps not strictly ascending");
    }
  }
}

std::vector<RawTrack> split_on_blackout(const RawTrack& track, double max_gap) {
  std::vector<RawTrack> pieces;
  if (track.obs.empty()) return pieces;
  pieces.push_back(RawTrack{track.entity_id, {}});
  for (std::size_t i = 0; i < track.obs.size(); ++i) {
    if (i > 0 && track.obs[i].t - track.obs[i - 1].t > max_gap) {
      pieces.push_back(RawTrack{track.entity_id, {}});
    }
    pieces.back().obs.push_back(track.obs[i]);
  }
  return pieces;
}

bool is_stationary(const RawTrack& track, const CodecConfig& codec) {
  if (track.obs.empty()) return true;
  const int depth = codec.full_depth();
  const auto first = geocodec::encode_point(track.obs.front().point, depth);
  return std::all_of(track.obs.begin(), track.obs.end(), [&](const Observation& o) {
    return geocodec::encode_point(o.point, depth) == first;
  });
}

bool is_stationary(const GroomedTrack& track, const CodecConfig& codec) {
  if (track.points.empty()) return true;
  const int depth = codec.full_depth();
  const auto first = geocodec::encode_point(track.points.front(), depth);
  return std::all_of(track.points.begin(), track.points.end(), [&](const GeoPoint& p) {
    return geocodec::encode_point(p, depth) == first;
  });
}

std::vector<RawTrack> filter_tracks(std::vector<RawTrack> tracks, double min_duration,
                                    const CodecConfig* codec) {
  std::erase_if(tracks, [&](const RawTrack& t) {
    return t.obs.size() < 2 || t.span() < min_duration || (codec != nullptr && is_stationary(t, *codec));
  });
  return tracks;
}

std::vector<GroomedTrack> filter_tracks(std::vector<GroomedTrack> tracks, double min_duration,
                                        const CodecConfig* codec) {
  std::erase_if(tracks, [&](const GroomedTrack& t) {
    return t.points.size() < 2 || t.span() < min_duration ||
           (codec != nullptr && is_stationary(t, *codec));
  });
  return tracks;
}

namespace {

GeoPoint lerp(const GeoPoint& a, const GeoPoint& b, double f) {
  GeoPoint out;
  out.lat = a.lat + f * (b.lat - a.lat);
  out.lon = normalize_lon(a.lon + f * lon_delta(a.lon, b.lon));
  return out;
}

GeoPoint interpolate_segment(const Observation& a, const Observation& b, double t) {
  if (t == a.t) return a.point;
  if (t == b.t) return b.point;
  return lerp(a.point, b.point, (t - a.t) / (b.t - a.t));
}

}  // namespace

GeoPoint interpolate_at(const RawTrack& track, double t) {
  if (track.obs.empty() || t < track.obs.front().t || t > track.obs.back().t) {
    throw Error(ErrorCode::Input, "interpolation time outside track span");
  }
  if (track.obs.size() == 1) return track.obs.front().point;
  const auto it = std::upper_bound(track.obs.begin(), track.obs.end(), t,
                                   [](double v, const Observation& o) { return v < o.t; });
  if (it == track.obs.end()) return track.obs.back().point;
  const std::size_t hi = static_cast<std::size_t>(it - track.obs.begin());
  return interpolate_segment(track.obs[hi - 1], track.obs[hi], t);
}

std::optional<GroomedTrack> resample(const RawTrack& track, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::Input, "resample interval must be positive");
  if (track.obs.size() < 2) return std::nullopt;
  const double t0 = track.obs.front().t;
  const double t_end = track.obs.back().t;
  auto n = static_cast<long long>(std::floor((t_end - t0) / dt));
  while (t0 + static_cast<double>(n + 1) * dt <= t_end) ++n;
  while (n > 0 && t0 + static_cast<double>(n) * dt > t_end) --n;
  if (n < 1) return std::nullopt;

  GroomedTrack out{track.entity_id, t0, dt, {}};
  out.points.reserve(static_cast<std::size_t>(n) + 1);
  std::size_t seg = 0;
  for (long long k = 0; k <= n; ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    while (seg + 2 < track.obs.size() && track.obs[seg + 1].t < t) ++seg;
    out.points.push_back(interpolate_segment(track.obs[seg], track.obs[seg + 1], t));
  }
  return out;
}

double compute_dt_mc(std::span<const RawTrack> tracks, int block_size, double span_cap) {
  if (block_size < 2) throw Error(ErrorCode::Input, "block_size must be at least 2");
  if (tracks.empty()) throw Error(ErrorCode::Data, "dt_mc needs at least one track");
  double longest = 0.0;
  for (const auto& t : tracks) longest = std::max(longest, std::min(t.span(), span_cap));
  return longest / static_cast<double>(block_size - 1);
}

namespace {

bool adjacency_holds(std::span<const RawTrack> tracks, const CodecConfig& codec, double dt, double quantile) {
  std::vector<std::uint64_t> hops;
  const int depth = codec.full_depth();
  for (const auto& t : tracks) {
    const auto g = resample(t, dt);
    if (!g) continue;
    auto prev = geocodec::encode_point(g->points.front(), depth);
    for (std::size_t i = 1; i < g->points.size(); ++i) {
      const auto cur = geocodec::encode_point(g->points[i], depth);
      hops.push_back(geocodec::hop_distance(prev, cur));
      prev = cur;
    }
  }
  if (hops.empty()) return true;
  std::sort(hops.begin(), hops.end());
  // Nearest-rank quantile.
  auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(hops.size())));
  rank = std::clamp<std::size_t>(rank, 1, hops.size());
  return hops[rank - 1] <= 1;
}

}  // namespace

double compute_dt_an(std::span<const RawTrack> tracks, const CodecConfig& codec, const DtSearch& search) {
  if (tracks.empty()) throw Error(ErrorCode::Data, "dt_an needs at least one track");
  double hi = 0.0;
  for (const auto& t : tracks) hi = std::max(hi, t.span());
  double lo = search.lower;
  if (hi <= lo) return lo;
  if (adjacency_holds(tracks, codec, hi, search.quantile)) return hi;
  for (int i = 0; i < search.iterations; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (adjacency_holds(tracks, codec, mid, search.quantile)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

double choose_dt(double dt_an, double dt_mc) {
  if (!(dt_an > 0.0) || !(dt_mc > 0.0)) throw Error(ErrorCode::Input, "dt candidates must be positive");
  if (dt_mc > dt_an) {
    log::warn("dt_mc (" + format_double(dt_mc) + " s) exceeds dt_an (" + format_double(dt_an) +
              " s): consecutive samples may skip cells");
  }
  return std::max(dt_an, dt_mc);
}

std::vector<GroomedTrack> split_long(const GroomedTrack& track, double max_duration) {
  if (track.points.empty()) return {};
  const auto per_segment =
      static_cast<std::size_t>(std::floor(max_duration / track.dt * (1.0 + 1e-12))) + 1;
  std::vector<GroomedTrack> out;
  for (std::size_t start = 0; start < track.points.size(); start += per_segment) {
    const std::size_t end = std::min(track.points.size(), start + per_segment);
    GroomedTrack seg{track.entity_id, track.time_at(start), track.dt, {}};
    seg.points.assign(track.points.begin() + static_cast<std::ptrdiff_t>(start),
                      track.points.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(std::move(seg));
  }
  return out;
}

Tokenized tokenize(const GroomedTrack& track, const CodecConfig& codec) {
  Tokenized out;
  out.track = TokenTrack{track.entity_id, track.t0, track.dt, {}};
  out.track.tokens.reserve(track.points.size());
  std::optional<geocodec::CellId> prev;
  for (const auto& p : track.points) {
    out.track.tokens.push_back(geocodec::token_of(p, codec));
    const auto cell = geocodec::shifted_cell(p, codec);
    if (prev) {
      ++out.transitions;
      if (geocodec::hop_distance(*prev, cell) > 1) ++out.jumps;
    }
    prev = cell;
  }
  return out;
}

GroomResult groom(std::span<const RawTrack> tracks, const PrepConfig& config, const GroomOptions& options) {
  config.validate();
  GroomResult result;
  PrepStats& stats = result.stats;
  stats.tracks_in = tracks.size();

  std::vector<RawTrack> pieces;
  for (const auto& t : tracks) {
    validate_track(t);
    for (auto& p : split_on_blackout(t, config.max_gap)) pieces.push_back(std::move(p));
  }
  stats.after_blackout_split = pieces.size();
  pieces = filter_tracks(std::move(pieces), config.min_duration);
  stats.after_duration_filter = pieces.size();

  if (options.codec) {
    result.codec = *options.codec;
    const std::size_t before = pieces.size();
    std::erase_if(pieces, [&](const RawTrack& t) {
      try {
        for (const auto& o : t.obs) geocodec::token_of(o.point, result.codec);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::Coverage) return true;
        throw;
      }
      return false;
    });
    stats.uncovered_removed = before - pieces.size();
  } else {
    if (pieces.empty()) throw Error(ErrorCode::Data, "no tracks survive the duration filter");
    std::vector<GeoPoint> all;
    for (const auto& t : pieces) {
      for (const auto& o : t.obs) all.push_back(o.point);
    }
    result.codec = geocodec::derive_codec(all);
  }

  {
    const std::size_t before = pieces.size();
    std::erase_if(pieces, [&](const RawTrack& t) { return is_stationary(t, result.codec); });
    stats.stationary_removed = before - pieces.size();
  }

  if (config.dt_override) {
    result.dt = *config.dt_override;
  } else {
    if (pieces.empty()) throw Error(ErrorCode::Data, "no tracks left to derive dt from");
    stats.dt_an = compute_dt_an(pieces, result.codec, options.dt_search);
    stats.dt_mc = compute_dt_mc(pieces, options.block_size, config.max_duration);
    result.dt = choose_dt(stats.dt_an, stats.dt_mc);
  }

  std::vector<GroomedTrack> groomed;
  for (const auto& t : pieces) {
    auto g = resample(t, result.dt);
    if (!g) continue;
    ++stats.resampled;
    if (options.split_long_tracks) {
      for (auto& s : split_long(*g, config.max_duration)) groomed.push_back(std::move(s));
    } else {
      groomed.push_back(std::move(*g));
    }
  }
  stats.segments = groomed.size();
  groomed = filter_tracks(std::move(groomed), config.min_duration, &result.codec);
  std::stable_sort(groomed.begin(), groomed.end(), [](const GroomedTrack& a, const GroomedTrack& b) {
    return std::tie(a.entity_id, a.t0) < std::tie(b.entity_id, b.t0);
  });

  for (const auto& g : groomed) {
    auto tok = tokenize(g, result.codec);
    stats.transitions += tok.transitions;
    stats.jumps += tok.jumps;
    result.tokens.push_back(std::move(tok.track));
  }
  result.groomed = std::move(groomed);
  stats.tracks_out = result.groomed.size();
  return result;
}

// ---------------------------------------------------------------------------
// Corpus file

namespace {
constexpr std::string_view kCorpusMagic = "#trackgpt-corpus v1";
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  out << kCorpusMagic << "; " << corpus.codec.to_inline() << "; dt = " << format_double(corpus.dt) << '\n';
  for (const auto& t : corpus.tracks) {
    for (std::size_t i = 0; i < t.tokens.size(); ++i) {
      if (i > 0) out << ' ';
      out << t.tokens[i].value;
    }
    out << '\n';
  }
}

Corpus read_corpus(std::istream& in) {
  std::string header;
  if (!std::getline(in, header) || header.rfind(kCorpusMagic, 0) != 0) {
    throw Error(ErrorCode::Parse, "missing token corpus header");
  }
  std::string fields = header.substr(kCorpusMagic.size());
  std::replace(fields.begin(), fields.end(), ';', '\n');
  const KvRecord rec = KvRecord::parse(fields);
  Corpus corpus;
  corpus.codec = CodecConfig::parse_record(fields);
  corpus.dt = rec.get_double("dt");
  if (!(corpus.dt > 0.0)) throw Error(ErrorCode::Parse, "corpus dt must be positive");

  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    TokenTrack track;
    track.entity_id = "track-" + std::to_string(corpus.tracks.size());
    track.dt = corpus.dt;
    std::istringstream ls(line);
    std::string item;
    while (ls >> item) {
      std::size_t used = 0;
      unsigned long v = 0;
      try {
        v = std::stoul(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size() || v >= geocodec::kVocabSize) {
        throw Error(ErrorCode::Parse, "corpus line " + std::to_string(line_no) + ": bad token '" + item + "'");
      }
      track.tokens.push_back(geocodec::TokenId{static_cast<std::uint16_t>(v)});
    }
    corpus.tracks.push_back(std::move(track));
  }
  return corpus;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write corpus '" + path + "'");
  write_corpus(out, corpus);
  if (!out) throw Error(ErrorCode::Io, "failed writing corpus '" + path + "'");
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open corpus '" + path + "'");
  return read_corpus(in);
}

}  // namespace trackgpt::trackprep
