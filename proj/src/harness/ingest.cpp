#include "trackgpt/harness/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include "trackgpt/error.hpp"
#include "trackgpt/kv_text.hpp"
#include "trackgpt/log.hpp"
#include "trackgpt/metrics.hpp"

namespace trackgpt::harness {
namespace {

std::optional<double> parse_number(std::string_view s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

std::optional<int> fixed_int(std::string_view s, std::size_t pos, std::size_t len) {
  if (pos + len > s.size()) return std::nullopt;
  const std::string_view part = s.substr(pos, len);
  if (!all_digits(part)) return std::nullopt;
  int v = 0;
  std::from_chars(part.data(), part.data() + part.size(), v);
  return v;
}

std::optional<double> civil_to_epoch(int y, int mo, int d, int h, int mi, double sec) {
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec < 0.0 || sec >= 61.0) return std::nullopt;
  const auto days = sys_days(ymd).time_since_epoch().count();
  return static_cast<double>(days) * 86400.0 + h * 3600.0 + mi * 60.0 + sec;
}

/// "HH:MM:SS[.fff]" starting at pos; returns seconds-of-day parts and end position.
std::optional<std::tuple<int, int, double, std::size_t>> parse_clock(std::string_view s, std::size_t pos) {
  const auto h = fixed_int(s, pos, 2);
  const auto mi = fixed_int(s, pos + 3, 2);
  const auto se = fixed_int(s, pos + 6, 2);
  if (!h || !mi || !se || s[pos + 2] != ':' || s[pos + 5] != ':') return std::nullopt;
  std::size_t end = pos + 8;
  double sec = *se;
  if (end < s.size() && s[end] == '.') {
    std::size_t k = end + 1;
    while (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) ++k;
    if (k == end + 1) return std::nullopt;
    sec += std::stod("0" + std::string(s.substr(end, k - end)));
    end = k;
  }
  return std::make_tuple(*h, *mi, sec, end);
}

std::optional<double> parse_iso(std::string_view s) {
  // YYYY-MM-DD[T ]HH:MM:SS[.fff][Z|+hh:mm|-hh:mm]
  if (s.size() < 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ')) return std::nullopt;
  const auto y = fixed_int(s, 0, 4), mo = fixed_int(s, 5, 2), d = fixed_int(s, 8, 2);
  if (!y || !mo || !d) return std::nullopt;
  const auto clock = parse_clock(s, 11);
  if (!clock) return std::nullopt;
  auto [h, mi, sec, end] = *clock;
  double offset = 0.0;
  if (end < s.size()) {
    if (s[end] == 'Z' && end + 1 == s.size()) {
      end += 1;
    } else if ((s[end] == '+' || s[end] == '-') && s.size() == end + 6 && s[end + 3] == ':') {
      const auto oh = fixed_int(s, end + 1, 2), om = fixed_int(s, end + 4, 2);
      if (!oh || !om) return std::nullopt;
      offset = (s[end] == '+' ? 1.0 : -1.0) * (*oh * 3600.0 + *om * 60.0);
      end = s.size();
    } else {
      return std::nullopt;
    }
  }
  const auto t = civil_to_epoch(*y, *mo, *d, h, mi, sec);
  if (!t) return std::nullopt;
  return *t - offset;
}

std::optional<double> parse_dma(std::string_view s) {
  // DD/MM/YYYY HH:MM:SS[.fff]
  if (s.size() < 19 || s[2] != '/' || s[5] != '/' || s[10] != ' ') return std::nullopt;
  const auto d = fixed_int(s, 0, 2), mo = fixed_int(s, 3, 2), y = fixed_int(s, 6, 4);
  if (!d || !mo || !y) return std::nullopt;
  const auto clock = parse_clock(s, 11);
  if (!clock) return std::nullopt;
  const auto [h, mi, sec, end] = *clock;
  if (end != s.size()) return std::nullopt;
  return civil_to_epoch(*y, *mo, *d, h, mi, sec);
}

}  // namespace

TimeFormat parse_time_format(const std::string& text) {
  if (text == "auto") return TimeFormat::Auto;
  if (text == "epoch") return TimeFormat::Epoch;
  if (text == "iso8601" || text == "iso") return TimeFormat::Iso8601;
  if (text == "dma") return TimeFormat::Dma;
  throw Error(ErrorCode::Config, "unknown time format '" + text + "' (auto, epoch, iso8601, dma)");
}

std::string time_format_name(TimeFormat f) {
  switch (f) {
    case TimeFormat::Auto: return "auto";
    case TimeFormat::Epoch: return "epoch";
    case TimeFormat::Iso8601: return "iso8601";
    case TimeFormat::Dma: return "dma";
  }
  return "auto";
}

std::optional<double> parse_timestamp(const std::string& text, TimeFormat format) {
  const std::string s = trim(text);
  switch (format) {
    case TimeFormat::Epoch: return parse_number(s);
    case TimeFormat::Iso8601: return parse_iso(s);
    case TimeFormat::Dma: return parse_dma(s);
    case TimeFormat::Auto: {
      const auto f = detect_time_format(s);
      return f ? parse_timestamp(s, *f) : std::nullopt;
    }
  }
  return std::nullopt;
}

std::optional<TimeFormat> detect_time_format(const std::string& text) {
  const std::string s = trim(text);
  if (parse_number(s)) return TimeFormat::Epoch;
  if (parse_iso(s)) return TimeFormat::Iso8601;
  if (parse_dma(s)) return TimeFormat::Dma;
  return std::nullopt;
}

void IngestSpec::validate() const {
  if (id_column.empty() || time_column.empty() || lat_column.empty() || lon_column.empty()) {
    throw Error(ErrorCode::Config, "id, time, lat and lon columns must be named");
  }
  if (max_altitude && altitude_column.empty()) throw Error(ErrorCode::Config, "max_altitude needs altitude_column");
  if (aoi_center && !(aoi_radius_km > 0.0)) throw Error(ErrorCode::Config, "aoi_radius_km must be positive");
  if (aoi_box && !(aoi_box->lat_min < aoi_box->lat_max && aoi_box->lon_min < aoi_box->lon_max)) {
    throw Error(ErrorCode::Config, "aoi_box bounds are inverted");
  }
}

std::vector<std::string> split_csv_line(const std::string& line, char delimiter) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delimiter) {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

IngestResult ingest(std::istream& in, const IngestSpec& spec) {
  spec.validate();
  IngestResult result;
  auto& stats = result.stats;

  std::string line;
  if (!std::getline(in, line)) {
    log::warn("ingest: empty input");
    return result;
  }
  const auto header = split_csv_line(line, spec.delimiter);
  auto column = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (trim(header[i]) == name) return i;
    }
    throw Error(ErrorCode::Input, "column '" + name + "' not found in header");
  };
  const std::size_t c_id = column(spec.id_column), c_t = column(spec.time_column);
  const std::size_t c_lat = column(spec.lat_column), c_lon = column(spec.lon_column);
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  const std::size_t c_alt = spec.altitude_column.empty() ? kNone : column(spec.altitude_column);

  std::optional<TimeFormat> format;
  if (spec.time_format != TimeFormat::Auto) format = spec.time_format;

  struct Row {
    std::string id;
    trackprep::Observation obs;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++stats.rows;
    const auto f = split_csv_line(line, spec.delimiter);
    const std::size_t need = std::max({c_id, c_t, c_lat, c_lon, c_alt == kNone ? 0 : c_alt});
    if (f.size() <= need || trim(f[c_id]).empty()) {
      ++stats.malformed;
      continue;
    }
    const std::string ts = trim(f[c_t]);
    if (spec.time_format == TimeFormat::Auto) {
      const auto detected = detect_time_format(ts);
      if (detected && format && *detected != *format) {
        throw Error(ErrorCode::Input, "mixed timestamp formats: line " + std::to_string(line_no) + " is " +
                                          time_format_name(*detected) + ", earlier rows are " +
                                          time_format_name(*format));
      }
      if (detected && !format) format = detected;
    }
    const auto t = format ? parse_timestamp(ts, *format) : std::nullopt;
    const auto lat = parse_number(f[c_lat]);
    const auto lon = parse_number(f[c_lon]);
    if (!t || !lat || !lon || *lat < -90.0 || *lat > 90.0 || *lon < -180.0 || *lon > 180.0) {
      ++stats.malformed;
      continue;
    }
    if (c_alt != kNone) {
      const auto alt = parse_number(f[c_alt]);
      if (!alt) {
        ++stats.malformed;
        continue;
      }
      if (spec.max_altitude && *alt > *spec.max_altitude) {
        ++stats.altitude_filtered;
        continue;
      }
    }
    const GeoPoint p{*lat, normalize_lon(*lon)};
    if (spec.aoi_box && !(p.lat >= spec.aoi_box->lat_min && p.lat <= spec.aoi_box->lat_max &&
                          p.lon >= spec.aoi_box->lon_min && p.lon <= spec.aoi_box->lon_max)) {
      ++stats.aoi_filtered;
      continue;
    }
    if (spec.aoi_center && metrics::geodesic_km(*spec.aoi_center, p) > spec.aoi_radius_km) {
      ++stats.aoi_filtered;
      continue;
    }
    rows.push_back(Row{trim(f[c_id]), trackprep::Observation{p, *t}});
  }

  if (stats.rows > 0 && 2 * stats.malformed > stats.rows) {
    throw Error(ErrorCode::Data, std::to_string(stats.malformed) + " of " + std::to_string(stats.rows) +
                                     " rows are malformed (more than half)");
  }
  if (stats.malformed > 0) {
    log::warn("ingest: skipped " + std::to_string(stats.malformed) + " malformed of " + std::to_string(stats.rows) +
              " rows");
  }
  if (stats.rows == 0) log::warn("ingest: no data rows");

  // Group by entity (ordered by id), keep the first report per timestamp.
  std::map<std::string, std::vector<trackprep::Observation>> groups;
  std::map<std::string, std::set<double>> seen;
  for (auto& r : rows) {
    if (!seen[r.id].insert(r.obs.t).second) {
      ++stats.duplicates;
      continue;
    }
    groups[r.id].push_back(r.obs);
  }
  for (auto& [id, obs] : groups) {
    std::stable_sort(obs.begin(), obs.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    stats.kept += obs.size();
    result.tracks.push_back(trackprep::RawTrack{id, std::move(obs)});
  }
  stats.entities = result.tracks.size();
  return result;
}

IngestResult ingest_file(const std::string& path, const IngestSpec& spec) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  return ingest(in, spec);
}

void write_tracks_csv(std::ostream& out, const std::vector<trackprep::RawTrack>& tracks) {
  out << "id,t,lat,lon\n";
  for (const auto& tr : tracks) {
    for (const auto& o : tr.obs) {
      out << tr.entity_id << ',' << format_double(o.t) << ',' << format_double(o.point.lat) << ','
          << format_double(o.point.lon) << '\n';
    }
  }
}

}  // namespace trackgpt::harness
