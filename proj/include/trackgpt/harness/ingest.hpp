#pragma once

// CSV ingestion for AIS/ADS-B-shaped position reports.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "trackgpt/geo_point.hpp"
#include "trackgpt/trackprep.hpp"

namespace trackgpt::harness {

enum class TimeFormat {
  Auto,     // decided by the first well-formed row
  Epoch,    // seconds since 1970-01-01 UTC
  Iso8601,  // 2024-03-01T12:00:00[.fff][Z|+hh:mm]
  Dma,      // 01/03/2024 12:00:00 (day first, UTC)
};

TimeFormat parse_time_format(const std::string& text);
std::string time_format_name(TimeFormat f);

/// Parses one timestamp in the given format; nullopt if it does not match.
std::optional<double> parse_timestamp(const std::string& text, TimeFormat format);
/// Detects the format of a single timestamp.
std::optional<TimeFormat> detect_time_format(const std::string& text);

struct GeoBox {
  double lat_min = -90.0, lat_max = 90.0, lon_min = -180.0, lon_max = 180.0;
  friend bool operator==(const GeoBox&, const GeoBox&) = default;
};

struct IngestSpec {
  std::string id_column = "id";
  std::string time_column = "t";
  std::string lat_column = "lat";
  std::string lon_column = "lon";
  std::string altitude_column;  // empty: no altitude
  TimeFormat time_format = TimeFormat::Auto;
  char delimiter = ',';
  std::optional<double> max_altitude;
  std::optional<GeoBox> aoi_box;
  std::optional<GeoPoint> aoi_center;
  double aoi_radius_km = 0.0;

  void validate() const;
  friend bool operator==(const IngestSpec&, const IngestSpec&) = default;
};

struct IngestStats {
  std::size_t rows = 0;
  std::size_t malformed = 0;
  std::size_t altitude_filtered = 0;
  std::size_t aoi_filtered = 0;
  std::size_t duplicates = 0;
  std::size_t kept = 0;
  std::size_t entities = 0;
};

struct IngestResult {
  std::vector<trackprep::RawTrack> tracks;  // ordered by entity id
  IngestStats stats;
};

/// Splits one CSV line, honoring double-quoted fields.
std::vector<std::string> split_csv_line(const std::string& line, char delimiter);

/// Malformed rows are skipped and counted; more than half malformed is a
/// data error, and mixed timestamp formats are an input error.
IngestResult ingest(std::istream& in, const IngestSpec& spec);
IngestResult ingest_file(const std::string& path, const IngestSpec& spec);

/// Writes "id,t,lat,lon" rows (epoch seconds), the default IngestSpec layout.
void write_tracks_csv(std::ostream& out, const std::vector<trackprep::RawTrack>& tracks);

}  // namespace trackgpt::harness
