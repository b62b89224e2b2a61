#pragma once

// Geohash cells, grid geometry and the 16-bit token codec.
//
// Bits are stored most-significant first: bit 0 is the first longitude
// bisection, bit 1 the first latitude bisection, and so on. A token is the
// 16 bits that follow a fixed prefix; its integer value is read MSB-first, so
// the half-character refinement bit is the token's least significant bit.

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "trackgpt/geo_point.hpp"

namespace trackgpt::geocodec {

inline constexpr int kMaxDepth = 60;
inline constexpr int kTokenBits = 16;
inline constexpr std::uint32_t kVocabSize = 1u << kTokenBits;
inline constexpr std::string_view kBase32 = "0123456789bcdefghjkmnpqrstuvwxyz";

class CellId {
 public:
  CellId() = default;
  /// `bits` holds `depth` significant bits, right-aligned.
  CellId(std::uint64_t bits, int depth);

  static CellId root() { return {}; }
  /// Parses geohash characters and keeps the first `depth` bits
  /// (all of them when depth < 0).
  static CellId parse(std::string_view chars, int depth = -1);

  std::uint64_t bits() const noexcept { return bits_; }
  int depth() const noexcept { return depth_; }
  /// The i-th bit in sequence order (0 = most significant).
  bool bit(int i) const;

  CellId truncated(int depth) const;
  CellId child(bool bit) const;
  bool is_prefix_of(const CellId& other) const;

  /// Base-32 characters; a trailing partial group is zero-padded.
  std::string chars() const;
  /// Characters for whole groups, then "." and one half-cell letter per
  /// trailing bit (W/E for longitude bits, S/N for latitude bits).
  std::string display() const;

  friend auto operator<=>(const CellId&, const CellId&) = default;

 private:
  std::uint64_t bits_ = 0;
  int depth_ = 0;
};

struct CellBBox {
  double lat_min = -90.0;
  double lat_max = 90.0;
  double lon_min = -180.0;
  double lon_max = 180.0;

  /// Half-open on the upper edges (the encoding convention).
  bool contains(const GeoPoint& p) const {
    return p.lat >= lat_min && p.lon >= lon_min && p.lon < lon_max &&
           (p.lat < lat_max || (lat_max == 90.0 && p.lat == 90.0));
  }
  /// Closed on all edges (the evaluation convention).
  bool contains_closed(const GeoPoint& p) const {
    return p.lat >= lat_min && p.lat <= lat_max && p.lon >= lon_min && p.lon <= lon_max;
  }
  GeoPoint center() const { return {0.5 * (lat_min + lat_max), 0.5 * (lon_min + lon_max)}; }
};

struct GridCoords {
  std::uint64_t ix = 0;
  std::uint64_t iy = 0;
  friend bool operator==(const GridCoords&, const GridCoords&) = default;
};

constexpr int lon_bits(int depth) { return (depth + 1) / 2; }
constexpr int lat_bits(int depth) { return depth / 2; }

CellId encode_point(const GeoPoint& p, int depth);
CellBBox cell_bbox(const CellId& c);
GeoPoint cell_center(const CellId& c);

GridCoords grid_coords(const CellId& c);
CellId cell_from_grid(const GridCoords& g, int depth);

/// Chebyshev distance on the cell grid with longitudinal wraparound.
std::uint64_t hop_distance(const CellId& a, const CellId& b);

struct TokenId {
  std::uint16_t value = 0;
  friend auto operator<=>(const TokenId&, const TokenId&) = default;
};

struct CodecConfig {
  CellId prefix;
  int shift_dx = 0;  // longitude cells at full depth
  int shift_dy = 0;  // latitude cells at full depth
  int token_depth = kTokenBits;

  int full_depth() const { return prefix.depth() + token_depth; }

  /// key = value lines; see parse_record.
  std::string to_record() const;
  /// Single-line form used in corpus headers ("; " separated).
  std::string to_inline() const;
  static CodecConfig parse_record(std::string_view text);

  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

/// Searches whole-cell shifts in [-radius, radius]^2 for the longest common
/// prefix. Ties prefer the smallest |dx|+|dy|, then dx, then dy.
CodecConfig derive_codec(std::span<const GeoPoint> points, int search_radius = 2);

/// Full-depth cell of `p` translated by the codec shift (no coverage check).
CellId shifted_cell(const GeoPoint& p, const CodecConfig& codec);

TokenId token_of(const GeoPoint& p, const CodecConfig& codec);
/// Unshifted full-depth cell, or nullopt when reversing the shift leaves
/// the valid latitude range.
std::optional<CellId> try_cell_of(TokenId t, const CodecConfig& codec);
CellId cell_of(TokenId t, const CodecConfig& codec);
CellBBox point_of(TokenId t, const CodecConfig& codec);

}  // namespace trackgpt::geocodec
