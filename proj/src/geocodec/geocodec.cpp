#include "trackgpt/geocodec.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <vector>

#include "trackgpt/error.hpp"
#include "trackgpt/kv_text.hpp"

namespace trackgpt::geocodec {
namespace {

void check_depth(int depth) {
  if (depth < 0 || depth > kMaxDepth) {
    throw Error(ErrorCode::Input, "cell depth " + std::to_string(depth) + " outside [0, 60]");
  }
}

int char_value(char c) {
  const auto pos = kBase32.find(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (pos == std::string_view::npos) {
    throw Error(ErrorCode::Parse, std::string("invalid geohash character '") + c + "'");
  }
  return static_cast<int>(pos);
}

std::uint64_t low_mask(int n) { return n >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << n) - 1; }

}  // namespace

CellId::CellId(std::uint64_t bits, int depth) : bits_(bits), depth_(depth) {
  check_depth(depth);
  if ((bits & ~low_mask(depth)) != 0) {
    throw Error(ErrorCode::Input, "cell bits exceed depth " + std::to_string(depth));
  }
}

CellId CellId::parse(std::string_view chars, int depth) {
  const int available = static_cast<int>(chars.size()) * 5;
  if (depth < 0) depth = available;
  if (depth > available) {
    throw Error(ErrorCode::Parse, "geohash '" + std::string(chars) + "' shorter than " +
                                      std::to_string(depth) + " bits");
  }
  check_depth(depth);
  std::uint64_t bits = 0;
  int taken = 0;
  for (char c : chars) {
    const int v = char_value(c);
    for (int b = 4; b >= 0 && taken < depth; --b, ++taken) {
      bits = (bits << 1) | static_cast<std::uint64_t>((v >> b) & 1);
    }
  }
  return CellId(bits, depth);
}

bool CellId::bit(int i) const {
  if (i < 0 || i >= depth_) throw Error(ErrorCode::Input, "bit index out of range");
  return ((bits_ >> (depth_ - 1 - i)) & 1u) != 0;
}

CellId CellId::truncated(int depth) const {
  if (depth < 0 || depth > depth_) throw Error(ErrorCode::Input, "cannot truncate to a deeper cell");
  return CellId(bits_ >> (depth_ - depth), depth);
}

CellId CellId::child(bool bit) const {
  return CellId((bits_ << 1) | (bit ? 1u : 0u), depth_ + 1);
}

bool CellId::is_prefix_of(const CellId& other) const {
  return depth_ <= other.depth_ && other.truncated(depth_).bits_ == bits_;
}

std::string CellId::chars() const {
  std::string out;
  for (int start = 0; start < depth_; start += 5) {
    int v = 0;
    for (int b = 0; b < 5; ++b) {
      const int i = start + b;
      v = (v << 1) | (i < depth_ && bit(i) ? 1 : 0);
    }
    out.push_back(kBase32[static_cast<std::size_t>(v)]);
  }
  return out;
}

std::string CellId::display() const {
  const int whole = depth_ / 5;
  std::string out = truncated(whole * 5).chars();
  if (whole * 5 == depth_) return out;
  out.push_back('.');
  for (int i = whole * 5; i < depth_; ++i) {
    const bool lon_axis = i % 2 == 0;
    out.push_back(lon_axis ? (bit(i) ? 'E' : 'W') : (bit(i) ? 'N' : 'S'));
  }
  return out;
}

CellId encode_point(const GeoPoint& p, int depth) {
  check_depth(depth);
  if (!is_valid(p)) {
    throw Error(ErrorCode::Input, "coordinate out of range: lat " + format_double(p.lat) +
                                      ", lon " + format_double(p.lon));
  }
  double lat_lo = -90.0, lat_hi = 90.0;
  double lon_lo = -180.0, lon_hi = 180.0;
  std::uint64_t bits = 0;
  for (int i = 0; i < depth; ++i) {
    bits <<= 1;
    if (i % 2 == 0) {
      const double mid = 0.5 * (lon_lo + lon_hi);
      if (p.lon >= mid) {
        bits |= 1;
        lon_lo = mid;
      } else {
        lon_hi = mid;
      }
    } else {
      const double mid = 0.5 * (lat_lo + lat_hi);
      if (p.lat >= mid) {
        bits |= 1;
        lat_lo = mid;
      } else {
        lat_hi = mid;
      }
    }
  }
  return CellId(bits, depth);
}

CellBBox cell_bbox(const CellId& c) {
  CellBBox box;
  for (int i = 0; i < c.depth(); ++i) {
    const bool upper = c.bit(i);
    if (i % 2 == 0) {
      const double mid = 0.5 * (box.lon_min + box.lon_max);
      (upper ? box.lon_min : box.lon_max) = mid;
    } else {
      const double mid = 0.5 * (box.lat_min + box.lat_max);
      (upper ? box.lat_min : box.lat_max) = mid;
    }
  }
  return box;
}

GeoPoint cell_center(const CellId& c) { return cell_bbox(c).center(); }

GridCoords grid_coords(const CellId& c) {
  GridCoords g;
  for (int i = 0; i < c.depth(); ++i) {
    const std::uint64_t b = c.bit(i) ? 1 : 0;
    if (i % 2 == 0) {
      g.ix = (g.ix << 1) | b;
    } else {
      g.iy = (g.iy << 1) | b;
    }
  }
  return g;
}

CellId cell_from_grid(const GridCoords& g, int depth) {
  check_depth(depth);
  const int nx = lon_bits(depth);
  const int ny = lat_bits(depth);
  if ((g.ix & ~low_mask(nx)) != 0 || (g.iy & ~low_mask(ny)) != 0) {
    throw Error(ErrorCode::Input, "grid coordinates out of range for depth " + std::to_string(depth));
  }
  std::uint64_t bits = 0;
  int xi = nx - 1;
  int yi = ny - 1;
  for (int i = 0; i < depth; ++i) {
    std::uint64_t b;
    if (i % 2 == 0) {
      b = (g.ix >> xi--) & 1;
    } else {
      b = (g.iy >> yi--) & 1;
    }
    bits = (bits << 1) | b;
  }
  return CellId(bits, depth);
}

std::uint64_t hop_distance(const CellId& a, const CellId& b) {
  if (a.depth() != b.depth()) {
    throw Error(ErrorCode::Input, "hop distance needs equal depths (" + std::to_string(a.depth()) +
                                      " vs " + std::to_string(b.depth()) + ")");
  }
  const GridCoords ga = grid_coords(a);
  const GridCoords gb = grid_coords(b);
  const std::uint64_t width = std::uint64_t{1} << lon_bits(a.depth());
  std::uint64_t dx = ga.ix > gb.ix ? ga.ix - gb.ix : gb.ix - ga.ix;
  dx = std::min(dx, width - dx);
  const std::uint64_t dy = ga.iy > gb.iy ? ga.iy - gb.iy : gb.iy - ga.iy;
  return std::max(dx, dy);
}

// ---------------------------------------------------------------------------
// Codec

std::string CodecConfig::to_record() const {
  std::string out;
  out += "prefix = " + prefix.chars() + "\n";
  out += "prefix_partial_bits = " + std::to_string(prefix.depth() % 5) + "\n";
  out += "shift_dx = " + std::to_string(shift_dx) + "\n";
  out += "shift_dy = " + std::to_string(shift_dy) + "\n";
  out += "token_depth = " + std::to_string(token_depth) + "\n";
  return out;
}

std::string CodecConfig::to_inline() const {
  std::string out = to_record();
  out.pop_back();
  std::string joined;
  for (const auto& line : split(out, '\n')) {
    if (!joined.empty()) joined += "; ";
    joined += line;
  }
  return joined;
}

CodecConfig CodecConfig::parse_record(std::string_view text) {
  std::string normalized(text);
  std::replace(normalized.begin(), normalized.end(), ';', '\n');
  const KvRecord rec = KvRecord::parse(normalized);
  const std::string chars = rec.get_or("prefix", "");
  const long long partial = rec.get_int_or("prefix_partial_bits", 0);
  if (partial < 0 || partial > 4 || (partial > 0 && chars.empty())) {
    throw Error(ErrorCode::Parse, "invalid prefix_partial_bits " + std::to_string(partial));
  }
  const int depth = partial == 0 ? static_cast<int>(chars.size()) * 5
                                 : static_cast<int>(chars.size() - 1) * 5 + static_cast<int>(partial);
  CodecConfig codec;
  codec.prefix = CellId::parse(chars, depth);
  codec.shift_dx = static_cast<int>(rec.get_int_or("shift_dx", 0));
  codec.shift_dy = static_cast<int>(rec.get_int_or("shift_dy", 0));
  codec.token_depth = static_cast<int>(rec.get_int_or("token_depth", kTokenBits));
  if (codec.token_depth != kTokenBits) {
    throw Error(ErrorCode::Config, "token_depth must be 16, got " + std::to_string(codec.token_depth));
  }
  if (codec.full_depth() > kMaxDepth) {
    throw Error(ErrorCode::Config, "prefix depth + 16 exceeds 60 bits");
  }
  // Any hand-edited record must still round-trip through the serializer.
  if (codec.prefix.chars() != chars && !(chars.empty() && depth == 0)) {
    throw Error(ErrorCode::Parse, "prefix '" + chars + "' has nonzero padding bits");
  }
  return codec;
}

CodecConfig derive_codec(std::span<const GeoPoint> points, int search_radius) {
  if (points.empty()) throw Error(ErrorCode::Input, "cannot derive a codec from an empty dataset");
  if (search_radius < 0) throw Error(ErrorCode::Input, "negative shift search radius");

  // Grid coordinates at the deepest level; shallower coordinates are prefixes.
  constexpr int kAxisBits = kMaxDepth / 2;
  std::vector<GridCoords> deep;
  deep.reserve(points.size());
  for (const auto& p : points) deep.push_back(grid_coords(encode_point(p, kMaxDepth)));

  // Unshifted common prefix.
  int base = kMaxDepth - kTokenBits;
  {
    const CellId first = cell_from_grid(deep.front(), kMaxDepth);
    for (const auto& g : deep) {
      const CellId c = cell_from_grid(g, kMaxDepth);
      const std::uint64_t diff = c.bits() ^ first.bits();
      const int lcp = diff == 0 ? kMaxDepth : std::countl_zero(diff) - (64 - kMaxDepth);
      base = std::min(base, lcp);
      if (base == 0) break;
    }
  }

  std::vector<std::pair<int, int>> shifts;
  for (int dx = -search_radius; dx <= search_radius; ++dx) {
    for (int dy = -search_radius; dy <= search_radius; ++dy) shifts.emplace_back(dx, dy);
  }
  std::stable_sort(shifts.begin(), shifts.end(), [](const auto& a, const auto& b) {
    const int ma = std::abs(a.first) + std::abs(a.second);
    const int mb = std::abs(b.first) + std::abs(b.second);
    if (ma != mb) return ma < mb;
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  });

  for (int depth = kMaxDepth - kTokenBits; depth > base; --depth) {
    const int full = depth + kTokenBits;
    const int nx = lon_bits(full), ny = lat_bits(full);
    const int px = nx - lon_bits(depth), py = ny - lat_bits(depth);
    const std::int64_t width = std::int64_t{1} << nx;
    const std::int64_t height = std::int64_t{1} << ny;
    for (const auto& [dx, dy] : shifts) {
      if (dx == 0 && dy == 0) continue;
      bool ok = true;
      GridCoords top{};
      for (std::size_t i = 0; i < deep.size() && ok; ++i) {
        std::int64_t ix = static_cast<std::int64_t>(deep[i].ix >> (kAxisBits - nx)) + dx;
        const std::int64_t iy = static_cast<std::int64_t>(deep[i].iy >> (kAxisBits - ny)) + dy;
        ix = ((ix % width) + width) % width;
        if (iy < 0 || iy >= height) {
          ok = false;
          break;
        }
        const GridCoords t{static_cast<std::uint64_t>(ix) >> px, static_cast<std::uint64_t>(iy) >> py};
        if (i == 0) {
          top = t;
        } else if (!(t == top)) {
          ok = false;
        }
      }
      if (ok) {
        CodecConfig codec;
        codec.prefix = cell_from_grid(top, depth);
        codec.shift_dx = dx;
        codec.shift_dy = dy;
        return codec;
      }
    }
  }
  CodecConfig codec;
  codec.prefix = cell_from_grid(deep.front(), kMaxDepth).truncated(base);
  return codec;
}

CellId shifted_cell(const GeoPoint& p, const CodecConfig& codec) {
  const int full = codec.full_depth();
  const CellId c = encode_point(p, full);
  if (codec.shift_dx == 0 && codec.shift_dy == 0) return c;
  const GridCoords g = grid_coords(c);
  const std::int64_t width = std::int64_t{1} << lon_bits(full);
  const std::int64_t height = std::int64_t{1} << lat_bits(full);
  std::int64_t ix = static_cast<std::int64_t>(g.ix) + codec.shift_dx;
  ix = ((ix % width) + width) % width;
  const std::int64_t iy = static_cast<std::int64_t>(g.iy) + codec.shift_dy;
  if (iy < 0 || iy >= height) {
    throw Error(ErrorCode::Coverage, "shifted point leaves the latitude range");
  }
  return cell_from_grid({static_cast<std::uint64_t>(ix), static_cast<std::uint64_t>(iy)}, full);
}

TokenId token_of(const GeoPoint& p, const CodecConfig& codec) {
  const CellId c = shifted_cell(p, codec);
  if (!codec.prefix.is_prefix_of(c)) {
    throw Error(ErrorCode::Coverage, "point (" + format_double(p.lat) + ", " + format_double(p.lon) +
                                         ") lies outside prefix cell '" + codec.prefix.display() + "'");
  }
  return TokenId{static_cast<std::uint16_t>(c.bits() & (kVocabSize - 1))};
}

std::optional<CellId> try_cell_of(TokenId t, const CodecConfig& codec) {
  const int full = codec.full_depth();
  const CellId shifted((codec.prefix.bits() << kTokenBits) | t.value, full);
  if (codec.shift_dx == 0 && codec.shift_dy == 0) return shifted;
  const GridCoords g = grid_coords(shifted);
  const std::int64_t width = std::int64_t{1} << lon_bits(full);
  const std::int64_t height = std::int64_t{1} << lat_bits(full);
  std::int64_t ix = static_cast<std::int64_t>(g.ix) - codec.shift_dx;
  ix = ((ix % width) + width) % width;
  const std::int64_t iy = static_cast<std::int64_t>(g.iy) - codec.shift_dy;
  if (iy < 0 || iy >= height) return std::nullopt;
  return cell_from_grid({static_cast<std::uint64_t>(ix), static_cast<std::uint64_t>(iy)}, full);
}

CellId cell_of(TokenId t, const CodecConfig& codec) {
  auto c = try_cell_of(t, codec);
  if (!c) throw Error(ErrorCode::Input, "token " + std::to_string(t.value) + " decodes outside the globe");
  return *c;
}

CellBBox point_of(TokenId t, const CodecConfig& codec) { return cell_bbox(cell_of(t, codec)); }

}  // namespace trackgpt::geocodec
