#include <doctest.h>

#include <cmath>
#include <deque>
#include <map>
#include <string>

#include "trackgpt/error.hpp"
#include "trackgpt/geocodec.hpp"
#include "trackgpt/rng.hpp"

using namespace trackgpt;
using namespace trackgpt::geocodec;

namespace {

// Textbook geohash: interval halving with an explicit even/odd flag and
// characters emitted every five bits.
std::string reference_geohash(double lat, double lon, int chars) {
  static const char* kAlphabet = "0123456789bcdefghjkmnpqrstuvwxyz";
  double lat_iv[2] = {-90.0, 90.0};
  double lon_iv[2] = {-180.0, 180.0};
  bool even = true;
  int bit = 0, ch = 0;
  std::string out;
  while (static_cast<int>(out.size()) < chars) {
    double* iv = even ? lon_iv : lat_iv;
    const double v = even ? lon : lat;
    const double mid = (iv[0] + iv[1]) / 2;
    ch <<= 1;
    if (v >= mid) {
      ch |= 1;
      iv[0] = mid;
    } else {
      iv[1] = mid;
    }
    even = !even;
    if (++bit == 5) {
      out += kAlphabet[ch];
      bit = 0;
      ch = 0;
    }
  }
  return out;
}

GeoPoint random_point(Rng& rng) { return {rng.uniform(-90.0, 90.0), rng.uniform(-180.0, 180.0)}; }

}  // namespace

TEST_CASE("encode_point matches a known geohash") {
  const auto c = encode_point({57.64911, 10.40744}, 55);
  CHECK(c.chars() == "u4pruydqqvj");
  CHECK(CellId::parse("u4pruydqqvj") == c);
}

TEST_CASE("encode_point agrees with a reference encoder on whole characters") {
  Rng rng(2024);
  for (int i = 0; i < 2000; ++i) {
    const GeoPoint p = random_point(rng);
    for (int chars : {1, 3, 5, 8, 11}) {
      REQUIRE(encode_point(p, 5 * chars).chars() == reference_geohash(p.lat, p.lon, chars));
    }
  }
}

TEST_CASE("cell boxes contain their points and nest") {
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    const GeoPoint p = random_point(rng);
    const int depth = 1 + static_cast<int>(rng.below(60));
    const CellId c = encode_point(p, depth);
    CHECK(cell_bbox(c).contains(p));
    const CellId parent = c.truncated(depth - 1);
    CHECK(parent.is_prefix_of(c));
    const auto outer = cell_bbox(parent), inner = cell_bbox(c);
    CHECK(outer.lat_min <= inner.lat_min);
    CHECK(outer.lon_max >= inner.lon_max);
  }
}

TEST_CASE("upper edges belong to the next cell") {
  const CellId c = encode_point({0.0, 0.0}, 2);
  const auto box = cell_bbox(c);
  CHECK(box.lat_min == 0.0);
  CHECK(box.lon_min == 0.0);
  CHECK(encode_point({90.0, 0.0}, 2) == c.truncated(2));
  CHECK(encode_point({-90.0, -180.0}, 4).bits() == 0);
}

TEST_CASE("display shows half-character letters") {
  CHECK(CellId::parse("u4pr").display() == "u4pr");
  CHECK(CellId::parse("u4pr", 17).display() == "u4p.NW");
  CHECK(CellId::root().display().empty());
  CHECK_THROWS_AS(CellId::parse("u4a"), Error);
}

TEST_CASE("grid coordinates round-trip") {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const int depth = static_cast<int>(rng.below(61));
    const CellId c = encode_point(random_point(rng), depth);
    CHECK(cell_from_grid(grid_coords(c), depth) == c);
  }
}

TEST_CASE("hop distance against a breadth-first oracle") {
  // King moves on a cylinder: longitude wraps, latitude does not.
  auto bfs = [](const CellId& a, const CellId& b) {
    const int depth = a.depth();
    const std::int64_t w = std::int64_t{1} << lon_bits(depth), h = std::int64_t{1} << lat_bits(depth);
    const auto ga = grid_coords(a), gb = grid_coords(b);
    std::map<std::pair<std::int64_t, std::int64_t>, int> dist;
    std::deque<std::pair<std::int64_t, std::int64_t>> q;
    dist[{static_cast<std::int64_t>(ga.ix), static_cast<std::int64_t>(ga.iy)}] = 0;
    q.push_back({static_cast<std::int64_t>(ga.ix), static_cast<std::int64_t>(ga.iy)});
    while (!q.empty()) {
      const auto cur = q.front();
      q.pop_front();
      if (cur.first == static_cast<std::int64_t>(gb.ix) && cur.second == static_cast<std::int64_t>(gb.iy)) {
        return dist[cur];
      }
      for (int dx = -1; dx <= 1; ++dx) {
        for (int dy = -1; dy <= 1; ++dy) {
          const std::int64_t y = cur.second + dy;
          if (y < 0 || y >= h) continue;
          const std::pair<std::int64_t, std::int64_t> next{((cur.first + dx) % w + w) % w, y};
          if (dist.emplace(next, dist[cur] + 1).second) q.push_back(next);
        }
      }
    }
    return -1;
  };
  Rng rng(77);
  for (int i = 0; i < 150; ++i) {
    const int depth = 1 + static_cast<int>(rng.below(10));
    const CellId a = encode_point(random_point(rng), depth);
    const CellId b = encode_point(random_point(rng), depth);
    REQUIRE(hop_distance(a, b) == static_cast<std::uint64_t>(bfs(a, b)));
  }
  // Neighbours across the antimeridian.
  const CellId west = encode_point({10.0, -179.99}, 20), east = encode_point({10.0, 179.99}, 20);
  CHECK(hop_distance(west, east) == 1);
  CHECK_THROWS_AS(hop_distance(west, west.truncated(19)), Error);
}

TEST_CASE("derive_codec finds the common prefix of a tight cluster") {
  std::vector<GeoPoint> pts{{50.2, 7.0}, {50.9, 8.0}, {50.5, 7.5}};
  const auto codec = derive_codec(pts);
  CHECK(codec.prefix.depth() >= 9);
  for (const auto& p : pts) {
    const TokenId t = token_of(p, codec);
    CHECK(point_of(t, codec).contains(p));
  }
}

TEST_CASE("derive_codec shifts a cluster that straddles a cell boundary") {
  // The equator/prime-meridian corner splits at the very first bit.
  std::vector<GeoPoint> pts{{-0.001, -0.001}, {0.001, 0.001}, {0.0005, -0.0008}};
  const auto codec = derive_codec(pts);
  CHECK(codec.prefix.depth() > 20);
  CHECK((codec.shift_dx != 0 || codec.shift_dy != 0));
  for (const auto& p : pts) CHECK(point_of(token_of(p, codec), codec).contains(p));
}

TEST_CASE("codec round-trip on random areas") {
  Rng rng(31);
  for (int area = 0; area < 20; ++area) {
    const GeoPoint c{rng.uniform(-60.0, 60.0), rng.uniform(-179.0, 179.0)};
    const double r = rng.uniform(0.01, 1.0);
    std::vector<GeoPoint> pts;
    for (int i = 0; i < 200; ++i) pts.push_back({c.lat + rng.uniform(-r, r), c.lon + rng.uniform(-r, r)});
    const auto codec = derive_codec(pts);
    for (const auto& p : pts) REQUIRE(point_of(token_of(p, codec), codec).contains(p));
  }
}

TEST_CASE("token is the low sixteen bits of the shifted full-depth cell") {
  const std::vector<GeoPoint> pts{{50.5, 7.5}};
  const auto codec = derive_codec(pts);
  const CellId full = shifted_cell(pts[0], codec);
  CHECK(full.depth() == codec.prefix.depth() + 16);
  CHECK(token_of(pts[0], codec).value == (full.bits() & 0xFFFF));
}

TEST_CASE("points outside the prefix raise a coverage error") {
  const std::vector<GeoPoint> pts{{50.2, 7.0}, {50.9, 8.0}};
  const auto codec = derive_codec(pts);
  try {
    token_of({-33.0, 151.0}, codec);
    FAIL("expected a coverage error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Coverage);
  }
}

TEST_CASE("codec record round-trip") {
  CodecConfig c;
  c.prefix = CellId::parse("u1h", 13);
  c.shift_dx = -2;
  c.shift_dy = 1;
  CHECK(CodecConfig::parse_record(c.to_record()) == c);
  CHECK(CodecConfig::parse_record(c.to_inline()) == c);
  CHECK_THROWS_AS(CodecConfig::parse_record("prefix = u1h\nprefix_partial_bits = 7\n"), Error);
}
