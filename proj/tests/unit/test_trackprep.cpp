#include <doctest.h>

#include <cmath>
#include <sstream>

#include "trackgpt/error.hpp"
#include "trackgpt/log.hpp"
#include "trackgpt/rng.hpp"
#include "trackgpt/trackprep.hpp"

using namespace trackgpt;
using namespace trackgpt::trackprep;

namespace {

RawTrack line_track(const std::string& id, double t0, double dt, int n, GeoPoint start, double dlat, double dlon) {
  RawTrack t{id, {}};
  for (int i = 0; i < n; ++i) t.obs.push_back({{start.lat + i * dlat, start.lon + i * dlon}, t0 + i * dt});
  return t;
}

struct QuietLog {
  QuietLog() { log::set_level(log::Level::Off); }
  ~QuietLog() { log::set_level(log::Level::Info); }
};

}  // namespace

TEST_CASE("blackout gaps split a track") {
  RawTrack t{"a", {{{0, 0}, 0}, {{0, 0.01}, 100}, {{0, 0.02}, 5000}, {{0, 0.03}, 5100}, {{0, 0.04}, 8701}}};
  const auto pieces = split_on_blackout(t, 3600);
  REQUIRE(pieces.size() == 3);
  CHECK(pieces[0].obs.size() == 2);
  CHECK(pieces[1].obs.size() == 2);
  CHECK(pieces[2].obs.size() == 1);
  // A gap exactly at the threshold does not split.
  CHECK(split_on_blackout(t, 3601).size() == 2);
}

TEST_CASE("duration filter keeps tracks at the threshold") {
  std::vector<RawTrack> ts{line_track("a", 0, 60, 61, {0, 0}, 0, 0.001), line_track("b", 0, 60, 60, {0, 0}, 0, 0.001),
                           RawTrack{"c", {{{0, 0}, 0}}}};
  const auto kept = filter_tracks(ts, 3600);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].entity_id == "a");
}

TEST_CASE("interpolation follows the shorter longitude arc") {
  RawTrack t{"a", {{{10, 179.0}, 0}, {{20, -179.0}, 100}}};
  const auto mid = interpolate_at(t, 50);
  CHECK(mid.lat == doctest::Approx(15.0));
  CHECK(std::abs(mid.lon) == doctest::Approx(180.0));
  CHECK(interpolate_at(t, 0) == t.obs[0].point);
  CHECK_THROWS_AS(interpolate_at(t, 101), Error);
}

TEST_CASE("resample grid starts at the first report and stays inside the span") {
  RawTrack t{"a", {{{0, 0}, 1000}, {{0, 1}, 1250}, {{1, 1}, 2000}}};
  const auto g = resample(t, 300);
  REQUIRE(g);
  CHECK(g->t0 == 1000);
  CHECK(g->points.size() == 4);  // 1000, 1300, 1600, 1900
  CHECK(g->points[0] == GeoPoint{0, 0});
  CHECK(g->points[1].lon == doctest::Approx(1.0));
  CHECK(g->points[1].lat == doctest::Approx(50.0 / 750.0));
  CHECK(!resample(RawTrack{"b", {{{0, 0}, 0}, {{0, 0}, 10}}}, 20));
}

TEST_CASE("dt_mc fits the longest capped span into one block") {
  const std::vector<RawTrack> ts{line_track("a", 0, 600, 121, {0, 0}, 0, 0.01),
                                 line_track("b", 0, 600, 61, {0, 0}, 0, 0.01)};
  // 20 hours over 121 positions: 10-minute intervals.
  CHECK(compute_dt_mc(ts, 121) == doctest::Approx(600.0));
  CHECK(compute_dt_mc(ts, 121, 36000.0) == doctest::Approx(300.0));
}

TEST_CASE("choose_dt is the larger candidate") {
  QuietLog quiet;
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(0.01, 5000.0), b = rng.uniform(0.01, 5000.0);
    REQUIRE(choose_dt(a, b) == std::max(a, b));
  }
  CHECK_THROWS_AS(choose_dt(0.0, 1.0), Error);
}

TEST_CASE("dt_an keeps consecutive samples adjacent") {
  const auto codec = geocodec::derive_codec(std::vector<GeoPoint>{{50.0, 7.0}, {51.0, 8.0}});
  const std::vector<RawTrack> ts{line_track("a", 0, 60, 600, {50.2, 7.1}, 0.001, 0.001)};
  const double dt = compute_dt_an(ts, codec);
  CHECK(dt > 1.0);
  const auto g = resample(ts[0], dt);
  REQUIRE(g);
  const auto tok = tokenize(*g, codec);
  CHECK(tok.jump_fraction() <= 0.01);
}

TEST_CASE("split_long caps every piece at max_duration") {
  GroomedTrack g{"a", 0, 600, std::vector<GeoPoint>(250, GeoPoint{0, 0})};
  const auto parts = split_long(g, 72000);
  REQUIRE(parts.size() == 3);
  CHECK(parts[0].points.size() == 121);
  CHECK(parts[1].t0 == 121 * 600.0);
  CHECK(parts[2].points.size() == 8);
  for (const auto& p : parts) CHECK(p.span() <= 72000);
}

TEST_CASE("groom output is filtered, sorted and tokenized") {
  QuietLog quiet;
  std::vector<RawTrack> in;
  in.push_back(line_track("b", 0, 300, 300, {50.2, 7.1}, 0.0015, 0.002));   // ~25 h
  in.push_back(line_track("a", 100, 300, 100, {50.3, 7.2}, 0.002, 0.002));  // ~8 h
  in.push_back(line_track("c", 0, 300, 100, {50.5, 7.5}, 0.0, 0.0));       // stationary
  in.push_back(line_track("d", 0, 300, 20, {50.5, 7.5}, 0.01, 0.0));       // too short
  PrepConfig cfg;
  cfg.dt_override = 600;
  const auto r = groom(in, cfg, {});
  CHECK(r.stats.tracks_in == 4);
  CHECK(r.stats.after_duration_filter == 3);
  CHECK(r.stats.stationary_removed == 1);
  REQUIRE(r.groomed.size() == 3);  // b splits into 20 h + 5 h
  CHECK(r.groomed[0].entity_id == "a");
  CHECK(r.groomed[1].entity_id == "b");
  CHECK(r.groomed[2].entity_id == "b");
  CHECK(r.groomed[1].t0 < r.groomed[2].t0);
  for (const auto& g : r.groomed) {
    CHECK(g.span() >= cfg.min_duration);
    CHECK(g.span() <= cfg.max_duration);
  }
  REQUIRE(r.tokens.size() == r.groomed.size());
  CHECK(r.tokens[1].tokens.size() == r.groomed[1].points.size());
}

TEST_CASE("groom derives dt when not overridden") {
  QuietLog quiet;
  std::vector<RawTrack> in{line_track("a", 0, 60, 1201, {50.2, 7.1}, 0.0002, 0.0002)};
  PrepConfig cfg;
  GroomOptions opt;
  opt.block_size = 121;
  const auto r = groom(in, cfg, opt);
  CHECK(r.stats.dt_mc == doctest::Approx(600.0));
  CHECK(r.dt == std::max(r.stats.dt_an, r.stats.dt_mc));
}

TEST_CASE("corpus file round-trip") {
  Corpus c;
  c.codec = geocodec::derive_codec(std::vector<GeoPoint>{{50.0, 7.0}, {51.0, 8.0}});
  c.dt = 600;
  c.tracks.push_back(TokenTrack{"x", 0, 600, {{1}, {65535}, {7}}});
  c.tracks.push_back(TokenTrack{"y", 0, 600, {{0}}});
  std::stringstream ss;
  write_corpus(ss, c);
  const auto back = read_corpus(ss);
  CHECK(back.codec == c.codec);
  CHECK(back.dt == 600);
  REQUIRE(back.tracks.size() == 2);
  CHECK(back.tracks[0].tokens == c.tracks[0].tokens);
  std::stringstream bad("#trackgpt-corpus v1; prefix = u; dt = 600\n1 2 70000\n");
  CHECK_THROWS_AS(read_corpus(bad), Error);
}
