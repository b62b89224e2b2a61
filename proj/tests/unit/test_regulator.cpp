#include <doctest.h>

#include <cmath>

#include "trackgpt/error.hpp"
#include "trackgpt/regulator.hpp"

using namespace trackgpt;
using namespace trackgpt::regulator;
using geocodec::CodecConfig;
using geocodec::GridCoords;

namespace {

// Prefix "u0" plus four bits: a depth-9 area around (50.6, 7.5) with
// 25-bit full cells (13 longitude bits, 12 latitude bits).
CodecConfig test_codec() {
  CodecConfig c;
  c.prefix = geocodec::encode_point({50.625, 7.5}, 9);
  return c;
}

struct Walker {
  CodecConfig codec = test_codec();
  GridCoords origin = geocodec::grid_coords(geocodec::encode_point({50.625, 7.5}, 25));

  CellId cell(std::int64_t dx, std::int64_t dy) const {
    return geocodec::cell_from_grid({origin.ix + dx, origin.iy + dy}, 25);
  }
  TokenId token(std::int64_t dx, std::int64_t dy) const {
    return TokenId{static_cast<std::uint16_t>(cell(dx, dy).bits() & 0xFFFF)};
  }
};

ForecastSample sample_at(const Walker& w, const std::vector<std::pair<int, int>>& steps, int min_valid = 0) {
  std::vector<TokenId> toks;
  for (const auto& [dx, dy] : steps) toks.push_back(w.token(dx, dy));
  return regulate(toks, w.cell(0, 0), RegulatorConfig{3, min_valid}, w.codec);
}

}  // namespace

TEST_CASE("a jump of N+1 hops truncates at exactly that step") {
  const Walker w;
  for (int k = 0; k < 6; ++k) {
    std::vector<std::pair<int, int>> steps;
    int x = 0;
    for (int s = 0; s < 8; ++s) {
      x += s == k ? 4 : 1;
      steps.push_back({x, 0});
    }
    const auto s = sample_at(w, steps);
    REQUIRE(s.truncated_at);
    CHECK(*s.truncated_at == k);
    CHECK(s.valid_len == k);
    CHECK(s.cells.size() == static_cast<std::size_t>(k));
    CHECK(s.tokens.size() == 8);
  }
}

TEST_CASE("a jump of exactly N hops is kept") {
  const Walker w;
  const auto s = sample_at(w, {{1, 1}, {4, 1}, {4, -2}, {1, 1}});
  CHECK(!s.truncated_at);
  CHECK(s.valid_len == 4);
  CHECK(s.cells.back() == w.cell(1, 1));
}

TEST_CASE("the first forecast step is checked against the prompt end") {
  const Walker w;
  const auto s = sample_at(w, {{0, 4}, {0, 5}});
  CHECK(s.truncated_at == 0);
  CHECK(s.valid_len == 0);
}

TEST_CASE("valid length is monotone in the hop limit") {
  const Walker w;
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TokenId> toks;
    std::int64_t x = 0, y = 0;
    for (int s = 0; s < 40; ++s) {
      const std::int64_t r = rng.uniform() < 0.1 ? 8 : 1;
      x += static_cast<std::int64_t>(rng.below(2 * r + 1)) - r;
      y += static_cast<std::int64_t>(rng.below(2 * r + 1)) - r;
      x = std::clamp<std::int64_t>(x, -60, 60);
      y = std::clamp<std::int64_t>(y, -60, 60);
      toks.push_back(w.token(x, y));
    }
    int prev = -1;
    for (int n = 1; n <= 20; ++n) {
      const auto s = regulate(toks, w.cell(0, 0), RegulatorConfig{n, 0}, w.codec);
      REQUIRE(s.valid_len >= prev);
      prev = s.valid_len;
    }
  }
}

TEST_CASE("discard threshold defaults to a quarter of the horizon") {
  CHECK(RegulatorConfig::for_horizon(3, 90).min_valid_steps == 23);
  CHECK(RegulatorConfig::for_horizon(3, 4).min_valid_steps == 1);
  const Walker w;
  CHECK(sample_at(w, {{1, 0}, {9, 0}}, 2).discarded);
  CHECK(!sample_at(w, {{1, 0}, {2, 0}}, 2).discarded);
}

TEST_CASE("ensemble mean route and consensus") {
  const Walker w;
  const auto a = sample_at(w, {{1, 0}, {2, 0}, {3, 0}});
  const auto b = sample_at(w, {{1, 1}, {2, 2}});
  const auto e = ensemble({a, b});
  REQUIRE(e.mean_route.size() == 3);
  CHECK(e.route_support == std::vector<int>{2, 2, 1});
  const auto c0 = geocodec::cell_center(w.cell(1, 0)), c1 = geocodec::cell_center(w.cell(1, 1));
  CHECK(e.mean_route[0].lat == doctest::Approx(0.5 * (c0.lat + c1.lat)));
  CHECK(e.mean_route[0].lon == doctest::Approx(c0.lon));
  CHECK(e.mean_route[2] == geocodec::cell_center(w.cell(3, 0)));
  REQUIRE(e.consensus);
}

TEST_CASE("consensus ties prefer longer samples, then the lower cell") {
  const Walker w;
  EnsembleOptions exact{0};
  const auto short_far = sample_at(w, {{1, 0}});
  const auto long_near = sample_at(w, {{0, 1}, {0, 2}});
  const auto e = ensemble({short_far, long_near}, exact);
  CHECK(e.consensus->cell == w.cell(0, 2));
  CHECK(e.consensus->support == 1);

  const auto left = sample_at(w, {{-1, 0}});
  const auto right = sample_at(w, {{1, 0}});
  const auto tie = ensemble({right, left}, exact);
  CHECK(tie.consensus->cell == std::min(w.cell(-1, 0), w.cell(1, 0)));

  const auto majority = ensemble({left, right, left}, exact);
  CHECK(majority.consensus->cell == w.cell(-1, 0));
  CHECK(majority.consensus->support == 2);
}

TEST_CASE("discarded samples are left out of the ensemble") {
  const Walker w;
  const auto good = sample_at(w, {{1, 0}, {2, 0}}, 2);
  const auto bad = sample_at(w, {{1, 1}, {9, 9}}, 2);
  const auto e = ensemble({bad, good});
  CHECK(e.route_support == std::vector<int>{1, 1});
  CHECK(e.samples.size() == 2);
  CHECK_THROWS_AS(ensemble({bad}), Error);
}

TEST_CASE("waypoints sample the mean route every stride steps") {
  ForecastEnsemble e;
  for (int k = 0; k < 90; ++k) {
    e.mean_route.push_back({50.0 + k * 0.01, 7.0});
    e.horizon_times.push_back(1000.0 + (k + 1) * 600.0);
  }
  const auto wp = waypoints(e);
  REQUIRE(wp.size() == 15);
  CHECK(wp[0].step == 5);
  CHECK(wp[1].step == 11);
  CHECK(wp[0].t == 1000.0 + 6 * 600.0);
  CHECK(waypoints(e, 100).empty());
  CHECK_THROWS_AS(waypoints(e, 0), Error);
}

TEST_CASE("GeoJSON export") {
  const Walker w;
  auto e = ensemble({sample_at(w, {{1, 0}, {2, 0}}), sample_at(w, {{1, 1}, {9, 9}})});
  e.prompt = {{50.6, 7.49}, {50.61, 7.5}};
  e.prompt_times = {0.0, 600.0};
  e.horizon_times = {1200.0, 1800.0};
  e.dt = 600;
  const auto j = to_geojson(e, "v1");
  CHECK(j["type"] == "FeatureCollection");
  const auto& f = j["features"];
  REQUIRE(f.size() == 5);
  CHECK(f[0]["properties"]["kind"] == "prompt");
  CHECK(f[1]["geometry"]["type"] == "LineString");
  CHECK(f[1]["geometry"]["coordinates"].size() == 2);
  CHECK(f[2]["geometry"].is_null());  // one valid point
  CHECK(f[2]["properties"]["truncated_at"] == 1);
  CHECK(f[3]["properties"]["kind"] == "mean_route");
  CHECK(f[4]["geometry"]["type"] == "Point");
  CHECK(f[4]["properties"]["track_id"] == "v1");
  // Coordinates are [lon, lat].
  CHECK(f[0]["geometry"]["coordinates"][0][0].get<double>() == 7.49);
}

TEST_CASE("forecast end to end on a random model") {
  gptcore::ModelConfig mc;
  mc.vocab_size = 65536;
  mc.block_size = 16;
  mc.n_layer = 1;
  mc.n_head = 1;
  mc.d_model = 8;
  auto ck = gptcore::init_model(mc);
  ck.codec = test_codec();
  ck.dt = 600;

  trackprep::GroomedTrack prompt{"p", 1000.0, 600.0, {}};
  for (int k = 0; k < 20; ++k) prompt.points.push_back({50.5 + 0.001 * k, 7.4});
  ForecastRequest req;
  req.sampler = {1.0, 3, 5, 7};
  req.regulator = {1 << 20, 0};
  const auto e = forecast(ck, prompt, req);
  CHECK(e.samples.size() == 3);
  REQUIRE(e.horizon_times.size() == 5);
  const double t_end = prompt.time_at(19);
  for (int k = 0; k < 5; ++k) CHECK(e.horizon_times[k] == t_end + (k + 1) * 600.0);
  CHECK(e.prompt.size() == 20);
  for (const auto& s : e.samples) CHECK(s.valid_len == 5);

  // Same seed, same samples.
  const auto again = forecast(ck, prompt, req);
  CHECK(again.samples[2].tokens == e.samples[2].tokens);

  auto wrong_dt = prompt;
  wrong_dt.dt = 300;
  CHECK_THROWS_AS(forecast(ck, wrong_dt, req), Error);
  auto far = prompt;
  far.points[3] = {-30.0, 20.0};
  try {
    forecast(ck, far, req);
    FAIL("expected coverage error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::Coverage);
  }
}
