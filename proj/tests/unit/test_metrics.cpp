#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "trackgpt/error.hpp"
#include "trackgpt/metrics.hpp"
#include "trackgpt/rng.hpp"

using namespace trackgpt;
using namespace trackgpt::metrics;
using regulator::ForecastEnsemble;
using regulator::ForecastSample;

namespace {

// Spherical law of cosines on the same radius; independent of the haversine form.
double reference_km(const GeoPoint& a, const GeoPoint& b) {
  const double r = 3.14159265358979323846 / 180.0;
  const double c = std::sin(a.lat * r) * std::sin(b.lat * r) +
                   std::cos(a.lat * r) * std::cos(b.lat * r) * std::cos((b.lon - a.lon) * r);
  return 6371.0088 * std::acos(std::clamp(c, -1.0, 1.0));
}

constexpr int kDepth = 25;

ForecastSample sample_from(const std::vector<GeoPoint>& pts, int horizon, bool discarded = false) {
  ForecastSample s;
  for (const auto& p : pts) s.cells.push_back(geocodec::encode_point(p, kDepth));
  s.valid_len = static_cast<int>(pts.size());
  s.tokens.resize(static_cast<std::size_t>(horizon));
  if (s.valid_len < horizon) s.truncated_at = s.valid_len;
  s.discarded = discarded;
  return s;
}

struct Fixture {
  trackprep::GroomedTrack truth{"t", 600.0, 600.0, {}};
  ForecastEnsemble ens;

  explicit Fixture(int horizon) {
    for (int k = 0; k < horizon; ++k) truth.points.push_back({50.0, 7.0 + 0.05 * k});
    ens.dt = 600.0;
    for (int k = 0; k < horizon; ++k) ens.horizon_times.push_back(600.0 + k * 600.0);
  }
  /// Truth shifted north by `dlat` degrees over the first n steps.
  std::vector<GeoPoint> offset(double dlat, int n) const {
    std::vector<GeoPoint> out;
    for (int k = 0; k < n; ++k) out.push_back({truth.points[k].lat + dlat, truth.points[k].lon});
    return out;
  }
};

EvalConfig cfg_n(int n) {
  EvalConfig c;
  c.best_of_n = n;
  return c;
}

}  // namespace

TEST_CASE("one degree of longitude on the equator") {
  CHECK(std::abs(geodesic_km({0, 0}, {0, 1}) - 111.195) < 0.001);
  CHECK(geodesic_km({10, 20}, {10, 20}) == 0.0);
  CHECK(geodesic_km({0, 179.5}, {0, -179.5}) == doctest::Approx(111.195).epsilon(1e-5));
  CHECK(from_km(1.852, Units::NauticalMiles) == doctest::Approx(1.0));
  CHECK(to_km(1.0, Units::NauticalMiles) == doctest::Approx(1.852));
  CHECK_THROWS_AS(parse_units("miles"), Error);
}

TEST_CASE("haversine agrees with the law of cosines") {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const GeoPoint a{rng.uniform(-80, 80), rng.uniform(-180, 180)}, b{rng.uniform(-80, 80), rng.uniform(-180, 180)};
    CHECK(geodesic_km(a, b) == doctest::Approx(reference_km(a, b)).epsilon(1e-6));
  }
}

TEST_CASE("cell error is zero inside and the nearest corner outside") {
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    const GeoPoint c{rng.uniform(-70, 70), rng.uniform(-170, 170)};
    const int depth = 10 + static_cast<int>(rng.below(20));
    const auto cell = geocodec::encode_point(c, depth);
    const GeoPoint p{c.lat + rng.uniform(-0.5, 0.5), c.lon + rng.uniform(-0.5, 0.5)};
    const auto box = geocodec::cell_bbox(cell);
    double expect = 0.0;
    if (!(p.lat >= box.lat_min && p.lat <= box.lat_max && p.lon >= box.lon_min && p.lon <= box.lon_max)) {
      expect = std::numeric_limits<double>::infinity();
      for (double la : {box.lat_min, box.lat_max}) {
        for (double lo : {box.lon_min, box.lon_max}) expect = std::min(expect, reference_km(p, {la, lo}));
      }
    }
    CHECK(cell_error_km(p, cell) == doctest::Approx(expect).epsilon(1e-6));
  }
  // Edges count as inside.
  const auto cell = geocodec::encode_point({50.1, 7.1}, 20);
  const auto box = geocodec::cell_bbox(cell);
  CHECK(cell_error_km({box.lat_max, box.lon_max}, cell) == 0.0);
}

TEST_CASE("best-of-N picks the lowest ADE") {
  Fixture f(10);
  f.ens.samples = {sample_from(f.offset(0.3, 10), 10), sample_from(f.offset(0.1, 10), 10),
                   sample_from(f.offset(0.2, 10), 10), sample_from(f.offset(0.0, 10), 10)};
  CHECK(score_track(f.truth, f.ens, cfg_n(3)).chosen_sample == 1);
  const auto s = score_track(f.truth, f.ens, cfg_n(4));
  CHECK(s.chosen_sample == 3);
  CHECK(s.ade == 0.0);
  CHECK(s.coverage == 1.0);
  CHECK_THROWS_AS(score_track(f.truth, f.ens, cfg_n(5)), Error);
}

TEST_CASE("truncated winners yield to close full-length samples") {
  Fixture f(10);
  // Truncated sample slightly better than a full one: full wins within 10%.
  f.ens.samples = {sample_from(f.offset(0.1, 4), 10), sample_from(f.offset(0.105, 10), 10)};
  const auto close = score_track(f.truth, f.ens, cfg_n(2));
  CHECK(close.chosen_sample == 1);
  // Far worse full sample: the truncated one stays.
  f.ens.samples[1] = sample_from(f.offset(0.3, 10), 10);
  const auto far = score_track(f.truth, f.ens, cfg_n(2));
  CHECK(far.chosen_sample == 0);
  CHECK(far.per_step_error.size() == 4);
  CHECK(far.coverage == doctest::Approx(0.4));
}

TEST_CASE("discarded samples count only when nothing else is left") {
  Fixture f(10);
  f.ens.samples = {sample_from(f.offset(0.0, 2), 10, true), sample_from(f.offset(0.2, 10), 10)};
  CHECK(score_track(f.truth, f.ens, cfg_n(2)).chosen_sample == 1);
  f.ens.samples[1].discarded = true;
  CHECK(score_track(f.truth, f.ens, cfg_n(2)).chosen_sample == 0);
  f.ens.samples = {sample_from({}, 10)};
  const auto none = score_track(f.truth, f.ens, cfg_n(1));
  CHECK(!none.scored());
  CHECK(std::isnan(none.ade));
}

TEST_CASE("best-of-N equals exhaustive search on random full-length ensembles") {
  Rng rng(3);
  Fixture f(8);
  for (int trial = 0; trial < 100; ++trial) {
    f.ens.samples.clear();
    for (int i = 0; i < 6; ++i) {
      std::vector<GeoPoint> pts;
      for (int k = 0; k < 8; ++k) {
        pts.push_back({f.truth.points[k].lat + rng.uniform(-0.3, 0.3), f.truth.points[k].lon + rng.uniform(-0.3, 0.3)});
      }
      f.ens.samples.push_back(sample_from(pts, 8));
    }
    double prev = std::numeric_limits<double>::infinity();
    for (int n = 1; n <= 6; ++n) {
      int best = -1;
      double best_ade = 0.0;
      for (int i = 0; i < n; ++i) {
        const auto errs = sample_errors(f.truth.points, f.ens.samples[i], cfg_n(n));
        double sum = 0.0;
        for (double e : errs) sum += e;
        if (best < 0 || sum / errs.size() < best_ade) best = i, best_ade = sum / errs.size();
      }
      const auto s = score_track(f.truth, f.ens, cfg_n(n));
      REQUIRE(s.chosen_sample == best);
      REQUIRE(s.ade <= prev);
      prev = s.ade;
    }
  }
}

TEST_CASE("interval errors use the step at each mark") {
  Fixture f(10);
  f.ens.samples = {sample_from(f.offset(0.1, 5), 10)};
  EvalConfig c = cfg_n(1);
  c.interval_marks = {600.0, 3000.0, 3600.0};
  const auto s = score_track(f.truth, f.ens, c);
  REQUIRE(s.interval_errors.size() == 3);
  CHECK(s.interval_errors[0].error == doctest::Approx(s.per_step_error[0]));
  CHECK(s.interval_errors[1].error == doctest::Approx(s.per_step_error[4]));
  CHECK(std::isnan(s.interval_errors[2].error));
  CHECK(s.fde == s.per_step_error.back());
}

TEST_CASE("misaligned truth is rejected") {
  Fixture f(4);
  f.ens.samples = {sample_from(f.offset(0.0, 4), 4)};
  f.truth.t0 += 600;
  CHECK_THROWS_AS(score_track(f.truth, f.ens, cfg_n(1)), Error);
}

TEST_CASE("coarsened scoring is never worse") {
  Fixture f(6);
  f.ens.samples = {sample_from(f.offset(0.05, 6), 6)};
  EvalConfig coarse = cfg_n(1);
  coarse.coarsen_bits = 4;
  CHECK(score_track(f.truth, f.ens, coarse).ade <= score_track(f.truth, f.ens, cfg_n(1)).ade);
}

TEST_CASE("aggregate and reports") {
  Fixture f(10);
  f.ens.samples = {sample_from(f.offset(0.1, 10), 10)};
  EvalConfig c = cfg_n(1);
  c.interval_marks = {3000.0, 6000.0};
  c.units = Units::NauticalMiles;
  auto a = score_track(f.truth, f.ens, c);
  a.track_id = "a";
  TrackScore unscored;
  unscored.track_id = "b";
  unscored.ade = unscored.fde = std::nan("");
  const auto r = aggregate({a, unscored}, c, "model");
  CHECK(r.tracks == 2);
  CHECK(r.scored == 1);
  CHECK(r.mean_ade == doctest::Approx(a.ade));
  CHECK(r.mark_count[0] == 1);
  CHECK(r.mark_error[1] == doctest::Approx(a.per_step_error[9]));

  std::ostringstream text;
  write_report_text(text, {r});
  CHECK(text.str().find("Forecast Error (NM)") != std::string::npos);
  CHECK(text.str().find("Forecast Time (s)") != std::string::npos);
  CHECK(text.str().find("ADE (NM)") != std::string::npos);

  std::ostringstream csv;
  write_report_csv(csv, {a, unscored});
  std::istringstream lines(csv.str());
  std::string line;
  int n = 0;
  std::getline(lines, line);
  CHECK(line == "track_id,ade,fde,interval_offset,interval_error,chosen_sample,coverage");
  while (std::getline(lines, line)) ++n;
  CHECK(n == 3);
}
