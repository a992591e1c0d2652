#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "improv/generate.hpp"
#include "improv/model.hpp"

using namespace improv;
using Catch::Approx;

namespace {

/// flatten + dense network whose output is `scale` times the window's last
/// vector plus `bias`. scale = 1 is the identity on the last event.
struct StubNet {
  NetworkSpec spec;
  ParameterStore ps;
};

StubNet last_row_net(int lags, double scale, const std::array<double, kEventDims>& bias) {
  StubNet s;
  s.spec.lags = lags;
  s.spec.dims = kEventDims;
  s.spec.layers = {flatten_layer(), dense_layer(kEventDims)};
  s.ps = init_params(s.spec, 1);
  const std::size_t n = static_cast<std::size_t>(lags) * kEventDims;
  double* W = s.ps.data("dense_1/kernel");
  std::fill(W, W + kEventDims * n, 0.0);
  for (std::size_t m = 0; m < kEventDims; ++m) {
    W[m * n + (static_cast<std::size_t>(lags) - 1) * kEventDims + m] = scale;
  }
  double* b = s.ps.data("dense_1/bias");
  for (std::size_t m = 0; m < kEventDims; ++m) b[m] = bias[static_cast<std::size_t>(m)];
  return s;
}

StubNet constant_net(int lags, const std::array<double, kEventDims>& value) {
  return last_row_net(lags, 0.0, value);
}

RobustScaler identity_scaler() {
  RobustScaler s;
  s.center.fill(0.0);
  s.spread.fill(1.0);
  return s;
}

std::array<double, kEventDims> vec_for(std::vector<int> pitches, double vel, double dur,
                                       double ioi) {
  return event_to_vector(make_chord_event(std::move(pitches), vel, dur, ioi));
}

Corpus simple_corpus(int n_events) {
  Corpus c;
  c.name = "seed";
  c.piece_bounds = {0};
  for (int i = 0; i < n_events; ++i) {
    c.events.push_back(make_note_event(50 + (i % 12), 70, 200.0, 150.0));
  }
  return c;
}

}  // namespace

TEST_CASE("postprocessing decodes a clean prediction") {
  std::array<double, kEventDims> v{};
  v.fill(-1.0);
  v[0] = 60.4;
  v[1] = 64.5;  // rounds half away to 65
  v[10] = 79.5;
  v[11] = 249.6;
  v[12] = 0.0;
  const PostResult r = postprocess_prediction(v);
  REQUIRE(r.event.has_value());
  CHECK(r.event->pitches[0] == 60);
  CHECK(r.event->pitches[1] == 65);
  CHECK(r.event->sounded_count() == 2);
  CHECK(r.event->velocity == 80);
  CHECK(r.event->duration_ms == 250.0);
  CHECK(r.event->ioi_ms == 0.0);
  CHECK(r.reason.empty());
  CHECK(r.dropped_pitches == 0);
}

TEST_CASE("the sounded threshold sits halfway between fill and pitch zero") {
  std::array<double, kEventDims> v{};
  v.fill(-1.0);
  v[0] = 60.0;
  v[10] = 80.0;
  v[11] = 100.0;
  v[12] = 100.0;
  SECTION("exactly -0.5 stays silent") {
    v[1] = -0.5;
    const PostResult r = postprocess_prediction(v);
    REQUIRE(r.event.has_value());
    CHECK(r.event->sounded_count() == 1);
    CHECK(r.dropped_pitches == 0);
  }
  SECTION("just above -0.5 sounds but rounds below the playable floor") {
    v[1] = -0.49;
    const PostResult r = postprocess_prediction(v);
    REQUIRE(r.event.has_value());
    CHECK(r.event->sounded_count() == 1);
    CHECK(r.dropped_pitches == 1);
  }
}

TEST_CASE("out-of-range pitches are dropped one by one") {
  std::array<double, kEventDims> v{};
  v.fill(-1.0);
  v[0] = 11.4;   // rounds to 11, below the floor of 12
  v[1] = 11.5;   // rounds to 12, playable
  v[2] = 113.4;  // rounds to 113, playable ceiling
  v[3] = 113.6;  // rounds to 114, dropped
  v[10] = 64.0;
  v[11] = 200.0;
  v[12] = 150.0;
  const PostResult r = postprocess_prediction(v);
  REQUIRE(r.event.has_value());
  CHECK(r.event->sounded_count() == 2);
  CHECK(r.event->pitches[0] == 12);
  CHECK(r.event->pitches[1] == 113);
  CHECK(r.dropped_pitches == 2);
}

TEST_CASE("rejections name the first failing field") {
  std::array<double, kEventDims> base{};
  base.fill(-1.0);
  base[0] = 60.0;
  base[10] = 64.0;
  base[11] = 200.0;
  base[12] = 150.0;

  SECTION("no pitch at all") {
    auto v = base;
    v[0] = -1.0;
    const PostResult r = postprocess_prediction(v);
    CHECK(!r.event);
    CHECK(r.reason == "no-pitch");
  }
  SECTION("every pitch outside the playable range") {
    auto v = base;
    v[0] = 5.0;
    v[1] = 118.0;
    const PostResult r = postprocess_prediction(v);
    CHECK(!r.event);
    CHECK(r.reason == "no-pitch");
    CHECK(r.dropped_pitches == 2);
  }
  SECTION("velocity floor and ceiling") {
    auto v = base;
    v[10] = 19.4;  // rounds to 19 < 20
    CHECK(postprocess_prediction(v).reason == "velocity");
    v[10] = 127.5;  // rounds to 128
    CHECK(postprocess_prediction(v).reason == "velocity");
    v[10] = 19.5;  // rounds to 20, fine
    CHECK(postprocess_prediction(v).event.has_value());
  }
  SECTION("duration bounds check the rounded value") {
    auto v = base;
    v[11] = 15000.4;
    CHECK(postprocess_prediction(v).event.has_value());
    v[11] = 15000.5;
    CHECK(postprocess_prediction(v).reason == "duration");
    v[11] = -0.4;  // rounds to 0, allowed
    CHECK(postprocess_prediction(v).event.has_value());
    v[11] = -0.6;  // rounds to -1
    CHECK(postprocess_prediction(v).reason == "duration");
  }
  SECTION("ioi is the last gate") {
    auto v = base;
    v[12] = 15001.0;
    CHECK(postprocess_prediction(v).reason == "ioi");
  }
  SECTION("earlier failures win") {
    auto v = base;
    v[10] = 5.0;      // bad velocity
    v[11] = 99999.0;  // bad duration too
    CHECK(postprocess_prediction(v).reason == "velocity");
  }
  SECTION("non-finite values abort") {
    auto v = base;
    v[11] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(postprocess_prediction(v), NumericError);
  }
}

TEST_CASE("duplicate rounded pitches collapse into one chord slot") {
  std::array<double, kEventDims> v{};
  v.fill(-1.0);
  v[0] = 59.7;
  v[1] = 60.3;  // both round to 60
  v[10] = 64.0;
  v[11] = 200.0;
  v[12] = 150.0;
  const PostResult r = postprocess_prediction(v);
  REQUIRE(r.event.has_value());
  CHECK(r.event->sounded_count() == 1);
  CHECK(r.event->pitches[0] == 60);
}

TEST_CASE("generation bookkeeping counts steps, reseeds and acceptances") {
  const auto value = vec_for({60}, 80, 250, 125);
  const StubNet net = constant_net(10, value);
  const Corpus seed = simple_corpus(12);
  GenConfig cfg;
  cfg.n_predictions = 25;
  cfg.reseed_interval = 10;
  cfg.seed = 4;
  const GenReport rep = generate(net.spec, net.ps, identity_scaler(), seed, cfg);

  CHECK(rep.records.size() == 25);
  CHECK(rep.accepted() == 25);
  CHECK(rep.rejected() == 0);
  CHECK(rep.rejected_by_reason.empty());
  CHECK(rep.reseed_steps == std::vector<int>{10, 20});
  CHECK(rep.seed_starts.size() == 3);
  for (std::size_t s : rep.seed_starts) CHECK(s <= 2);  // 12 events, 10 lags
  for (std::size_t i = 0; i < rep.records.size(); ++i) {
    CHECK(rep.records[i].step == static_cast<int>(i) + 1);
    CHECK(rep.records[i].accepted);
    CHECK(rep.records[i].raw == value);
  }
  for (const Event& e : rep.events) {
    CHECK(e.pitches[0] == 60);
    CHECK(e.velocity == 80);
    CHECK(e.duration_ms == 250.0);
    CHECK(e.ioi_ms == 125.0);
  }

  const GenReport again = generate(net.spec, net.ps, identity_scaler(), seed, cfg);
  CHECK(again.seed_starts == rep.seed_starts);
}

TEST_CASE("a thousand predictions at interval ten reseed a hundred times") {
  const StubNet net = constant_net(10, vec_for({60}, 80, 250, 125));
  const Corpus seed = simple_corpus(40);
  GenConfig cfg;
  cfg.n_predictions = 1000;
  cfg.reseed_interval = 10;
  const GenReport rep = generate(net.spec, net.ps, identity_scaler(), seed, cfg);
  CHECK(rep.reseed_steps.size() == 100);
  CHECK(rep.reseed_steps.front() == 10);
  CHECK(rep.reseed_steps.back() == 1000);
  CHECK(rep.seed_starts.size() == 101);
}

TEST_CASE("the window keeps the raw prediction even after a rejection") {
  // The halving net scales the previous prediction by exactly 0.5, so every
  // raw record is a power-of-two fraction of the seed event regardless of
  // whether postprocessing accepted the step before it.
  const StubNet net = last_row_net(10, 0.5, std::array<double, kEventDims>{});
  Corpus seed;
  seed.name = "one-piece";
  seed.piece_bounds = {0};
  for (int i = 0; i < 9; ++i) seed.events.push_back(make_note_event(40, 60, 100.0, 100.0));
  seed.events.push_back(make_note_event(113, 100, 1000.0, 500.0));
  GenConfig cfg;
  cfg.n_predictions = 5;
  cfg.reseed_interval = 100;  // never reseeds within the run
  const GenReport rep = generate(net.spec, net.ps, identity_scaler(), seed, cfg);

  REQUIRE(rep.seed_starts == std::vector<std::size_t>{0});
  CHECK(rep.reseed_steps.empty());
  REQUIRE(rep.records.size() == 5);
  for (int k = 1; k <= 5; ++k) {
    const auto& r = rep.records[static_cast<std::size_t>(k - 1)];
    const double f = std::pow(0.5, k);
    CHECK(r.raw[0] == 113.0 * f);  // exact dyadic arithmetic
    CHECK(r.raw[10] == 100.0 * f);
    CHECK(r.raw[11] == 1000.0 * f);
    CHECK(r.raw[12] == 500.0 * f);
  }
  // Steps: 57/50 ok, 28/25 ok, vel 12.5 -> 13 too quiet, then pitches gone.
  CHECK(rep.records[0].accepted);
  CHECK(rep.records[1].accepted);
  CHECK(!rep.records[2].accepted);
  CHECK(rep.records[2].reason == "velocity");
  CHECK(!rep.records[3].accepted);
  CHECK(rep.records[3].reason == "no-pitch");
  CHECK(!rep.records[4].accepted);
  CHECK(rep.accepted() == 2);
  CHECK(rep.rejected() == 3);
  CHECK(rep.rejected_by_reason.at("velocity") == 1);
  CHECK(rep.rejected_by_reason.at("no-pitch") == 2);
  CHECK(rep.events[0].pitches[0] == 57);
  CHECK(rep.events[1].pitches[0] == 28);
}

TEST_CASE("seed windows never straddle piece boundaries") {
  const StubNet net = constant_net(10, vec_for({60}, 80, 250, 125));
  Corpus seed;
  seed.name = "two-piece";
  for (int i = 0; i < 5; ++i) seed.events.push_back(make_note_event(30, 60, 100.0, 100.0));
  for (int i = 0; i < 12; ++i) seed.events.push_back(make_note_event(90, 60, 100.0, 100.0));
  seed.piece_bounds = {0, 5};
  GenConfig cfg;
  cfg.n_predictions = 40;
  cfg.reseed_interval = 2;
  const GenReport rep = generate(net.spec, net.ps, identity_scaler(), seed, cfg);
  for (std::size_t s : rep.seed_starts) {
    CHECK(s >= 5);  // the 5-event piece cannot host a 10-lag window
    CHECK(s <= 7);
  }
}

TEST_CASE("generation without a long enough piece is a data error") {
  const StubNet net = constant_net(10, vec_for({60}, 80, 250, 125));
  const Corpus seed = simple_corpus(9);
  CHECK_THROWS_AS(generate(net.spec, net.ps, identity_scaler(), seed, GenConfig{}), DataError);

  GenConfig bad;
  bad.n_predictions = 0;
  CHECK_THROWS_AS(generate(net.spec, net.ps, identity_scaler(), simple_corpus(12), bad),
                  DataError);
  bad.n_predictions = 1;
  bad.reseed_interval = 0;
  CHECK_THROWS_AS(generate(net.spec, net.ps, identity_scaler(), simple_corpus(12), bad),
                  DataError);
}

TEST_CASE("free-running the identity settles immediately") {
  const StubNet net = last_row_net(10, 1.0, std::array<double, kEventDims>{});
  std::vector<std::array<double, kEventDims>> window(10);
  Rng rng(8);
  for (auto& v : window) {
    for (double& x : v) x = rng.normal();
  }
  const ConvergenceResult res = convergence_probe(net.spec, net.ps, window);
  CHECK(res.converged);
  CHECK(res.fixpoint_step == 1);
  REQUIRE(res.deltas.size() == 100);
  for (double d : res.deltas) CHECK(d == 0.0);
}

TEST_CASE("a constant network settles on the second step") {
  std::array<double, kEventDims> c{};
  c.fill(0.25);
  const StubNet net = constant_net(10, c);
  std::vector<std::array<double, kEventDims>> window(10);
  for (auto& v : window) v.fill(2.0);
  const ConvergenceResult res = convergence_probe(net.spec, net.ps, window);
  CHECK(res.converged);
  CHECK(res.fixpoint_step == 2);
  CHECK(res.deltas[0] == Approx(1.75));
  CHECK(res.deltas[1] == 0.0);
}

TEST_CASE("an oscillator never settles") {
  const StubNet net = last_row_net(10, -1.0, std::array<double, kEventDims>{});
  std::vector<std::array<double, kEventDims>> window(10);
  for (auto& v : window) v.fill(1.0);
  const ConvergenceResult res = convergence_probe(net.spec, net.ps, window, 1e-6, 50);
  CHECK(!res.converged);
  CHECK(res.fixpoint_step == 0);
  CHECK(res.deltas.size() == 50);
  CHECK(res.deltas[0] == Approx(2.0));  // 1 -> -1
  CHECK(res.deltas[1] == Approx(2.0));
}

TEST_CASE("the probe validates its window") {
  const StubNet net = last_row_net(10, 1.0, std::array<double, kEventDims>{});
  std::vector<std::array<double, kEventDims>> window(9);
  CHECK_THROWS_AS(convergence_probe(net.spec, net.ps, window), std::invalid_argument);
}
