#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <vector>

#include "improv/event.hpp"

using namespace improv;
using Catch::Approx;

TEST_CASE("note and chord constructors produce canonical events") {
  const Event n = make_note_event(60, 80, 500.0, 250.0);
  CHECK(n.sounded_count() == 1);
  CHECK_FALSE(n.is_chord());
  CHECK(n.pitches[0] == 60);
  CHECK(n.pitches[1] == kFillPitch);
  CHECK_FALSE(event_invariant_violation(n).has_value());

  const Event c = make_chord_event({67, 60, 64, 60}, 90, 400.0, 300.0);
  CHECK(c.sounded_count() == 3);
  CHECK(c.is_chord());
  CHECK(c.pitches[0] == 60);
  CHECK(c.pitches[1] == 64);
  CHECK(c.pitches[2] == 67);
  CHECK(c.pitches[3] == kFillPitch);
  CHECK_FALSE(event_invariant_violation(c).has_value());
}

TEST_CASE("invariant checker spots non-canonical events") {
  Event e = make_chord_event({60, 64}, 80, 100.0, 100.0);
  SECTION("no sounded pitch") {
    e.pitches.fill(kFillPitch);
    CHECK(event_invariant_violation(e) == "no sounded pitch");
  }
  SECTION("pitch after fill slot") {
    e.pitches[1] = kFillPitch;
    e.pitches[2] = 70;
    CHECK(event_invariant_violation(e) == "sounded pitch after fill slot");
  }
  SECTION("descending pitches") {
    e.pitches[0] = 64;
    e.pitches[1] = 60;
    CHECK(event_invariant_violation(e) == "sounded pitches not strictly ascending");
  }
  SECTION("duplicate pitches") {
    e.pitches[0] = 60;
    e.pitches[1] = 60;
    CHECK(event_invariant_violation(e) == "sounded pitches not strictly ascending");
  }
  SECTION("duration out of range") {
    e.duration_ms = 20000.5;
    CHECK(event_invariant_violation(e) == "duration outside [0, 20000] ms");
  }
  SECTION("negative ioi") {
    e.ioi_ms = -1.0;
    CHECK(event_invariant_violation(e) == "ioi outside [0, 20000] ms");
  }
}

TEST_CASE("grouping is anchored at the first note, not chained") {
  // 0 and 20 ms fall inside the 35 ms window of the first note; 40 ms does
  // not, even though it is within 35 ms of the 20 ms note.
  const std::vector<TimedNote> notes{
      {0.0, 60, 80, 500.0},
      {20.0, 64, 91, 400.0},
      {40.0, 67, 100, 300.0},
  };
  const GroupingResult r = group_notes_to_events(notes);
  REQUIRE(r.events.size() == 2);
  CHECK(r.discarded_notes == 0);

  const Event& a = r.events[0];
  CHECK(a.sounded_count() == 2);
  CHECK(a.pitches[0] == 60);
  CHECK(a.pitches[1] == 64);
  CHECK(a.velocity == 86);  // mean of 80 and 91 is 85.5, rounded away from zero
  CHECK(a.duration_ms == Approx(500.0));  // earliest member
  CHECK(a.ioi_ms == Approx(40.0));        // anchor-to-anchor

  const Event& b = r.events[1];
  CHECK(b.sounded_count() == 1);
  CHECK(b.pitches[0] == 67);
  CHECK(b.velocity == 100);
  CHECK(b.duration_ms == Approx(300.0));
  CHECK(b.ioi_ms == Approx(300.0));  // final event: ioi = own duration
}

TEST_CASE("grouping duration ties break toward the lowest pitch") {
  const std::vector<TimedNote> notes{
      {0.0, 60, 80, 500.0},
      {0.0, 55, 80, 123.0},
  };
  const GroupingResult r = group_notes_to_events(notes);
  REQUIRE(r.events.size() == 1);
  CHECK(r.events[0].duration_ms == Approx(123.0));
}

TEST_CASE("grouping keeps the 10 lowest pitches and tallies the rest") {
  std::vector<TimedNote> notes;
  for (int i = 0; i < 12; ++i) notes.push_back({static_cast<double>(i), 50 + i * 2, 70, 200.0});
  const GroupingResult r = group_notes_to_events(notes);
  REQUIRE(r.events.size() == 1);
  CHECK(r.events[0].sounded_count() == 10);
  CHECK(r.events[0].pitches[9] == 68);  // 50,52,...,68 kept; 70 and 72 cut
  CHECK(r.discarded_notes == 2);
}

TEST_CASE("grouping deduplicates pitches inside a group") {
  const std::vector<TimedNote> notes{
      {0.0, 60, 80, 300.0},
      {10.0, 60, 90, 250.0},
  };
  const GroupingResult r = group_notes_to_events(notes);
  REQUIRE(r.events.size() == 1);
  CHECK(r.events[0].sounded_count() == 1);
  CHECK(r.events[0].velocity == 85);  // both members still average
}

TEST_CASE("grouping clamps absurd durations and iois to 20 s") {
  const std::vector<TimedNote> notes{
      {0.0, 60, 80, 50000.0},
      {30000.0, 62, 80, 100.0},
  };
  const GroupingResult r = group_notes_to_events(notes);
  REQUIRE(r.events.size() == 2);
  CHECK(r.events[0].duration_ms == Approx(20000.0));
  CHECK(r.events[0].ioi_ms == Approx(20000.0));
}

TEST_CASE("grouping rejects unsorted input") {
  const std::vector<TimedNote> notes{{100.0, 60, 80, 100.0}, {0.0, 62, 80, 100.0}};
  CHECK_THROWS_AS(group_notes_to_events(notes), std::invalid_argument);
}

TEST_CASE("grouping with zero threshold splits everything not exactly simultaneous") {
  const std::vector<TimedNote> notes{{0.0, 60, 80, 100.0}, {0.0, 64, 80, 100.0},
                                     {1.0, 67, 80, 100.0}};
  const GroupingResult r = group_notes_to_events(notes, 0.0);
  REQUIRE(r.events.size() == 2);
  CHECK(r.events[0].sounded_count() == 2);
  CHECK(r.events[1].sounded_count() == 1);
}

TEST_CASE("event vectors lay out as p1..p10, velocity, duration, ioi") {
  const Event e = make_chord_event({60, 64}, 90, 400.0, 300.0);
  const auto v = event_to_vector(e);
  CHECK(v[0] == 60.0);
  CHECK(v[1] == 64.0);
  CHECK(v[2] == -1.0);
  CHECK(v[9] == -1.0);
  CHECK(v[10] == 90.0);
  CHECK(v[11] == 400.0);
  CHECK(v[12] == 300.0);
}

TEST_CASE("vector decode rounds, resorts and refuses nonsense") {
  SECTION("round trip") {
    const Event e = make_chord_event({60, 64, 67}, 90, 400.0, 300.0);
    const EventDecode d = vector_to_event(event_to_vector(e));
    REQUIRE(d);
    CHECK(*d.event == e);
  }
  SECTION("slots at or below -0.5 stay silent") {
    std::array<double, kEventDims> v{60.2, -0.5, -0.4, -1, -1, -1, -1, -1, -1, -1, 80.4, 100, 100};
    const EventDecode d = vector_to_event(v);
    REQUIRE(d);
    CHECK(d.event->sounded_count() == 2);
    CHECK(d.event->pitches[0] == 0);  // -0.4 rounds to 0
    CHECK(d.event->pitches[1] == 60);
    CHECK(d.event->velocity == 80);
  }
  SECTION("fractional pitches re-sort and deduplicate") {
    std::array<double, kEventDims> v{64.2, 59.7, 60.4, -1, -1, -1, -1, -1, -1, -1, 77.5, 50, 60};
    const EventDecode d = vector_to_event(v);
    REQUIRE(d);
    CHECK(d.event->pitches[0] == 60);
    CHECK(d.event->pitches[1] == 64);
    CHECK(d.event->sounded_count() == 2);
    CHECK(d.event->velocity == 78);  // half rounds away from zero
  }
  SECTION("no sounded pitch") {
    std::array<double, kEventDims> v{-1, -1, -1, -1, -1, -1, -1, -1, -1, -1, 80, 100, 100};
    const EventDecode d = vector_to_event(v);
    CHECK_FALSE(d);
    CHECK(d.error == "no sounded pitch");
  }
  SECTION("duration out of range") {
    std::array<double, kEventDims> v{60, -1, -1, -1, -1, -1, -1, -1, -1, -1, 80, 20001.0, 100};
    CHECK_FALSE(vector_to_event(v));
  }
  SECTION("non-finite component") {
    std::array<double, kEventDims> v{60, -1, -1, -1, -1, -1, -1, -1, -1, -1, 80, 100, 100};
    v[12] = std::numeric_limits<double>::quiet_NaN();
    const EventDecode d = vector_to_event(v);
    CHECK_FALSE(d);
    CHECK(d.error == "non-finite component");
  }
}

TEST_CASE("round_half_away rounds halves away from zero") {
  CHECK(round_half_away(0.5) == 1);
  CHECK(round_half_away(1.5) == 2);
  CHECK(round_half_away(-0.5) == -1);
  CHECK(round_half_away(-1.5) == -2);
  CHECK(round_half_away(2.4) == 2);
  CHECK(round_half_away(-2.4) == -2);
}
