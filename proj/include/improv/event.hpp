#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "improv/errors.hpp"

namespace improv {

inline constexpr int kChordSlots = 10;
inline constexpr int kEventDims = 13;
inline constexpr int kFillPitch = -1;
inline constexpr int kPitchInMin = 0;
inline constexpr int kPitchInMax = 120;
inline constexpr int kVelocityInMin = 0;
inline constexpr int kVelocityInMax = 127;
inline constexpr double kMaxTimeMs = 20000.0;
inline constexpr double kChordThresholdMs = 35.0;

/// One keyboard note as it comes off a performance or a file: absolute
/// onset, MIDI pitch, key velocity, duration. All times in milliseconds.
struct TimedNote {
  double onset_ms = 0.0;
  int pitch = 0;
  int velocity = 0;
  double duration_ms = 0.0;
};

/// One note-or-chord event. The canonical form keeps the sounded pitches
/// as a strictly ascending prefix of `pitches` with every remaining slot
/// holding the fill value -1. Together with velocity, duration and the
/// inter-onset interval to the next event this is the 13-component vector
/// the models consume.
struct Event {
  std::array<int, kChordSlots> pitches{};
  int velocity = 0;
  double duration_ms = 0.0;
  double ioi_ms = 0.0;

  int sounded_count() const {
    int n = 0;
    while (n < kChordSlots && pitches[n] != kFillPitch) ++n;
    return n;
  }
  bool is_chord() const { return sounded_count() >= 2; }

  bool operator==(const Event&) const = default;
};

inline Event make_note_event(int pitch, int velocity, double duration_ms, double ioi_ms) {
  Event e;
  e.pitches.fill(kFillPitch);
  e.pitches[0] = pitch;
  e.velocity = velocity;
  e.duration_ms = duration_ms;
  e.ioi_ms = ioi_ms;
  return e;
}

inline Event make_chord_event(std::vector<int> pitches, int velocity, double duration_ms,
                              double ioi_ms) {
  std::sort(pitches.begin(), pitches.end());
  pitches.erase(std::unique(pitches.begin(), pitches.end()), pitches.end());
  Event e;
  e.pitches.fill(kFillPitch);
  for (std::size_t i = 0; i < pitches.size() && i < kChordSlots; ++i) {
    e.pitches[i] = pitches[i];
  }
  e.velocity = velocity;
  e.duration_ms = duration_ms;
  e.ioi_ms = ioi_ms;
  return e;
}

/// Returns a description of the first violated Event invariant, or nullopt
/// for a canonical event.
inline std::optional<std::string> event_invariant_violation(const Event& e) {
  if (e.pitches[0] == kFillPitch) return "no sounded pitch";
  bool fill_seen = false;
  for (int i = 0; i < kChordSlots; ++i) {
    const int p = e.pitches[i];
    if (p == kFillPitch) {
      fill_seen = true;
      continue;
    }
    if (fill_seen) return "sounded pitch after fill slot";
    if (i > 0 && e.pitches[i - 1] != kFillPitch && e.pitches[i - 1] >= p) {
      return "sounded pitches not strictly ascending";
    }
  }
  if (!(e.duration_ms >= 0.0 && e.duration_ms <= kMaxTimeMs)) {
    return "duration outside [0, 20000] ms";
  }
  if (!(e.ioi_ms >= 0.0 && e.ioi_ms <= kMaxTimeMs)) {
    return "ioi outside [0, 20000] ms";
  }
  return std::nullopt;
}

struct GroupingResult {
  std::vector<Event> events;
  /// Notes whose pitch fell beyond the 10 lowest of a group.
  std::size_t discarded_notes = 0;
};

/// Groups notes into chord/note events. A group collects every note whose
/// onset lies within threshold_ms of the group's FIRST note (anchor-based,
/// not chained). Group pitches are deduplicated, sorted ascending and
/// truncated to the 10 lowest; velocity is the rounded mean over members;
/// duration comes from the earliest member (ties broken by lowest pitch).
/// A group's ioi is the next anchor's onset minus its own; the final group
/// takes its own duration as ioi.
inline GroupingResult group_notes_to_events(std::span<const TimedNote> notes,
                                            double threshold_ms = kChordThresholdMs) {
  GroupingResult result;
  if (notes.empty()) return result;
  for (std::size_t i = 1; i < notes.size(); ++i) {
    if (notes[i].onset_ms < notes[i - 1].onset_ms) {
      throw std::invalid_argument("group_notes_to_events: notes not sorted by onset");
    }
  }
  std::vector<double> anchors;
  std::size_t i = 0;
  while (i < notes.size()) {
    const double anchor = notes[i].onset_ms;
    std::size_t j = i;
    while (j < notes.size() && notes[j].onset_ms <= anchor + threshold_ms) ++j;

    std::vector<int> pitches;
    double vel_sum = 0.0;
    const TimedNote* earliest = &notes[i];
    for (std::size_t k = i; k < j; ++k) {
      pitches.push_back(notes[k].pitch);
      vel_sum += notes[k].velocity;
      if (notes[k].onset_ms < earliest->onset_ms ||
          (notes[k].onset_ms == earliest->onset_ms && notes[k].pitch < earliest->pitch)) {
        earliest = &notes[k];
      }
    }
    std::sort(pitches.begin(), pitches.end());
    pitches.erase(std::unique(pitches.begin(), pitches.end()), pitches.end());
    if (pitches.size() > static_cast<std::size_t>(kChordSlots)) {
      // Keep the 10 lowest; tally the members whose pitch was cut.
      std::vector<int> kept(pitches.begin(), pitches.begin() + kChordSlots);
      for (std::size_t k = i; k < j; ++k) {
        if (notes[k].pitch > kept.back()) ++result.discarded_notes;
      }
      pitches = std::move(kept);
    }

    Event e;
    e.pitches.fill(kFillPitch);
    for (std::size_t s = 0; s < pitches.size(); ++s) e.pitches[s] = pitches[s];
    e.velocity = static_cast<int>(std::llround(vel_sum / static_cast<double>(j - i)));
    e.duration_ms = std::min(earliest->duration_ms, kMaxTimeMs);
    result.events.push_back(e);
    anchors.push_back(anchor);
    i = j;
  }
  for (std::size_t g = 0; g + 1 < result.events.size(); ++g) {
    result.events[g].ioi_ms = std::min(anchors[g + 1] - anchors[g], kMaxTimeMs);
  }
  result.events.back().ioi_ms = result.events.back().duration_ms;
  return result;
}

/// Layout: [p1..p10, velocity, duration_ms, ioi_ms].
inline std::array<double, kEventDims> event_to_vector(const Event& e) {
  std::array<double, kEventDims> v{};
  for (int i = 0; i < kChordSlots; ++i) v[i] = static_cast<double>(e.pitches[i]);
  v[10] = static_cast<double>(e.velocity);
  v[11] = e.duration_ms;
  v[12] = e.ioi_ms;
  return v;
}

struct EventDecode {
  std::optional<Event> event;
  std::string error;
  explicit operator bool() const { return event.has_value(); }
};

inline int round_half_away(double x) {
  return static_cast<int>(std::llround(x));
}

/// Raw decode of a 13-component vector. Pitch slots above -0.5 count as
/// sounded and are rounded to the nearest integer, as is velocity; sounded
/// pitches are re-canonicalized (sorted, deduplicated, -1 refill). Output
/// range policy is not applied here; that belongs to generation.
inline EventDecode vector_to_event(const std::array<double, kEventDims>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return {std::nullopt, "non-finite component"};
  }
  std::vector<int> pitches;
  for (int i = 0; i < kChordSlots; ++i) {
    if (v[i] > -0.5) pitches.push_back(round_half_away(v[i]));
  }
  if (pitches.empty()) return {std::nullopt, "no sounded pitch"};
  if (v[11] < 0.0 || v[11] > kMaxTimeMs) return {std::nullopt, "duration outside [0, 20000] ms"};
  if (v[12] < 0.0 || v[12] > kMaxTimeMs) return {std::nullopt, "ioi outside [0, 20000] ms"};
  Event e = make_chord_event(std::move(pitches), round_half_away(v[10]), v[11], v[12]);
  return {e, ""};
}

}
