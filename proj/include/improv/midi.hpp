#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "improv/errors.hpp"
#include "improv/event.hpp"

namespace improv {

/// Piecewise tick->milliseconds conversion. Changes hold (tick,
/// microseconds-per-quarter) pairs with strictly increasing ticks; a
/// default of 500000 us/quarter applies from tick 0 when no change is
/// present there.
struct TempoMap {
  int division = 500;
  std::vector<std::pair<std::int64_t, std::int64_t>> changes;

  void normalize() {
    std::stable_sort(changes.begin(), changes.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    // Later events at the same tick win.
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    for (const auto& c : changes) {
      if (!out.empty() && out.back().first == c.first) {
        out.back().second = c.second;
      } else {
        out.push_back(c);
      }
    }
    changes = std::move(out);
    if (changes.empty() || changes.front().first > 0) {
      changes.insert(changes.begin(), {0, 500000});
    }
    ms_at_.clear();
    double ms = 0.0;
    for (std::size_t i = 0; i < changes.size(); ++i) {
      if (i > 0) {
        const double dticks = static_cast<double>(changes[i].first - changes[i - 1].first);
        ms += dticks * static_cast<double>(changes[i - 1].second) / (1000.0 * division);
      }
      ms_at_.push_back(ms);
    }
  }

  double tick_to_ms(std::int64_t tick) const {
    std::size_t i = changes.size() - 1;
    while (i > 0 && changes[i].first > tick) --i;
    const double dticks = static_cast<double>(tick - changes[i].first);
    return ms_at_[i] + dticks * static_cast<double>(changes[i].second) / (1000.0 * division);
  }

 private:
  std::vector<double> ms_at_;
};

struct SmfReadResult {
  std::vector<TimedNote> notes;
  std::vector<std::string> warnings;
};

namespace detail {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint8_t peek() const {
    if (pos_ >= bytes_.size()) throw ParseError("unexpected end of file", pos_);
    return bytes_[pos_];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] << 8 | bytes_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = v << 8 | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }
  std::uint32_t varlen() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = v << 7 | (b & 0x7f);
      if (!(b & 0x80)) return v;
    }
    throw ParseError("variable-length quantity longer than 4 bytes", pos_);
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  /// Consumes the 4-byte tag either way; returns whether it matched.
  bool expect_tag(const char* tag) {
    need(4);
    bool match = true;
    for (int i = 0; i < 4; ++i) {
      if (bytes_[pos_ + i] != static_cast<std::uint8_t>(tag[i])) match = false;
    }
    pos_ += 4;
    return match;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ParseError("truncated file", pos_);
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct RawNoteEvent {
  std::int64_t tick;
  bool on;
  int channel;
  int pitch;
  int velocity;
};

}  // namespace detail

/// Reads an SMF format 0 or 1 file into onset-sorted TimedNotes. All tracks
/// are merged, note-on with velocity 0 counts as note-off, and durations
/// come from the matching note-off (same pitch and channel, first-in
/// first-out). Unmatched note-ons are closed at their track's end with a
/// warning; pitches above 120 are dropped with a warning; durations are
/// clamped to 20 s.
inline SmfReadResult read_smf(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  SmfReadResult out;

  if (bytes.size() < 4 || !r.expect_tag("MThd")) throw ParseError("missing MThd header", 0);
  const std::uint32_t hlen = r.u32();
  if (hlen < 6) throw ParseError("header chunk too short", r.pos());
  const std::uint16_t format = r.u16();
  const std::uint16_t ntrks = r.u16();
  const std::uint16_t division_raw = r.u16();
  if (format > 1) throw ParseError("unsupported SMF format " + std::to_string(format), r.pos() - 4);
  if (division_raw & 0x8000) throw ParseError("SMPTE division unsupported", r.pos() - 2);
  if (division_raw == 0) throw ParseError("zero division", r.pos() - 2);
  r.skip(hlen - 6);

  TempoMap tempo;
  tempo.division = division_raw;
  std::vector<std::vector<detail::RawNoteEvent>> tracks;
  std::vector<std::int64_t> track_ends;

  for (std::uint16_t t = 0; t < ntrks; ++t) {
    while (!r.expect_tag("MTrk")) {
      // Unknown chunk: skip it wholesale.
      const std::uint32_t len = r.u32();
      r.skip(len);
      out.warnings.push_back("skipped unknown chunk before track " + std::to_string(t));
    }
    const std::uint32_t tlen = r.u32();
    const std::size_t track_end_pos = r.pos() + tlen;
    std::int64_t tick = 0;
    int running_status = -1;
    std::vector<detail::RawNoteEvent> events;
    bool ended = false;
    while (r.pos() < track_end_pos && !ended) {
      tick += r.varlen();
      std::uint8_t status = r.peek();
      if (status < 0x80) {
        if (running_status < 0) throw ParseError("data byte without running status", r.pos());
        status = static_cast<std::uint8_t>(running_status);
      } else {
        r.skip(1);
      }
      if (status < 0xf0) {
        running_status = status;
        const int kind = status >> 4;
        const int channel = status & 0x0f;
        const int d1 = r.u8();
        switch (kind) {
          case 0x8:
          case 0x9: {
            const int d2 = r.u8();
            const bool on = kind == 0x9 && d2 > 0;
            events.push_back({tick, on, channel, d1, d2});
            break;
          }
          case 0xa:
          case 0xb:
          case 0xe:
            r.skip(1);
            break;
          case 0xc:
          case 0xd:
            break;
          default:
            break;
        }
      } else if (status == 0xff) {
        running_status = -1;
        const std::uint8_t type = r.u8();
        const std::uint32_t len = r.varlen();
        if (type == 0x51 && len == 3) {
          std::int64_t uspq = 0;
          for (int i = 0; i < 3; ++i) uspq = uspq << 8 | r.u8();
          tempo.changes.push_back({tick, uspq});
        } else if (type == 0x2f) {
          r.skip(len);
          ended = true;
        } else {
          r.skip(len);
        }
      } else if (status == 0xf0 || status == 0xf7) {
        running_status = -1;
        const std::uint32_t len = r.varlen();
        r.skip(len);
      } else {
        throw ParseError("unexpected status byte " + std::to_string(status), r.pos() - 1);
      }
    }
    if (r.pos() < track_end_pos) r.skip(track_end_pos - r.pos());
    tracks.push_back(std::move(events));
    track_ends.push_back(tick);
  }

  tempo.normalize();

  std::size_t dropped_high = 0;
  std::size_t clamped = 0;
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    // FIFO pairing of ons to offs per (channel, pitch).
    std::map<std::pair<int, int>, std::deque<std::pair<std::int64_t, int>>> open;
    std::size_t unmatched_offs = 0;
    for (const auto& ev : tracks[t]) {
      const auto key = std::make_pair(ev.channel, ev.pitch);
      if (ev.on) {
        open[key].push_back({ev.tick, ev.velocity});
      } else {
        auto it = open.find(key);
        if (it == open.end() || it->second.empty()) {
          ++unmatched_offs;
          continue;
        }
        const auto [on_tick, vel] = it->second.front();
        it->second.pop_front();
        const double onset = tempo.tick_to_ms(on_tick);
        const double dur = tempo.tick_to_ms(ev.tick) - onset;
        out.notes.push_back({onset, ev.pitch, vel, dur});
      }
    }
    std::size_t hanging = 0;
    for (auto& [key, queue] : open) {
      while (!queue.empty()) {
        const auto [on_tick, vel] = queue.front();
        queue.pop_front();
        const double onset = tempo.tick_to_ms(on_tick);
        const double dur = tempo.tick_to_ms(track_ends[t]) - onset;
        out.notes.push_back({onset, key.second, vel, dur});
        ++hanging;
      }
    }
    if (hanging > 0) {
      out.warnings.push_back("track " + std::to_string(t) + ": " + std::to_string(hanging) +
                             " unmatched note-on(s) closed at end of track");
    }
    if (unmatched_offs > 0) {
      out.warnings.push_back("track " + std::to_string(t) + ": " + std::to_string(unmatched_offs) +
                             " note-off(s) without a matching note-on ignored");
    }
  }

  std::erase_if(out.notes, [&](const TimedNote& n) {
    if (n.pitch > kPitchInMax) {
      ++dropped_high;
      return true;
    }
    return false;
  });
  for (auto& n : out.notes) {
    if (n.duration_ms > kMaxTimeMs) {
      n.duration_ms = kMaxTimeMs;
      ++clamped;
    }
  }
  if (dropped_high > 0) {
    out.warnings.push_back(std::to_string(dropped_high) + " note(s) above pitch 120 dropped");
  }
  if (clamped > 0) {
    out.warnings.push_back(std::to_string(clamped) + " duration(s) clamped to 20000 ms");
  }

  std::stable_sort(out.notes.begin(), out.notes.end(), [](const TimedNote& a, const TimedNote& b) {
    if (a.onset_ms != b.onset_ms) return a.onset_ms < b.onset_ms;
    if (a.pitch != b.pitch) return a.pitch < b.pitch;
    return a.velocity < b.velocity;
  });
  return out;
}

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
inline void put_varlen(std::vector<std::uint8_t>& b, std::uint32_t v) {
  std::uint8_t stack[5];
  int n = 0;
  stack[n++] = static_cast<std::uint8_t>(v & 0x7f);
  while ((v >>= 7) != 0) stack[n++] = static_cast<std::uint8_t>((v & 0x7f) | 0x80);
  while (n > 0) b.push_back(stack[--n]);
}

struct OutMsg {
  std::int64_t tick;
  int order;  // offs before ons at a tick; zero-duration offs right after their on
  std::uint8_t status, d1, d2;
};

}  // namespace detail

/// Writes events as SMF format 0 on channel 0 with division 500 and a
/// single 500000 us/quarter tempo event, so 1 tick is exactly 1 ms. Each
/// event emits simultaneous note-ons for its sounded pitches at its
/// cumulative-ioi onset and note-offs at onset + duration. Running status
/// is never emitted.
inline std::vector<std::uint8_t> write_smf(std::span<const Event> events) {
  std::vector<detail::OutMsg> msgs;
  double onset = 0.0;
  for (const Event& e : events) {
    const std::int64_t on_tick = std::llround(onset);
    const std::int64_t off_tick = std::llround(onset + e.duration_ms);
    const auto vel = static_cast<std::uint8_t>(std::clamp(e.velocity, 1, 127));
    for (int i = 0; i < e.sounded_count(); ++i) {
      const auto pitch = static_cast<std::uint8_t>(e.pitches[i]);
      msgs.push_back({on_tick, 1, 0x90, pitch, vel});
      msgs.push_back({off_tick, off_tick == on_tick ? 2 : 0, 0x80, pitch, 0});
    }
    onset += e.ioi_ms;
  }
  std::stable_sort(msgs.begin(), msgs.end(), [](const auto& a, const auto& b) {
    if (a.tick != b.tick) return a.tick < b.tick;
    return a.order < b.order;
  });

  std::vector<std::uint8_t> track;
  // Tempo 500000 us/quarter at tick 0.
  detail::put_varlen(track, 0);
  track.insert(track.end(), {0xff, 0x51, 0x03, 0x07, 0xa1, 0x20});
  std::int64_t last_tick = 0;
  for (const auto& m : msgs) {
    detail::put_varlen(track, static_cast<std::uint32_t>(m.tick - last_tick));
    track.push_back(m.status);
    track.push_back(m.d1);
    track.push_back(m.d2);
    last_tick = m.tick;
  }
  detail::put_varlen(track, 0);
  track.insert(track.end(), {0xff, 0x2f, 0x00});

  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'M', 'T', 'h', 'd'});
  detail::put_u32(out, 6);
  detail::put_u16(out, 0);
  detail::put_u16(out, 1);
  detail::put_u16(out, 500);
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  detail::put_u32(out, static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

}
