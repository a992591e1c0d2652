#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "improv/errors.hpp"
#include "improv/event.hpp"
#include "improv/rng.hpp"

namespace improv {

/// Ordered events with piece boundaries. piece_bounds holds the start
/// index of each piece; it begins with 0 and is strictly increasing.
struct Corpus {
  std::vector<Event> events;
  std::vector<std::size_t> piece_bounds{0};
  std::string name;

  std::size_t size() const { return events.size(); }
  std::size_t piece_count() const { return piece_bounds.size(); }

  /// [first, last) event range of piece p.
  std::pair<std::size_t, std::size_t> piece_range(std::size_t p) const {
    const std::size_t first = piece_bounds[p];
    const std::size_t last = p + 1 < piece_bounds.size() ? piece_bounds[p + 1] : events.size();
    return {first, last};
  }

  void check() const {
    if (piece_bounds.empty() || piece_bounds.front() != 0) {
      throw DataError("corpus piece bounds must start at 0");
    }
    for (std::size_t i = 1; i < piece_bounds.size(); ++i) {
      if (piece_bounds[i] <= piece_bounds[i - 1] || piece_bounds[i] >= events.size()) {
        throw DataError("corpus piece bounds must be strictly increasing and < event count");
      }
    }
  }
};

namespace detail {

inline void append_double(std::string& out, double x) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  out.append(buf, p);
}

inline double parse_double(const std::string& s, std::size_t line_no) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [p, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || p != last) {
    throw DataError("corpus csv line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline constexpr const char* kCorpusCsvHeader = "p1,p2,p3,p4,p5,p6,p7,p8,p9,p10,vel,dur_ms,ioi_ms,piece";

inline void write_corpus_csv(const Corpus& c, std::ostream& os) {
  std::string buf = kCorpusCsvHeader;
  buf.push_back('\n');
  std::size_t piece = 0;
  for (std::size_t i = 0; i < c.events.size(); ++i) {
    while (piece + 1 < c.piece_bounds.size() && i >= c.piece_bounds[piece + 1]) ++piece;
    const Event& e = c.events[i];
    for (int s = 0; s < kChordSlots; ++s) {
      buf += std::to_string(e.pitches[s]);
      buf.push_back(',');
    }
    buf += std::to_string(e.velocity);
    buf.push_back(',');
    detail::append_double(buf, e.duration_ms);
    buf.push_back(',');
    detail::append_double(buf, e.ioi_ms);
    buf.push_back(',');
    buf += std::to_string(piece);
    buf.push_back('\n');
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void write_corpus_csv(const Corpus& c, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  write_corpus_csv(c, f);
}

inline Corpus read_corpus_csv(std::istream& is, std::string name = "") {
  Corpus c;
  c.name = std::move(name);
  c.piece_bounds.clear();
  std::string line;
  if (!std::getline(is, line)) throw DataError("corpus csv: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCorpusCsvHeader) {
    throw DataError("corpus csv: bad header, expected '" + std::string(kCorpusCsvHeader) + "'");
  }
  std::size_t line_no = 1;
  long long last_piece = -1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string, 14> cols;
    std::size_t col = 0, start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        if (col >= cols.size()) {
          throw DataError("corpus csv line " + std::to_string(line_no) + ": too many columns");
        }
        cols[col++] = line.substr(start, i - start);
        start = i + 1;
      }
    }
    if (col != cols.size()) {
      throw DataError("corpus csv line " + std::to_string(line_no) + ": expected 14 columns");
    }
    Event e;
    for (int s = 0; s < kChordSlots; ++s) {
      e.pitches[s] = static_cast<int>(detail::parse_double(cols[s], line_no));
    }
    e.velocity = static_cast<int>(detail::parse_double(cols[10], line_no));
    e.duration_ms = detail::parse_double(cols[11], line_no);
    e.ioi_ms = detail::parse_double(cols[12], line_no);
    if (auto why = event_invariant_violation(e)) {
      throw DataError("corpus csv line " + std::to_string(line_no) + ": " + *why);
    }
    const long long piece = static_cast<long long>(detail::parse_double(cols[13], line_no));
    if (piece < last_piece) {
      throw DataError("corpus csv line " + std::to_string(line_no) + ": piece index decreases");
    }
    if (piece != last_piece) {
      c.piece_bounds.push_back(c.events.size());
      last_piece = piece;
    }
    c.events.push_back(e);
  }
  if (c.events.empty()) throw DataError("corpus csv: no events");
  c.check();
  return c;
}

inline Corpus read_corpus_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path.string());
  return read_corpus_csv(f, path.stem().string());
}

/// Settings for the deterministic synthetic corpus generator: serial-style
/// pitch rows over random-walk registers, right-skewed (log-normal) timing,
/// and a configurable chord/note mix.
struct SynthConfig {
  int pieces = 8;
  int events_per_piece = 500;
  double chord_prob = 0.5;
  int min_chord_size = 2;
  int max_chord_size = 8;
  double register_low = 30.0;
  double register_high = 88.0;
  double register_step_sd = 2.5;
  double chord_spread = 14.0;
  double dur_log_median = 5.2;   // exp(5.2) ~ 180 ms
  double dur_log_sd = 0.9;
  double ioi_log_median = 5.6;   // exp(5.6) ~ 270 ms
  double ioi_log_sd = 1.0;
  double piece_tempo_sd = 0.25;  // per-piece log-scale timing regime
  int velocity_low = 26;
  int velocity_high = 112;
  double velocity_walk_sd = 3.0;
  double velocity_noise_sd = 5.0;

  void check() const {
    if (pieces < 1 || events_per_piece < 1) throw DataError("synth: pieces and events must be >= 1");
    if (!(chord_prob >= 0.0 && chord_prob <= 1.0)) throw DataError("synth: chord_prob outside [0,1]");
    if (min_chord_size < 2 || max_chord_size < min_chord_size || max_chord_size > kChordSlots) {
      throw DataError("synth: chord sizes must satisfy 2 <= min <= max <= 10");
    }
    if (!(register_low >= 0.0 && register_high <= 120.0 && register_low < register_high)) {
      throw DataError("synth: register range must lie inside [0,120]");
    }
  }
};

namespace detail {

/// Folds a pitch into [0,120] by octaves, preserving pitch class.
inline int fold_pitch(int p) {
  while (p < kPitchInMin) p += 12;
  while (p > kPitchInMax) p -= 12;
  return p;
}

}  // namespace detail

/// Deterministic for a given (cfg, seed): same call, byte-identical CSV.
inline Corpus synth_corpus(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.check();
  Corpus c;
  c.name = "synth-" + std::to_string(seed);
  c.piece_bounds.clear();
  Rng rng(splitmix64(seed));

  for (int piece = 0; piece < cfg.pieces; ++piece) {
    c.piece_bounds.push_back(c.events.size());

    std::array<int, 12> row;
    std::iota(row.begin(), row.end(), 0);
    rng.shuffle(std::span<int>(row));
    std::size_t row_cursor = 0;
    auto next_pc = [&] {
      const int pc = row[row_cursor % 12];
      ++row_cursor;
      return pc;
    };

    double reg = rng.uniform(cfg.register_low, cfg.register_high);
    double vel = rng.uniform(cfg.velocity_low, cfg.velocity_high);
    const double tempo = rng.normal(0.0, cfg.piece_tempo_sd);

    for (int i = 0; i < cfg.events_per_piece; ++i) {
      reg = std::clamp(reg + rng.normal(0.0, cfg.register_step_sd), cfg.register_low,
                       cfg.register_high);
      vel = std::clamp(vel + rng.normal(0.0, cfg.velocity_walk_sd),
                       static_cast<double>(cfg.velocity_low), static_cast<double>(cfg.velocity_high));

      const bool chord = rng.bernoulli(cfg.chord_prob);
      const int size =
          chord ? cfg.min_chord_size +
                      static_cast<int>(rng.below(
                          static_cast<std::uint64_t>(cfg.max_chord_size - cfg.min_chord_size + 1)))
                : 1;
      std::vector<int> pitches;
      pitches.reserve(static_cast<std::size_t>(size));
      for (int s = 0; s < size; ++s) {
        const int pc = next_pc();
        const double target = reg + (chord ? rng.normal(0.0, cfg.chord_spread) : 0.0);
        // Octave that brings this pitch class closest to the target register.
        const int octave = static_cast<int>(std::lround((target - pc) / 12.0));
        pitches.push_back(detail::fold_pitch(pc + 12 * octave));
      }

      const double dur = std::clamp(
          std::round(rng.lognormal(cfg.dur_log_median + tempo, cfg.dur_log_sd)), 0.0, kMaxTimeMs);
      const double ioi = std::clamp(
          std::round(rng.lognormal(cfg.ioi_log_median + tempo, cfg.ioi_log_sd)), 0.0, kMaxTimeMs);
      const int velocity = std::clamp(static_cast<int>(std::llround(vel + rng.normal(0.0, cfg.velocity_noise_sd))),
                                      cfg.velocity_low, cfg.velocity_high);
      c.events.push_back(make_chord_event(std::move(pitches), velocity, dur, ioi));
    }
  }
  c.check();
  return c;
}

/// Splits a corpus into a training head and a validation tail of the final
/// ceil(val_fraction * N) events, order preserved, no shuffling. Pieces
/// that straddle the cut contribute their tail to the validation part.
inline std::pair<Corpus, Corpus> split_contiguous(const Corpus& c, double val_fraction,
                                                  int lags = 10) {
  if (!(val_fraction > 0.0 && val_fraction < 0.5)) {
    throw DataError("split: val_fraction must lie in (0, 0.5)");
  }
  const std::size_t n = c.events.size();
  const auto val_count = static_cast<std::size_t>(
      std::ceil(val_fraction * static_cast<double>(n)));
  const std::size_t cut = n - val_count;

  Corpus train, val;
  train.name = c.name + "-train";
  val.name = c.name + "-val";
  train.events.assign(c.events.begin(), c.events.begin() + static_cast<std::ptrdiff_t>(cut));
  val.events.assign(c.events.begin() + static_cast<std::ptrdiff_t>(cut), c.events.end());
  train.piece_bounds.clear();
  val.piece_bounds = {0};
  for (std::size_t b : c.piece_bounds) {
    if (b < cut) train.piece_bounds.push_back(b);
    if (b > cut) val.piece_bounds.push_back(b - cut);
  }

  auto window_count = [lags](const Corpus& part) {
    std::size_t total = 0;
    for (std::size_t p = 0; p < part.piece_count(); ++p) {
      const auto [first, last] = part.piece_range(p);
      const std::size_t len = last - first;
      if (len > static_cast<std::size_t>(lags)) total += len - static_cast<std::size_t>(lags);
    }
    return total;
  };
  if (window_count(train) < 2 || window_count(val) < 2) {
    throw DataError("split: a part is shorter than 2 windows of " + std::to_string(lags) + " lags");
  }
  train.check();
  val.check();
  return {std::move(train), std::move(val)};
}

/// Concatenates one transposed copy of the corpus per offset. Every sounded
/// pitch of a copy is shifted by the offset; events in which any shifted
/// pitch would leave [0,120] are dropped. Piece boundaries are kept within
/// each copy; pieces emptied by dropping disappear.
inline Corpus transpose_augment(const Corpus& c, std::span<const int> offsets) {
  if (offsets.empty()) throw DataError("transpose_augment: offsets must be nonempty");
  Corpus out;
  out.name = c.name;
  out.piece_bounds.clear();
  for (const int off : offsets) {
    for (std::size_t p = 0; p < c.piece_count(); ++p) {
      const auto [first, last] = c.piece_range(p);
      std::size_t piece_start = out.events.size();
      bool any = false;
      for (std::size_t i = first; i < last; ++i) {
        Event e = c.events[i];
        bool in_range = true;
        for (int s = 0; s < e.sounded_count(); ++s) {
          const int shifted = e.pitches[s] + off;
          if (shifted < kPitchInMin || shifted > kPitchInMax) {
            in_range = false;
            break;
          }
          e.pitches[s] = shifted;
        }
        if (!in_range) continue;
        if (!any) {
          out.piece_bounds.push_back(piece_start);
          any = true;
        }
        out.events.push_back(e);
      }
    }
  }
  if (out.events.empty()) throw DataError("transpose_augment: all events dropped");
  out.check();
  return out;
}

}
