#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "improv/corpus.hpp"
#include "improv/errors.hpp"
#include "improv/event.hpp"
#include "improv/model.hpp"
#include "improv/nn.hpp"
#include "improv/rng.hpp"
#include "improv/scaling.hpp"

namespace improv {

/// Acceptance window for generated events, tighter than what the corpus
/// side admits. Values landing outside get the whole prediction rejected
/// (out-of-range pitches are dropped individually first).
struct OutputRanges {
  int pitch_min = 12;
  int pitch_max = 113;
  int velocity_min = 20;
  int velocity_max = 127;
  double time_min = 0.0;
  double time_max = 15000.0;
};

struct PostResult {
  std::optional<Event> event;
  std::string reason;       // "no-pitch" | "velocity" | "duration" | "ioi"
  int dropped_pitches = 0;  // sounded slots whose pitch fell outside the range
};

/// Turns one unscaled prediction vector into a playable event, or rejects
/// it. A slot counts as sounded when its raw value exceeds -0.5 (the
/// midpoint between the quiet fill of -1 and the lowest pitch 0); sounded
/// values round half-away-from-zero, as do velocity, duration and ioi.
/// Checks run in the order pitches, velocity, duration, ioi, and the first
/// failure names the rejection.
inline PostResult postprocess_prediction(const std::array<double, kEventDims>& v,
                                         const OutputRanges& r = {}) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("postprocess: non-finite prediction component");
  }
  PostResult res;
  std::vector<int> pitches;
  for (int s = 0; s < kChordSlots; ++s) {
    const double raw = v[static_cast<std::size_t>(s)];
    if (raw <= -0.5) continue;
    const int p = round_half_away(raw);
    if (p < r.pitch_min || p > r.pitch_max) {
      ++res.dropped_pitches;
    } else {
      pitches.push_back(p);
    }
  }
  if (pitches.empty()) {
    res.reason = "no-pitch";
    return res;
  }
  const int vel = round_half_away(v[10]);
  if (vel < r.velocity_min || vel > r.velocity_max) {
    res.reason = "velocity";
    return res;
  }
  const auto dur = static_cast<double>(round_half_away(v[11]));
  if (dur < r.time_min || dur > r.time_max) {
    res.reason = "duration";
    return res;
  }
  const auto ioi = static_cast<double>(round_half_away(v[12]));
  if (ioi < r.time_min || ioi > r.time_max) {
    res.reason = "ioi";
    return res;
  }
  res.event = make_chord_event(std::move(pitches), vel, dur, ioi);
  return res;
}

struct GenConfig {
  int n_predictions = 1000;
  int reseed_interval = 10;
  std::uint64_t seed = 1;
  OutputRanges ranges;
};

struct GenRecord {
  int step = 0;  // 1-based prediction index
  std::array<double, kEventDims> raw{};  // unscaled prediction
  bool accepted = false;
  std::string reason;
};

struct GenReport {
  std::vector<Event> events;
  std::vector<GenRecord> records;
  std::vector<int> reseed_steps;
  std::vector<std::size_t> seed_starts;  // window start per (re)seed, in seed-corpus events
  std::map<std::string, int> rejected_by_reason;

  std::size_t accepted() const { return events.size(); }
  std::size_t rejected() const { return records.size() - events.size(); }
};

/// Feeds the network its own output: each prediction is appended to the
/// rolling window (whether or not the event survives postprocessing), and
/// every reseed_interval predictions the window is replaced with a fresh
/// random in-piece excerpt of the seed corpus.
inline GenReport generate(const NetworkSpec& spec, const ParameterStore& ps,
                          const RobustScaler& scaler, const Corpus& seed_corpus,
                          const GenConfig& cfg = {}) {
  if (cfg.n_predictions < 1) throw DataError("generate: n_predictions must be >= 1");
  if (cfg.reseed_interval < 1) throw DataError("generate: reseed_interval must be >= 1");
  const auto lags = static_cast<std::size_t>(spec.lags);

  std::vector<std::array<double, kEventDims>> scaled(seed_corpus.events.size());
  for (std::size_t i = 0; i < seed_corpus.events.size(); ++i) {
    scaled[i] = scaler.apply(event_to_vector(seed_corpus.events[i]));
  }
  std::vector<std::size_t> positions;
  for (std::size_t p = 0; p < seed_corpus.piece_count(); ++p) {
    const auto [first, last] = seed_corpus.piece_range(p);
    if (last - first < lags) continue;
    for (std::size_t s = first; s + lags <= last; ++s) positions.push_back(s);
  }
  if (positions.empty()) {
    throw DataError("generate: no seed piece is at least " + std::to_string(spec.lags) +
                    " events long");
  }

  Rng rng(splitmix64(cfg.seed));
  GenReport rep;
  std::vector<std::array<double, kEventDims>> window(lags);
  auto reseed = [&] {
    const std::size_t start = positions[rng.below(positions.size())];
    for (std::size_t i = 0; i < lags; ++i) window[i] = scaled[start + i];
    rep.seed_starts.push_back(start);
  };
  reseed();

  for (int step = 1; step <= cfg.n_predictions; ++step) {
    const SeqMat pred = forward(spec, ps, window_input(window));
    std::array<double, kEventDims> raw_scaled;
    std::copy_n(pred.data.begin(), kEventDims, raw_scaled.begin());
    for (double x : raw_scaled) {
      if (!std::isfinite(x)) {
        throw NumericError("generate: non-finite prediction at step " + std::to_string(step));
      }
    }
    const std::array<double, kEventDims> raw = scaler.invert(raw_scaled);
    PostResult post = postprocess_prediction(raw, cfg.ranges);

    GenRecord rec;
    rec.step = step;
    rec.raw = raw;
    rec.accepted = post.event.has_value();
    rec.reason = post.reason;
    rep.records.push_back(std::move(rec));
    if (post.event) {
      rep.events.push_back(*post.event);
    } else {
      ++rep.rejected_by_reason[post.reason];
    }

    window.erase(window.begin());
    window.push_back(raw_scaled);
    if (step % cfg.reseed_interval == 0) {
      rep.reseed_steps.push_back(step);
      reseed();
    }
  }
  return rep;
}

struct ConvergenceResult {
  bool converged = false;
  int fixpoint_step = 0;         // first step of the quiet stretch, 0 if none
  std::vector<double> deltas;    // max-component step sizes, deltas[k-1] is step k
};

/// Lets the network free-run from one window (no reseeding) and watches the
/// max-component difference between consecutive predictions, starting
/// against the window's own last vector. The fixpoint step is the first k
/// whose delta and the next `sustain` deltas all stay below eps.
inline ConvergenceResult convergence_probe(const NetworkSpec& spec, const ParameterStore& ps,
                                           std::span<const std::array<double, kEventDims>> start,
                                           double eps = 1e-6, int max_steps = 100,
                                           int sustain = 5) {
  if (start.size() != static_cast<std::size_t>(spec.lags)) {
    throw std::invalid_argument("convergence_probe: window length must equal the lag count");
  }
  if (max_steps < 1 || sustain < 0) {
    throw std::invalid_argument("convergence_probe: bad step counts");
  }
  std::vector<std::array<double, kEventDims>> window(start.begin(), start.end());
  std::array<double, kEventDims> prev = window.back();
  ConvergenceResult res;
  for (int k = 1; k <= max_steps; ++k) {
    const SeqMat out = forward(spec, ps, window_input(window));
    std::array<double, kEventDims> pred;
    std::copy_n(out.data.begin(), kEventDims, pred.begin());
    double d = 0.0;
    for (int c = 0; c < kEventDims; ++c) {
      d = std::max(d, std::abs(pred[static_cast<std::size_t>(c)] - prev[static_cast<std::size_t>(c)]));
    }
    if (!std::isfinite(d)) throw NumericError("convergence probe: non-finite prediction");
    res.deltas.push_back(d);
    prev = pred;
    window.erase(window.begin());
    window.push_back(pred);
  }
  for (std::size_t k = 1; k + static_cast<std::size_t>(sustain) <= res.deltas.size(); ++k) {
    bool quiet = true;
    for (std::size_t j = k - 1; j < k + static_cast<std::size_t>(sustain); ++j) {
      if (!(res.deltas[j] < eps)) {
        quiet = false;
        break;
      }
    }
    if (quiet) {
      res.converged = true;
      res.fixpoint_step = static_cast<int>(k);
      break;
    }
  }
  return res;
}

}
