#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "improv/corpus.hpp"
#include "improv/errors.hpp"
#include "improv/event.hpp"
#include "improv/scaling.hpp"

namespace improv {

/// Supervised windows over a scaled corpus: sample i is the `lags`
/// consecutive vectors starting at starts[i] as input and the vector at
/// starts[i] + lags as target. Windows never duplicate storage; they view
/// into `vectors`.
struct WindowedDataset {
  int lags = 10;
  std::vector<std::array<double, kEventDims>> vectors;
  std::vector<std::size_t> starts;

  std::size_t size() const { return starts.size(); }

  std::span<const std::array<double, kEventDims>> input(std::size_t i) const {
    return {vectors.data() + starts[i], static_cast<std::size_t>(lags)};
  }

  const std::array<double, kEventDims>& target(std::size_t i) const {
    return vectors[starts[i] + static_cast<std::size_t>(lags)];
  }
};

/// Builds lag windows over the scaled events of a corpus. By default a
/// window and its target stay inside one piece; cross_pieces lifts that,
/// treating the corpus as one long sequence.
inline WindowedDataset build_windows(const Corpus& c, const RobustScaler& scaler, int lags = 10,
                                     bool cross_pieces = false) {
  if (lags < 1) throw DataError("build_windows: lags must be >= 1");
  WindowedDataset ds;
  ds.lags = lags;
  ds.vectors.reserve(c.events.size());
  for (const Event& e : c.events) ds.vectors.push_back(scaler.apply(event_to_vector(e)));

  const auto ulags = static_cast<std::size_t>(lags);
  if (cross_pieces) {
    if (c.events.size() > ulags) {
      for (std::size_t s = 0; s + ulags < c.events.size(); ++s) ds.starts.push_back(s);
    }
  } else {
    for (std::size_t p = 0; p < c.piece_count(); ++p) {
      const auto [first, last] = c.piece_range(p);
      if (last - first <= ulags) continue;
      for (std::size_t s = first; s + ulags < last; ++s) ds.starts.push_back(s);
    }
  }
  if (ds.starts.empty()) {
    throw DataError("build_windows: no piece is longer than " + std::to_string(lags) + " events");
  }
  return ds;
}

}
