#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "improv/errors.hpp"
#include "improv/event.hpp"

namespace improv {

/// Interpolated quantile of a sample: sorts a copy and reads the value at
/// fractional position q * (n - 1), interpolating linearly between ranks.
inline double quantile(std::span<const double> xs, double q) {
  if (xs.empty()) throw DataError("quantile of empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw DataError("quantile level outside [0,1]");
  std::vector<double> s(xs.begin(), xs.end());
  std::sort(s.begin(), s.end());
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return s[lo] + frac * (s[hi] - s[lo]);
}

/// Per-component median/IQR affine map: scaled = (x - center) / spread.
/// Components whose IQR is zero keep spread 1 so they pass through shifted
/// but not blown up.
struct RobustScaler {
  std::array<double, kEventDims> center{};
  std::array<double, kEventDims> spread{};

  std::array<double, kEventDims> apply(const std::array<double, kEventDims>& v) const {
    std::array<double, kEventDims> out;
    for (int d = 0; d < kEventDims; ++d) out[d] = (v[d] - center[d]) / spread[d];
    return out;
  }

  std::array<double, kEventDims> invert(const std::array<double, kEventDims>& v) const {
    std::array<double, kEventDims> out;
    for (int d = 0; d < kEventDims; ++d) {
      out[d] = v[d] * spread[d] + center[d];
      if (!std::isfinite(out[d])) {
        throw NumericError("scaler invert produced non-finite value in component " +
                           std::to_string(d));
      }
    }
    return out;
  }
};

/// Fits median and interquartile range of every vector component over all
/// events, fill slots (-1) included.
inline RobustScaler fit_scaler(std::span<const Event> events) {
  if (events.empty()) throw DataError("cannot fit scaler on empty event list");
  RobustScaler sc;
  std::vector<double> col(events.size());
  for (int d = 0; d < kEventDims; ++d) {
    for (std::size_t i = 0; i < events.size(); ++i) col[i] = event_to_vector(events[i])[d];
    const double q1 = quantile(col, 0.25);
    const double q3 = quantile(col, 0.75);
    sc.center[d] = quantile(col, 0.5);
    const double iqr = q3 - q1;
    sc.spread[d] = iqr > 0.0 ? iqr : 1.0;
  }
  return sc;
}

}
