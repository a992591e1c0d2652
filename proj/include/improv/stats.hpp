#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "improv/errors.hpp"
#include "improv/event.hpp"
#include "improv/rng.hpp"

namespace improv {

// --- note-level view of an event stream ------------------------------------

/// One row per sounded note. Chord members share the event's velocity and
/// duration; the inter-onset interval goes to the last member and the
/// earlier members get 0, so the note-level ioi stream still sums to the
/// piece length.
struct FlatNotes {
  std::vector<double> pitch, velocity, duration, ioi;
  std::size_t n_notes() const { return pitch.size(); }
};

inline FlatNotes flatten_to_notes(std::span<const Event> events) {
  FlatNotes out;
  for (const Event& e : events) {
    const int s = e.sounded_count();
    for (int i = 0; i < s; ++i) {
      out.pitch.push_back(static_cast<double>(e.pitches[i]));
      out.velocity.push_back(static_cast<double>(e.velocity));
      out.duration.push_back(e.duration_ms);
      out.ioi.push_back(i + 1 == s ? e.ioi_ms : 0.0);
    }
  }
  return out;
}

struct DescriptiveStats {
  std::size_t n_events = 0;
  std::size_t n_notes = 0;
  double notes_per_event = 0.0;
  double chord_ratio = 0.0;  // share of events sounding 2+ pitches
};

inline DescriptiveStats describe(std::span<const Event> events) {
  if (events.empty()) throw DataError("describe: no events");
  DescriptiveStats d;
  d.n_events = events.size();
  std::size_t chords = 0;
  for (const Event& e : events) {
    d.n_notes += static_cast<std::size_t>(e.sounded_count());
    if (e.is_chord()) ++chords;
  }
  d.notes_per_event = static_cast<double>(d.n_notes) / static_cast<double>(d.n_events);
  d.chord_ratio = static_cast<double>(chords) / static_cast<double>(d.n_events);
  return d;
}

// --- k-sample Anderson-Darling ----------------------------------------------

enum class PValueMethod { asymptotic, permutation };

struct AdConfig {
  bool midrank = false;  // tie-aware flavor; use for integer-valued data
  PValueMethod method = PValueMethod::asymptotic;
  int replicates = 999;  // permutation method only
  std::uint64_t seed = 1;
};

struct AdResult {
  double a2 = 0.0;     // rank statistic (plain or midrank flavor)
  double sigma = 0.0;  // null standard deviation of a2
  double t = 0.0;      // (a2 - (k-1)) / sigma
  double p = 0.0;
  int k = 0;
  std::size_t n_total = 0;
  bool midrank = false;
  PValueMethod method = PValueMethod::asymptotic;
};

namespace detail {

/// Rank statistic over a pooled sorted sample. `values` must be ascending;
/// labels[i] says which of the k samples values[i] belongs to, and sizes
/// carries the per-sample counts. Works for either flavor; label order
/// within a tied block never matters because ties are processed as blocks.
inline double ad_stat_sorted(std::span<const double> values, std::span<const int> labels,
                             std::span<const std::size_t> sizes, bool midrank) {
  const std::size_t N = values.size();
  const std::size_t k = sizes.size();
  std::vector<double> term(k, 0.0);
  if (!midrank) {
    std::vector<std::size_t> M(k, 0);  // per-sample count of values <= current block
    std::size_t j = 0;
    while (j < N) {
      std::size_t j2 = j;
      while (j2 < N && values[j2] == values[j]) ++j2;
      for (std::size_t t = j; t < j2; ++t) ++M[static_cast<std::size_t>(labels[t])];
      for (std::size_t t = j; t < j2; ++t) {
        const std::size_t r = t + 1;  // 1-based rank of this order statistic
        if (r >= N) break;
        const double denom = static_cast<double>(r) * static_cast<double>(N - r);
        for (std::size_t i = 0; i < k; ++i) {
          const double num = static_cast<double>(N) * static_cast<double>(M[i]) -
                             static_cast<double>(r) * static_cast<double>(sizes[i]);
          term[i] += num * num / denom;
        }
      }
      j = j2;
    }
  } else {
    std::vector<double> Mprev(k, 0.0);
    double Bprev = 0.0;
    std::vector<double> f(k);
    std::size_t j = 0;
    while (j < N) {
      std::size_t j2 = j;
      while (j2 < N && values[j2] == values[j]) ++j2;
      std::fill(f.begin(), f.end(), 0.0);
      for (std::size_t t = j; t < j2; ++t) f[static_cast<std::size_t>(labels[t])] += 1.0;
      const double l = static_cast<double>(j2 - j);
      const double B = Bprev + l / 2.0;
      const double denom = B * (static_cast<double>(N) - B) - static_cast<double>(N) * l / 4.0;
      if (denom > 0.0) {
        for (std::size_t i = 0; i < k; ++i) {
          const double M = Mprev[i] + f[i] / 2.0;
          const double num = static_cast<double>(N) * M - static_cast<double>(sizes[i]) * B;
          term[i] += (l / static_cast<double>(N)) * num * num / denom;
        }
      }
      Bprev += l;
      for (std::size_t i = 0; i < k; ++i) Mprev[i] += f[i];
      j = j2;
    }
  }
  double a2 = 0.0;
  for (std::size_t i = 0; i < k; ++i) a2 += term[i] / static_cast<double>(sizes[i]);
  if (midrank) {
    a2 *= (static_cast<double>(N) - 1.0) / static_cast<double>(N);
  } else {
    a2 /= static_cast<double>(N);  // the rank sum runs over N-1 cuts of an N-pool
  }
  return a2;
}

}  // namespace detail

/// Null variance of the rank statistic for samples of the given sizes.
inline double ad_variance(std::span<const std::size_t> sizes) {
  const auto k = static_cast<double>(sizes.size());
  std::size_t Ns = 0;
  double H = 0.0;
  for (std::size_t n : sizes) {
    Ns += n;
    H += 1.0 / static_cast<double>(n);
  }
  const auto N = static_cast<double>(Ns);
  std::vector<double> hp(Ns, 0.0);  // hp[m] = sum_{i=1..m} 1/i
  for (std::size_t m = 1; m < Ns; ++m) hp[m] = hp[m - 1] + 1.0 / static_cast<double>(m);
  const double h = hp[Ns - 1];
  double g = 0.0;
  for (std::size_t i = 1; i + 1 < Ns; ++i) {
    g += (hp[Ns - 1] - hp[i]) / static_cast<double>(Ns - i);
  }
  const double a = (4.0 * g - 6.0) * (k - 1.0) + (10.0 - 6.0 * g) * H;
  const double b = (2.0 * g - 4.0) * k * k + 8.0 * h * k + (2.0 * g - 14.0 * h - 4.0) * H -
                   8.0 * h + 4.0 * g - 6.0;
  const double c = (6.0 * h + 2.0 * g - 2.0) * k * k + (4.0 * h - 4.0 * g + 6.0) * k +
                   (2.0 * h - 6.0) * H + 4.0 * h;
  const double d = (2.0 * h + 6.0) * k * k - 4.0 * h * k;
  return (a * N * N * N + b * N * N + c * N + d) / ((N - 1.0) * (N - 2.0) * (N - 3.0));
}

/// Percentile-table p-value for the standardized statistic. Interpolates
/// linearly in (critical value, logit of tail level) with end-segment
/// slopes beyond the table; values under 1e-15 report as exactly 0.
inline double ad_asymptotic_p(double t, int k) {
  if (k < 2) throw DataError("anderson-darling: need at least 2 samples");
  static constexpr std::array<double, 5> kAlpha{0.25, 0.10, 0.05, 0.025, 0.01};
  static constexpr std::array<double, 5> kB0{0.675, 1.281, 1.645, 1.960, 2.326};
  static constexpr std::array<double, 5> kB1{-0.245, 0.250, 0.678, 1.149, 1.822};
  static constexpr std::array<double, 5> kB2{-0.105, -0.305, -0.362, -0.391, -0.396};
  const double m = static_cast<double>(k - 1);
  std::array<double, 5> tm{}, y{};
  for (std::size_t c = 0; c < 5; ++c) {
    tm[c] = kB0[c] + kB1[c] / std::sqrt(m) + kB2[c] / m;
    y[c] = std::log(kAlpha[c] / (1.0 - kAlpha[c]));
  }
  std::size_t seg = 0;  // interpolate within [tm[seg], tm[seg+1]]
  if (t > tm[3]) {
    seg = 3;
  } else {
    while (seg < 3 && t > tm[seg + 1]) ++seg;
  }
  const double slope = (y[seg + 1] - y[seg]) / (tm[seg + 1] - tm[seg]);
  const double logit = y[seg] + slope * (t - tm[seg]);
  const double p = 1.0 / (1.0 + std::exp(-logit));
  return p < 1e-15 ? 0.0 : p;
}

/// Scholz-Stephens test of the hypothesis that k samples share one
/// distribution. Values must be finite; each sample needs at least one
/// value and the pool at least four.
inline AdResult ad_ksample(std::span<const std::vector<double>> samples, const AdConfig& cfg = {}) {
  if (samples.size() < 2) throw DataError("anderson-darling: need at least 2 samples");
  std::size_t N = 0;
  std::vector<std::size_t> sizes;
  for (const auto& s : samples) {
    if (s.empty()) throw DataError("anderson-darling: empty sample");
    for (double v : s) {
      if (!std::isfinite(v)) throw DataError("anderson-darling: non-finite value");
    }
    sizes.push_back(s.size());
    N += s.size();
  }
  if (N < 4) throw DataError("anderson-darling: pooled sample too small");

  std::vector<std::pair<double, int>> pooled;
  pooled.reserve(N);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (double v : samples[i]) pooled.emplace_back(v, static_cast<int>(i));
  }
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<double> values(N);
  std::vector<int> labels(N);
  for (std::size_t i = 0; i < N; ++i) {
    values[i] = pooled[i].first;
    labels[i] = pooled[i].second;
  }

  AdResult res;
  res.k = static_cast<int>(samples.size());
  res.n_total = N;
  res.midrank = cfg.midrank;
  res.method = cfg.method;
  res.a2 = detail::ad_stat_sorted(values, labels, sizes, cfg.midrank);
  const double var = ad_variance(sizes);
  if (!(var > 0.0)) throw NumericError("anderson-darling: nonpositive null variance");
  res.sigma = std::sqrt(var);
  res.t = (res.a2 - static_cast<double>(res.k - 1)) / res.sigma;

  if (cfg.method == PValueMethod::asymptotic) {
    res.p = ad_asymptotic_p(res.t, res.k);
  } else {
    if (cfg.replicates < 99) throw DataError("anderson-darling: need at least 99 replicates");
    std::size_t ge = 0;
    std::vector<int> lab = labels;
    for (int r = 0; r < cfg.replicates; ++r) {
      Rng rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(r));
      rng.shuffle(std::span<int>(lab));
      if (detail::ad_stat_sorted(values, lab, sizes, cfg.midrank) >= res.a2) ++ge;
    }
    res.p = static_cast<double>(ge + 1) / static_cast<double>(cfg.replicates + 1);
  }
  return res;
}

// --- two-sample distance test on event vectors -------------------------------

using EventVec = std::array<double, kEventDims>;

enum class CramerKernel { euclidean, cramer, bahr, logk };

inline const char* kernel_name(CramerKernel k) {
  switch (k) {
    case CramerKernel::euclidean: return "euclidean";
    case CramerKernel::cramer: return "cramer";
    case CramerKernel::bahr: return "bahr";
    case CramerKernel::logk: return "log";
  }
  return "?";
}

namespace detail {

inline double cramer_phi(double z, CramerKernel k) {
  switch (k) {
    case CramerKernel::euclidean: return std::sqrt(z);
    case CramerKernel::cramer: return std::sqrt(z) / 2.0;
    case CramerKernel::bahr: return 1.0 - std::exp(-z / 2.0);
    case CramerKernel::logk: return std::log1p(z);
  }
  return 0.0;
}

inline double sqdist(const EventVec& a, const EventVec& b) {
  double acc = 0.0;
  for (int d = 0; d < kEventDims; ++d) {
    const double diff = a[static_cast<std::size_t>(d)] - b[static_cast<std::size_t>(d)];
    acc += diff * diff;
  }
  return acc;
}

}  // namespace detail

/// Energy-style statistic: the kernelized between-sample distance minus
/// both within-sample distances, scaled by mn/(m+n). Zero exactly when the
/// two samples are the same multiset.
inline double cramer_statistic(std::span<const EventVec> x, std::span<const EventVec> y,
                               CramerKernel kernel = CramerKernel::euclidean) {
  if (x.empty() || y.empty()) throw DataError("cramer: empty sample");
  const auto m = static_cast<double>(x.size());
  const auto n = static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (const EventVec& a : x) {
    for (const EventVec& b : y) sxy += detail::cramer_phi(detail::sqdist(a, b), kernel);
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      sxx += detail::cramer_phi(detail::sqdist(x[i], x[j]), kernel);
    }
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = i + 1; j < y.size(); ++j) {
      syy += detail::cramer_phi(detail::sqdist(y[i], y[j]), kernel);
    }
  }
  return m * n / (m + n) * (2.0 * sxy / (m * n) - 2.0 * sxx / (m * m) - 2.0 * syy / (n * n));
}

struct CramerConfig {
  CramerKernel kernel = CramerKernel::euclidean;
  int replicates = 199;
  std::uint64_t seed = 1;
  std::size_t subset_size = 3000;
};

struct CramerBlock {
  std::size_t m = 0, n = 0;
  double statistic = 0.0;
  double p = 0.0;
};

struct CramerResult {
  CramerKernel kernel{};
  int replicates = 0;
  std::vector<CramerBlock> blocks;  // blocks[0] is the headline comparison

  const CramerBlock& headline() const { return blocks.front(); }
};

/// Permutation test on same-index block pairs: the b-th subset_size slice
/// of x meets the b-th slice of y, so big samples are compared piecewise
/// instead of truncated. Kernel values are cached in single precision for
/// the shuffles; the observed statistic itself is computed in double.
inline CramerResult cramer_test(std::span<const EventVec> x, std::span<const EventVec> y,
                                const CramerConfig& cfg = {}) {
  if (x.empty() || y.empty()) throw DataError("cramer: empty sample");
  if (cfg.replicates < 99) throw DataError("cramer: need at least 99 replicates");
  if (cfg.subset_size < 2) throw DataError("cramer: subset_size must be >= 2");

  CramerResult res;
  res.kernel = cfg.kernel;
  res.replicates = cfg.replicates;
  const std::size_t bx = (x.size() + cfg.subset_size - 1) / cfg.subset_size;
  const std::size_t by = (y.size() + cfg.subset_size - 1) / cfg.subset_size;
  const std::size_t nblocks = std::min(bx, by);

  for (std::size_t b = 0; b < nblocks; ++b) {
    const std::size_t x0 = b * cfg.subset_size, x1 = std::min(x.size(), x0 + cfg.subset_size);
    const std::size_t y0 = b * cfg.subset_size, y1 = std::min(y.size(), y0 + cfg.subset_size);
    const std::span<const EventVec> xb = x.subspan(x0, x1 - x0);
    const std::span<const EventVec> yb = y.subspan(y0, y1 - y0);
    const std::size_t m = xb.size(), n = yb.size(), P = m + n;

    CramerBlock blk;
    blk.m = m;
    blk.n = n;
    blk.statistic = cramer_statistic(xb, yb, cfg.kernel);

    // Upper-triangle kernel cache over the pooled block, row-major.
    std::vector<float> K;
    K.resize(P * (P - 1) / 2);
    std::vector<const EventVec*> pool(P);
    for (std::size_t i = 0; i < m; ++i) pool[i] = &xb[i];
    for (std::size_t j = 0; j < n; ++j) pool[m + j] = &yb[j];
    std::size_t idx = 0;
    for (std::size_t a = 0; a < P; ++a) {
      for (std::size_t c = a + 1; c < P; ++c) {
        K[idx++] = static_cast<float>(
            detail::cramer_phi(detail::sqdist(*pool[a], *pool[c]), cfg.kernel));
      }
    }

    std::vector<std::uint8_t> lab(P);
    std::size_t ge = 0;
    const double md = static_cast<double>(m), nd = static_cast<double>(n);
    for (int r = 0; r < cfg.replicates; ++r) {
      std::fill(lab.begin(), lab.begin() + static_cast<std::ptrdiff_t>(m), std::uint8_t{1});
      std::fill(lab.begin() + static_cast<std::ptrdiff_t>(m), lab.end(), std::uint8_t{0});
      Rng rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(b) * 1000003u +
                                             static_cast<std::uint64_t>(r));
      rng.shuffle(std::span<std::uint8_t>(lab));
      double sxx = 0.0, syy = 0.0, sxy = 0.0;
      std::size_t q = 0;
      for (std::size_t a = 0; a < P; ++a) {
        const bool ax = lab[a] != 0;
        for (std::size_t c = a + 1; c < P; ++c, ++q) {
          const double v = K[q];
          const bool cx = lab[c] != 0;
          if (ax == cx) {
            (ax ? sxx : syy) += v;
          } else {
            sxy += v;
          }
        }
      }
      const double t = md * nd / (md + nd) *
                       (2.0 * sxy / (md * nd) - 2.0 * sxx / (md * md) - 2.0 * syy / (nd * nd));
      if (t >= blk.statistic) ++ge;
    }
    blk.p = static_cast<double>(ge + 1) / static_cast<double>(cfg.replicates + 1);
    res.blocks.push_back(blk);
  }
  return res;
}

// --- principal component spread ----------------------------------------------

struct PcaResult {
  std::size_t n = 0;
  std::array<double, kEventDims> eigenvalues{};             // descending
  std::array<double, kEventDims> pct{};                     // share of total variance, in %
  std::array<std::array<double, kEventDims>, kEventDims> components{};  // components[c] pairs with eigenvalues[c]
};

/// Eigendecomposition of the mean-centered covariance matrix by cyclic
/// Jacobi rotations. Tiny negative eigenvalues from roundoff clamp to 0;
/// anything below -1e-9 means the decomposition went wrong.
inline PcaResult pca_variance(std::span<const EventVec> data) {
  if (data.size() < 2) throw DataError("pca: need at least 2 vectors");
  const std::size_t N = data.size();
  constexpr int D = kEventDims;

  std::array<double, D> mean{};
  for (const EventVec& v : data) {
    for (int d = 0; d < D; ++d) mean[static_cast<std::size_t>(d)] += v[static_cast<std::size_t>(d)];
  }
  for (double& m : mean) m /= static_cast<double>(N);

  std::array<std::array<double, D>, D> A{};
  for (const EventVec& v : data) {
    for (int r = 0; r < D; ++r) {
      const double xr = v[static_cast<std::size_t>(r)] - mean[static_cast<std::size_t>(r)];
      for (int c = r; c < D; ++c) {
        A[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] +=
            xr * (v[static_cast<std::size_t>(c)] - mean[static_cast<std::size_t>(c)]);
      }
    }
  }
  for (int r = 0; r < D; ++r) {
    for (int c = r; c < D; ++c) {
      A[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] /= static_cast<double>(N - 1);
      A[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)] =
          A[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
  }

  std::array<std::array<double, D>, D> V{};
  for (int d = 0; d < D; ++d) V[static_cast<std::size_t>(d)][static_cast<std::size_t>(d)] = 1.0;

  double frob = 0.0;
  for (int r = 0; r < D; ++r) {
    for (int c = 0; c < D; ++c) {
      frob += A[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] *
              A[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
  }
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < D; ++p) {
      for (int q = p + 1; q < D; ++q) {
        off += A[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)] *
               A[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
      }
    }
    if (off <= 1e-28 * std::max(frob, 1e-300)) break;
    for (int p = 0; p < D; ++p) {
      for (int q = p + 1; q < D; ++q) {
        const double apq = A[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
        if (apq == 0.0) continue;
        const double theta = (A[static_cast<std::size_t>(q)][static_cast<std::size_t>(q)] -
                              A[static_cast<std::size_t>(p)][static_cast<std::size_t>(p)]) /
                             (2.0 * apq);
        const double tr = (theta >= 0.0 ? 1.0 : -1.0) /
                          (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cr = 1.0 / std::sqrt(tr * tr + 1.0);
        const double sr = tr * cr;
        const double tau = sr / (1.0 + cr);
        const double app = A[static_cast<std::size_t>(p)][static_cast<std::size_t>(p)];
        const double aqq = A[static_cast<std::size_t>(q)][static_cast<std::size_t>(q)];
        A[static_cast<std::size_t>(p)][static_cast<std::size_t>(p)] = app - tr * apq;
        A[static_cast<std::size_t>(q)][static_cast<std::size_t>(q)] = aqq + tr * apq;
        A[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)] = 0.0;
        A[static_cast<std::size_t>(q)][static_cast<std::size_t>(p)] = 0.0;
        for (int r = 0; r < D; ++r) {
          if (r == p || r == q) continue;
          const auto rr = static_cast<std::size_t>(r);
          const auto pp = static_cast<std::size_t>(p);
          const auto qq = static_cast<std::size_t>(q);
          const double arp = A[rr][pp], arq = A[rr][qq];
          A[rr][pp] = arp - sr * (arq + tau * arp);
          A[pp][rr] = A[rr][pp];
          A[rr][qq] = arq + sr * (arp - tau * arq);
          A[qq][rr] = A[rr][qq];
        }
        for (int r = 0; r < D; ++r) {
          const auto rr = static_cast<std::size_t>(r);
          const auto pp = static_cast<std::size_t>(p);
          const auto qq = static_cast<std::size_t>(q);
          const double vrp = V[rr][pp], vrq = V[rr][qq];
          V[rr][pp] = vrp - sr * (vrq + tau * vrp);
          V[rr][qq] = vrq + sr * (vrp - tau * vrq);
        }
      }
    }
  }

  std::array<int, D> order;
  for (int d = 0; d < D; ++d) order[static_cast<std::size_t>(d)] = d;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return A[static_cast<std::size_t>(a)][static_cast<std::size_t>(a)] >
           A[static_cast<std::size_t>(b)][static_cast<std::size_t>(b)];
  });

  PcaResult res;
  res.n = N;
  double trace = 0.0;
  for (int d = 0; d < D; ++d) {
    double ev = A[static_cast<std::size_t>(order[static_cast<std::size_t>(d)])]
                 [static_cast<std::size_t>(order[static_cast<std::size_t>(d)])];
    if (ev < 0.0) {
      if (ev < -1e-9) throw NumericError("pca: eigenvalue significantly negative");
      ev = 0.0;
    }
    res.eigenvalues[static_cast<std::size_t>(d)] = ev;
    trace += ev;
    for (int r = 0; r < D; ++r) {
      res.components[static_cast<std::size_t>(d)][static_cast<std::size_t>(r)] =
          V[static_cast<std::size_t>(r)][static_cast<std::size_t>(order[static_cast<std::size_t>(d)])];
    }
  }
  if (!(trace > 0.0)) throw DataError("pca: data has zero variance");
  for (int d = 0; d < D; ++d) {
    res.pct[static_cast<std::size_t>(d)] = res.eigenvalues[static_cast<std::size_t>(d)] / trace * 100.0;
  }
  return res;
}

// --- autoregressive lag diagnostics -------------------------------------------

struct ArLagReport {
  int max_lag = 0;
  std::size_t n_obs = 0;               // regression rows
  double sigma2 = 0.0;                 // residual variance
  std::vector<double> coef;            // [0] intercept, then lag 1..max_lag
  std::vector<double> t_stat;          // aligned with coef
  int suggested_order = 0;             // largest lag with |t| > 1.96
};

namespace detail {

/// Gaussian elimination with partial pivoting; solves A X = B in place,
/// B holding one column per right-hand side. Throws on a singular A.
inline void solve_inplace(std::vector<double>& A, std::vector<double>& B, std::size_t p,
                          std::size_t nrhs) {
  double scale = 0.0;
  for (double v : A) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) throw DataError("linear solve: zero matrix");
  for (std::size_t col = 0; col < p; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < p; ++r) {
      if (std::abs(A[r * p + col]) > std::abs(A[piv * p + col])) piv = r;
    }
    if (std::abs(A[piv * p + col]) < 1e-12 * scale) {
      throw DataError("linear solve: singular matrix");
    }
    if (piv != col) {
      for (std::size_t c = 0; c < p; ++c) std::swap(A[col * p + c], A[piv * p + c]);
      for (std::size_t c = 0; c < nrhs; ++c) std::swap(B[col * nrhs + c], B[piv * nrhs + c]);
    }
    const double d = A[col * p + col];
    for (std::size_t r = 0; r < p; ++r) {
      if (r == col) continue;
      const double f = A[r * p + col] / d;
      if (f == 0.0) continue;
      for (std::size_t c = col; c < p; ++c) A[r * p + c] -= f * A[col * p + c];
      for (std::size_t c = 0; c < nrhs; ++c) B[r * nrhs + c] -= f * B[col * nrhs + c];
    }
  }
  for (std::size_t r = 0; r < p; ++r) {
    const double d = A[r * p + r];
    for (std::size_t c = 0; c < nrhs; ++c) B[r * nrhs + c] /= d;
  }
}

}  // namespace detail

/// Fits one ordinary-least-squares autoregression at max_lag and reads off
/// which lag coefficients clear |t| = 1.96. A constant series makes the
/// design matrix singular and throws DataError.
inline ArLagReport ar_lag_analysis(std::span<const double> series, int max_lag = 15) {
  if (max_lag < 1) throw DataError("ar lags: max_lag must be >= 1");
  if (series.size() <= static_cast<std::size_t>(3 * max_lag)) {
    throw DataError("ar lags: series must be longer than 3 * max_lag");
  }
  for (double v : series) {
    if (!std::isfinite(v)) throw DataError("ar lags: non-finite value");
  }
  const std::size_t L = static_cast<std::size_t>(max_lag);
  const std::size_t p = L + 1;
  const std::size_t rows = series.size() - L;

  // Accumulate X'X and X'y without materializing X; row t has regressors
  // [1, y_{t-1}, ..., y_{t-L}] for the response y_t.
  std::vector<double> xtx(p * p, 0.0), xty(p, 0.0), xrow(p, 1.0);
  for (std::size_t t = L; t < series.size(); ++t) {
    for (std::size_t l = 1; l <= L; ++l) xrow[l] = series[t - l];
    for (std::size_t a = 0; a < p; ++a) {
      xty[a] += xrow[a] * series[t];
      for (std::size_t b = a; b < p; ++b) xtx[a * p + b] += xrow[a] * xrow[b];
    }
  }
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = 0; b < a; ++b) xtx[a * p + b] = xtx[b * p + a];
  }

  // One augmented solve gets both the coefficients and (X'X)^-1.
  std::vector<double> rhs(p * (p + 1), 0.0);
  for (std::size_t a = 0; a < p; ++a) {
    rhs[a * (p + 1)] = xty[a];
    rhs[a * (p + 1) + 1 + a] = 1.0;
  }
  std::vector<double> lhs = xtx;
  detail::solve_inplace(lhs, rhs, p, p + 1);

  ArLagReport rep;
  rep.max_lag = max_lag;
  rep.n_obs = rows;
  rep.coef.resize(p);
  for (std::size_t a = 0; a < p; ++a) rep.coef[a] = rhs[a * (p + 1)];

  double rss = 0.0;
  for (std::size_t t = L; t < series.size(); ++t) {
    double pred = rep.coef[0];
    for (std::size_t l = 1; l <= L; ++l) pred += rep.coef[l] * series[t - l];
    const double e = series[t] - pred;
    rss += e * e;
  }
  if (rows <= p) throw DataError("ar lags: too few observations for the lag order");
  rep.sigma2 = rss / static_cast<double>(rows - p);

  rep.t_stat.resize(p);
  for (std::size_t a = 0; a < p; ++a) {
    const double se = std::sqrt(rep.sigma2 * rhs[a * (p + 1) + 1 + a]);
    rep.t_stat[a] = se > 0.0 ? rep.coef[a] / se : 0.0;
  }
  for (int l = max_lag; l >= 1; --l) {
    if (std::abs(rep.t_stat[static_cast<std::size_t>(l)]) > 1.96) {
      rep.suggested_order = l;
      break;
    }
  }
  return rep;
}

// --- truncated density tables --------------------------------------------------

struct DensityTable {
  int bins = 0;
  double lo = 0.0;
  double hi = 0.0;        // the truncation point
  double bin_width = 0.0;
  std::vector<std::size_t> counts;
  std::vector<double> density;  // counts / n_total, so overflow shows as missing mass
  std::size_t overflow = 0;     // values beyond the truncation point
  std::size_t n_total = 0;
};

/// Equal-width histogram from the smallest in-range value up to
/// truncate_at; the last bin includes its right edge, anything beyond it
/// is tallied as overflow but still counts in the denominator.
inline DensityTable density_table(std::span<const double> values, int bins, double truncate_at) {
  if (values.empty()) throw DataError("density: no values");
  if (bins < 1) throw DataError("density: bins must be >= 1");
  for (double v : values) {
    if (!std::isfinite(v)) throw DataError("density: non-finite value");
  }
  DensityTable t;
  t.bins = bins;
  t.hi = truncate_at;
  t.n_total = values.size();
  double lo = truncate_at;
  bool any = false;
  for (double v : values) {
    if (v <= truncate_at) {
      lo = std::min(lo, v);
      any = true;
    }
  }
  if (!any) throw DataError("density: every value lies beyond the truncation point");
  t.lo = lo;
  t.bin_width = (t.hi - t.lo) / static_cast<double>(bins);
  t.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    if (v > truncate_at) {
      ++t.overflow;
      continue;
    }
    std::size_t b = 0;
    if (t.bin_width > 0.0) {
      b = std::min(static_cast<std::size_t>(bins - 1),
                   static_cast<std::size_t>((v - t.lo) / t.bin_width));
    }
    ++t.counts[b];
  }
  t.density.resize(t.counts.size());
  for (std::size_t b = 0; b < t.counts.size(); ++b) {
    t.density[b] = static_cast<double>(t.counts[b]) / static_cast<double>(t.n_total);
  }
  return t;
}

}
