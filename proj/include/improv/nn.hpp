#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "improv/errors.hpp"
#include "improv/rng.hpp"

namespace improv {

/// Row-major [time][channels] activation matrix.
struct SeqMat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  SeqMat() = default;
  SeqMat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

enum class LayerKind { conv1d, maxpool1d, flatten, lstm, dense };

inline const char* layer_tag(LayerKind k) {
  switch (k) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::maxpool1d: return "maxpool1d";
    case LayerKind::flatten: return "flatten";
    case LayerKind::lstm: return "lstm";
    case LayerKind::dense: return "dense";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind{};
  int filters = 0;       // conv1d
  int kernel = 0;        // conv1d
  int dilation = 1;      // conv1d
  int width = 0;         // maxpool1d
  int units = 0;         // lstm, dense
  bool return_sequences = false;   // lstm
  double dropout = 0.0;            // conv1d/dense: output; lstm: input
  double recurrent_dropout = 0.0;  // lstm
};

inline LayerSpec conv1d_layer(int filters, int kernel, int dilation, double dropout = 0.0) {
  LayerSpec s;
  s.kind = LayerKind::conv1d;
  s.filters = filters;
  s.kernel = kernel;
  s.dilation = dilation;
  s.dropout = dropout;
  return s;
}

inline LayerSpec maxpool1d_layer(int width) {
  LayerSpec s;
  s.kind = LayerKind::maxpool1d;
  s.width = width;
  return s;
}

inline LayerSpec flatten_layer() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}

inline LayerSpec lstm_layer(int units, bool return_sequences = false, double dropout = 0.0,
                            double recurrent_dropout = 0.0) {
  LayerSpec s;
  s.kind = LayerKind::lstm;
  s.units = units;
  s.return_sequences = return_sequences;
  s.dropout = dropout;
  s.recurrent_dropout = recurrent_dropout;
  return s;
}

inline LayerSpec dense_layer(int units, double dropout = 0.0) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.units = units;
  s.dropout = dropout;
  return s;
}

struct NetworkSpec {
  int lags = 10;
  int dims = 13;
  std::vector<LayerSpec> layers;
};

struct Shape {
  int time = 0;
  int channels = 0;
  bool operator==(const Shape&) const = default;
};

/// Shape after each layer; element 0 is the input shape. Validates the
/// whole stack and throws DataError on an impossible configuration.
inline std::vector<Shape> infer_shapes(const NetworkSpec& spec) {
  if (spec.lags < 1 || spec.dims < 1) throw DataError("network input shape must be positive");
  auto bad = [](std::size_t li, const std::string& why) {
    throw DataError("layer " + std::to_string(li) + ": " + why);
  };
  std::vector<Shape> shapes{{spec.lags, spec.dims}};
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& L = spec.layers[li];
    const Shape in = shapes.back();
    if (!(L.dropout >= 0.0 && L.dropout < 1.0) ||
        !(L.recurrent_dropout >= 0.0 && L.recurrent_dropout < 1.0)) {
      bad(li, "dropout rates must lie in [0,1)");
    }
    Shape out;
    switch (L.kind) {
      case LayerKind::conv1d:
        if (L.filters < 1 || L.kernel < 1 || L.dilation < 1) bad(li, "bad conv1d geometry");
        out = {in.time, L.filters};
        break;
      case LayerKind::maxpool1d:
        if (L.width < 1) bad(li, "pool width must be >= 1");
        if (in.time < L.width) bad(li, "pool window longer than sequence");
        out = {(in.time - L.width) / L.width + 1, in.channels};
        break;
      case LayerKind::flatten:
        out = {1, in.time * in.channels};
        break;
      case LayerKind::lstm:
        if (L.units < 1) bad(li, "lstm units must be >= 1");
        out = {L.return_sequences ? in.time : 1, L.units};
        break;
      case LayerKind::dense:
        if (L.units < 1) bad(li, "dense units must be >= 1");
        if (in.time != 1) bad(li, "dense layer needs a flat input");
        out = {1, L.units};
        break;
    }
    shapes.push_back(out);
  }
  return shapes;
}

/// One named contiguous slice of the flat parameter vector.
struct ParamPiece {
  std::string name;
  std::size_t offset = 0;
  std::size_t count = 0;
  std::vector<int> shape;
};

/// Names and places every weight tensor in a single flat vector. LSTM
/// tensors use gate order [input, forget, cell, output] on the leading axis.
inline std::vector<ParamPiece> param_layout(const NetworkSpec& spec) {
  const auto shapes = infer_shapes(spec);
  std::vector<ParamPiece> pieces;
  std::size_t off = 0;
  auto add = [&](std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    pieces.push_back({std::move(name), off, n, std::move(shape)});
    off += n;
  };
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& L = spec.layers[li];
    const Shape in = shapes[li];
    const std::string base = std::string(layer_tag(L.kind)) + "_" + std::to_string(li);
    switch (L.kind) {
      case LayerKind::conv1d:
        add(base + "/kernel", {L.filters, in.channels, L.kernel});
        add(base + "/bias", {L.filters});
        break;
      case LayerKind::lstm:
        add(base + "/wx", {4, L.units, in.channels});
        add(base + "/wh", {4, L.units, L.units});
        add(base + "/bias", {4, L.units});
        break;
      case LayerKind::dense:
        add(base + "/kernel", {L.units, in.channels});
        add(base + "/bias", {L.units});
        break;
      default:
        break;
    }
  }
  return pieces;
}

inline std::size_t param_count(const NetworkSpec& spec) {
  const auto pieces = param_layout(spec);
  return pieces.empty() ? 0 : pieces.back().offset + pieces.back().count;
}

struct ParameterStore {
  std::vector<ParamPiece> pieces;
  std::vector<double> values;

  const ParamPiece& piece(std::string_view name) const {
    for (const ParamPiece& p : pieces) {
      if (p.name == name) return p;
    }
    throw std::invalid_argument("no parameter piece named '" + std::string(name) + "'");
  }
  const double* data(std::string_view name) const { return values.data() + piece(name).offset; }
  double* data(std::string_view name) { return values.data() + piece(name).offset; }
};

/// Glorot-uniform weights, zero biases, except the LSTM forget-gate bias
/// which starts at 1 so cells initially remember.
inline ParameterStore init_params(const NetworkSpec& spec, std::uint64_t seed) {
  const auto shapes = infer_shapes(spec);
  ParameterStore ps;
  ps.pieces = param_layout(spec);
  ps.values.assign(param_count(spec), 0.0);
  Rng rng(splitmix64(seed));
  auto glorot = [&](double* w, std::size_t n, double fan_in, double fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < n; ++i) w[i] = rng.uniform(-a, a);
  };
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& L = spec.layers[li];
    const Shape in = shapes[li];
    const std::string base = std::string(layer_tag(L.kind)) + "_" + std::to_string(li);
    switch (L.kind) {
      case LayerKind::conv1d: {
        const auto& k = ps.piece(base + "/kernel");
        glorot(ps.values.data() + k.offset, k.count,
               static_cast<double>(in.channels) * L.kernel,
               static_cast<double>(L.filters) * L.kernel);
        break;
      }
      case LayerKind::lstm: {
        const auto& wx = ps.piece(base + "/wx");
        const auto& wh = ps.piece(base + "/wh");
        glorot(ps.values.data() + wx.offset, wx.count, in.channels, 4.0 * L.units);
        glorot(ps.values.data() + wh.offset, wh.count, L.units, 4.0 * L.units);
        double* b = ps.data(base + "/bias");
        for (int u = 0; u < L.units; ++u) b[1 * L.units + u] = 1.0;  // forget gate
        break;
      }
      case LayerKind::dense: {
        const auto& k = ps.piece(base + "/kernel");
        glorot(ps.values.data() + k.offset, k.count, in.channels, L.units);
        break;
      }
      default:
        break;
    }
  }
  return ps;
}

/// Everything backward needs that forward computed, one entry per layer.
struct LayerCache {
  SeqMat input;
  std::vector<double> drop_mask;    // conv/dense output dropout (scaled), empty if off
  std::vector<std::size_t> argmax;  // maxpool winner per output element
  // lstm internals, all [time][units] except the masked input xm [time][channels]:
  SeqMat xm, hm, ig, fg, gg, og, cs, hs;
  std::vector<double> in_mask, rec_mask;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> dropout_mask(std::size_t n, double rate, Rng& rng) {
  const double keep = 1.0 - rate;
  std::vector<double> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  return mask;
}

}  // namespace detail

/// Runs the stack on one window. `training` turns dropout on, which then
/// needs `rng`. Pass `caches` to record what backward() will consume.
inline SeqMat forward(const NetworkSpec& spec, const ParameterStore& ps, const SeqMat& input,
                      bool training = false, Rng* rng = nullptr,
                      std::vector<LayerCache>* caches = nullptr) {
  const auto shapes = infer_shapes(spec);
  if (input.rows != static_cast<std::size_t>(spec.lags) ||
      input.cols != static_cast<std::size_t>(spec.dims)) {
    throw std::invalid_argument("forward: input shape mismatch");
  }
  if (ps.values.size() != param_count(spec)) {
    throw std::invalid_argument("forward: parameter vector has wrong length");
  }
  if (caches) {
    caches->clear();
    caches->resize(spec.layers.size());
  }

  SeqMat x = input;
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& L = spec.layers[li];
    const Shape osh = shapes[li + 1];
    LayerCache* cc = caches ? &(*caches)[li] : nullptr;
    if (cc) cc->input = x;
    const std::string base = std::string(layer_tag(L.kind)) + "_" + std::to_string(li);
    SeqMat out(static_cast<std::size_t>(osh.time), static_cast<std::size_t>(osh.channels));

    switch (L.kind) {
      case LayerKind::conv1d: {
        const double* W = ps.data(base + "/kernel");  // [F][C][K]
        const double* b = ps.data(base + "/bias");
        const int T = static_cast<int>(x.rows), C = static_cast<int>(x.cols);
        const int F = L.filters, K = L.kernel, D = L.dilation;
        for (int t = 0; t < T; ++t) {
          for (int f = 0; f < F; ++f) {
            double acc = b[f];
            for (int k = 0; k < K; ++k) {
              const int s = t - (K - 1 - k) * D;  // causal: tap K-1 reads time t
              if (s < 0) continue;
              const double* wrow = W + (static_cast<std::size_t>(f) * C) * K + k;
              const double* xrow = x.data.data() + static_cast<std::size_t>(s) * C;
              for (int c = 0; c < C; ++c) acc += wrow[static_cast<std::size_t>(c) * K] * xrow[c];
            }
            out.at(static_cast<std::size_t>(t), static_cast<std::size_t>(f)) = acc;
          }
        }
        break;
      }
      case LayerKind::maxpool1d: {
        const int C = static_cast<int>(x.cols), w = L.width;
        if (cc) cc->argmax.assign(out.data.size(), 0);
        for (std::size_t ot = 0; ot < out.rows; ++ot) {
          const std::size_t t0 = ot * static_cast<std::size_t>(w);
          for (int c = 0; c < C; ++c) {
            std::size_t best = t0;
            double bv = x.at(t0, static_cast<std::size_t>(c));
            for (int k = 1; k < w; ++k) {
              const double v = x.at(t0 + static_cast<std::size_t>(k), static_cast<std::size_t>(c));
              if (v > bv) {
                bv = v;
                best = t0 + static_cast<std::size_t>(k);
              }
            }
            out.at(ot, static_cast<std::size_t>(c)) = bv;
            if (cc) cc->argmax[ot * x.cols + static_cast<std::size_t>(c)] = best * x.cols + static_cast<std::size_t>(c);
          }
        }
        break;
      }
      case LayerKind::flatten: {
        out.data = x.data;  // row-major [t][c] already matches the flat order
        break;
      }
      case LayerKind::lstm: {
        const double* Wx = ps.data(base + "/wx");  // [4][U][C]
        const double* Wh = ps.data(base + "/wh");  // [4][U][U]
        const double* b = ps.data(base + "/bias");
        const int T = static_cast<int>(x.rows), C = static_cast<int>(x.cols), U = L.units;

        std::vector<double> in_mask(static_cast<std::size_t>(C), 1.0);
        std::vector<double> rec_mask(static_cast<std::size_t>(U), 1.0);
        if (training && L.dropout > 0.0) {
          if (!rng) throw std::invalid_argument("forward: dropout needs an rng");
          in_mask = detail::dropout_mask(in_mask.size(), L.dropout, *rng);
        }
        if (training && L.recurrent_dropout > 0.0) {
          if (!rng) throw std::invalid_argument("forward: dropout needs an rng");
          rec_mask = detail::dropout_mask(rec_mask.size(), L.recurrent_dropout, *rng);
        }

        SeqMat xm(x.rows, x.cols), hm(x.rows, static_cast<std::size_t>(U));
        SeqMat ig(x.rows, static_cast<std::size_t>(U)), fg = ig, gg = ig, og = ig, cs = ig, hs = ig;
        for (int t = 0; t < T; ++t) {
          for (int c = 0; c < C; ++c) {
            xm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(c)) =
                x.at(static_cast<std::size_t>(t), static_cast<std::size_t>(c)) * in_mask[static_cast<std::size_t>(c)];
          }
          for (int u = 0; u < U; ++u) {
            hm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(u)) =
                t == 0 ? 0.0
                       : hs.at(static_cast<std::size_t>(t - 1), static_cast<std::size_t>(u)) *
                             rec_mask[static_cast<std::size_t>(u)];
          }
          for (int u = 0; u < U; ++u) {
            double z[4];
            for (int g = 0; g < 4; ++g) {
              double acc = b[static_cast<std::size_t>(g) * U + static_cast<std::size_t>(u)];
              const double* wx = Wx + (static_cast<std::size_t>(g) * U + static_cast<std::size_t>(u)) * C;
              const double* wh = Wh + (static_cast<std::size_t>(g) * U + static_cast<std::size_t>(u)) * U;
              const double* xr = xm.data.data() + static_cast<std::size_t>(t) * xm.cols;
              const double* hr = hm.data.data() + static_cast<std::size_t>(t) * hm.cols;
              for (int c = 0; c < C; ++c) acc += wx[c] * xr[c];
              for (int v = 0; v < U; ++v) acc += wh[v] * hr[v];
              z[g] = acc;
            }
            const double iv = detail::sigmoid(z[0]);
            const double fv = detail::sigmoid(z[1]);
            const double gv = std::tanh(z[2]);
            const double ov = detail::sigmoid(z[3]);
            const double cprev = t == 0 ? 0.0 : cs.at(static_cast<std::size_t>(t - 1), static_cast<std::size_t>(u));
            const double cv = fv * cprev + iv * gv;
            ig.at(static_cast<std::size_t>(t), static_cast<std::size_t>(u)) = iv;
            fg.at(static_cast<std::size_t>(t), static_cast<std::size_t>(u)) = fv;
            gg.at(static_cast<std::size_t>(t), static_cast<std::size_t>(u)) = gv;
            og.at(static_cast<std::size_t>(t), static_cast<std::size_t>(u)) = ov;
            cs.at(static_cast<std::size_t>(t), static_cast<std::size_t>(u)) = cv;
            hs.at(static_cast<std::size_t>(t), static_cast<std::size_t>(u)) = ov * std::tanh(cv);
          }
        }
        if (L.return_sequences) {
          out.data = hs.data;
        } else {
          for (int u = 0; u < U; ++u) {
            out.at(0, static_cast<std::size_t>(u)) =
                hs.at(static_cast<std::size_t>(T - 1), static_cast<std::size_t>(u));
          }
        }
        if (cc) {
          cc->xm = std::move(xm);
          cc->hm = std::move(hm);
          cc->ig = std::move(ig);
          cc->fg = std::move(fg);
          cc->gg = std::move(gg);
          cc->og = std::move(og);
          cc->cs = std::move(cs);
          cc->hs = std::move(hs);
          cc->in_mask = std::move(in_mask);
          cc->rec_mask = std::move(rec_mask);
        }
        break;
      }
      case LayerKind::dense: {
        const double* W = ps.data(base + "/kernel");  // [M][N]
        const double* b = ps.data(base + "/bias");
        const int N = static_cast<int>(x.cols), M = L.units;
        for (int m = 0; m < M; ++m) {
          double acc = b[m];
          const double* wrow = W + static_cast<std::size_t>(m) * N;
          for (int n = 0; n < N; ++n) acc += wrow[n] * x.data[static_cast<std::size_t>(n)];
          out.at(0, static_cast<std::size_t>(m)) = acc;
        }
        break;
      }
    }

    if ((L.kind == LayerKind::conv1d || L.kind == LayerKind::dense) && training && L.dropout > 0.0) {
      if (!rng) throw std::invalid_argument("forward: dropout needs an rng");
      auto mask = detail::dropout_mask(out.data.size(), L.dropout, *rng);
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask[i];
      if (cc) cc->drop_mask = std::move(mask);
    }
    x = std::move(out);
  }
  return x;
}

/// Backpropagates dloss/doutput through cached activations, ADDING each
/// parameter's gradient into `grad` (callers zero it or sum over a batch).
inline void backward(const NetworkSpec& spec, const ParameterStore& ps,
                     const std::vector<LayerCache>& caches, const SeqMat& dout_top,
                     std::span<double> grad) {
  if (caches.size() != spec.layers.size()) {
    throw std::invalid_argument("backward: cache/layer count mismatch");
  }
  if (grad.size() != ps.values.size()) {
    throw std::invalid_argument("backward: gradient vector has wrong length");
  }
  SeqMat dout = dout_top;
  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const LayerSpec& L = spec.layers[li];
    const LayerCache& cc = caches[li];
    const SeqMat& x = cc.input;
    const std::string base = std::string(layer_tag(L.kind)) + "_" + std::to_string(li);

    if (!cc.drop_mask.empty()) {
      for (std::size_t i = 0; i < dout.data.size(); ++i) dout.data[i] *= cc.drop_mask[i];
    }

    SeqMat din(x.rows, x.cols);
    switch (L.kind) {
      case LayerKind::conv1d: {
        const auto& kp = ps.piece(base + "/kernel");
        const auto& bp = ps.piece(base + "/bias");
        const double* W = ps.values.data() + kp.offset;
        double* dW = grad.data() + kp.offset;
        double* db = grad.data() + bp.offset;
        const int T = static_cast<int>(x.rows), C = static_cast<int>(x.cols);
        const int F = L.filters, K = L.kernel, D = L.dilation;
        for (int t = 0; t < T; ++t) {
          for (int f = 0; f < F; ++f) {
            const double g = dout.at(static_cast<std::size_t>(t), static_cast<std::size_t>(f));
            if (g == 0.0) continue;
            db[f] += g;
            for (int k = 0; k < K; ++k) {
              const int s = t - (K - 1 - k) * D;
              if (s < 0) continue;
              const std::size_t wbase = (static_cast<std::size_t>(f) * C) * K + static_cast<std::size_t>(k);
              const double* xrow = x.data.data() + static_cast<std::size_t>(s) * C;
              double* drow = din.data.data() + static_cast<std::size_t>(s) * C;
              for (int c = 0; c < C; ++c) {
                dW[wbase + static_cast<std::size_t>(c) * K] += g * xrow[c];
                drow[c] += g * W[wbase + static_cast<std::size_t>(c) * K];
              }
            }
          }
        }
        break;
      }
      case LayerKind::maxpool1d: {
        for (std::size_t e = 0; e < dout.data.size(); ++e) din.data[cc.argmax[e]] += dout.data[e];
        break;
      }
      case LayerKind::flatten: {
        din.data = dout.data;
        break;
      }
      case LayerKind::lstm: {
        const auto& wxp = ps.piece(base + "/wx");
        const auto& whp = ps.piece(base + "/wh");
        const auto& bp = ps.piece(base + "/bias");
        const double* Wx = ps.values.data() + wxp.offset;
        const double* Wh = ps.values.data() + whp.offset;
        double* dWx = grad.data() + wxp.offset;
        double* dWh = grad.data() + whp.offset;
        double* db = grad.data() + bp.offset;
        const int T = static_cast<int>(x.rows), C = static_cast<int>(x.cols), U = L.units;

        std::vector<double> dh(static_cast<std::size_t>(U), 0.0);
        std::vector<double> dc(static_cast<std::size_t>(U), 0.0);
        std::vector<double> dz(static_cast<std::size_t>(4 * U));
        for (int t = T - 1; t >= 0; --t) {
          if (L.return_sequences) {
            for (int u = 0; u < U; ++u) dh[static_cast<std::size_t>(u)] += dout.at(static_cast<std::size_t>(t), static_cast<std::size_t>(u));
          } else if (t == T - 1) {
            for (int u = 0; u < U; ++u) dh[static_cast<std::size_t>(u)] += dout.at(0, static_cast<std::size_t>(u));
          }
          for (int u = 0; u < U; ++u) {
            const auto ut = static_cast<std::size_t>(u);
            const auto tt = static_cast<std::size_t>(t);
            const double iv = cc.ig.at(tt, ut), fv = cc.fg.at(tt, ut);
            const double gv = cc.gg.at(tt, ut), ov = cc.og.at(tt, ut);
            const double cv = cc.cs.at(tt, ut);
            const double tc = std::tanh(cv);
            const double cprev = t == 0 ? 0.0 : cc.cs.at(tt - 1, ut);
            const double dov = dh[ut] * tc;
            const double dcv = dc[ut] + dh[ut] * ov * (1.0 - tc * tc);
            const double div = dcv * gv;
            const double dfv = dcv * cprev;
            const double dgv = dcv * iv;
            dz[0 * static_cast<std::size_t>(U) + ut] = div * iv * (1.0 - iv);
            dz[1 * static_cast<std::size_t>(U) + ut] = dfv * fv * (1.0 - fv);
            dz[2 * static_cast<std::size_t>(U) + ut] = dgv * (1.0 - gv * gv);
            dz[3 * static_cast<std::size_t>(U) + ut] = dov * ov * (1.0 - ov);
            dc[ut] = dcv * fv;
          }
          std::fill(dh.begin(), dh.end(), 0.0);
          const double* xr = cc.xm.data.data() + static_cast<std::size_t>(t) * cc.xm.cols;
          const double* hr = cc.hm.data.data() + static_cast<std::size_t>(t) * cc.hm.cols;
          double* dxr = din.data.data() + static_cast<std::size_t>(t) * din.cols;
          for (int g = 0; g < 4; ++g) {
            for (int u = 0; u < U; ++u) {
              const double gz = dz[static_cast<std::size_t>(g) * U + static_cast<std::size_t>(u)];
              if (gz == 0.0) continue;
              const std::size_t row = (static_cast<std::size_t>(g) * U + static_cast<std::size_t>(u));
              db[row] += gz;
              double* dwx = dWx + row * C;
              double* dwh = dWh + row * U;
              const double* wx = Wx + row * C;
              const double* wh = Wh + row * U;
              for (int c = 0; c < C; ++c) {
                dwx[c] += gz * xr[c];
                dxr[c] += gz * wx[c];
              }
              for (int v = 0; v < U; ++v) {
                dwh[v] += gz * hr[v];
                dh[static_cast<std::size_t>(v)] += gz * wh[v];
              }
            }
          }
          // dxr currently holds d(masked x); dh holds d(masked h_{t-1}).
          for (int c = 0; c < C; ++c) dxr[c] *= cc.in_mask[static_cast<std::size_t>(c)];
          for (int u = 0; u < U; ++u) dh[static_cast<std::size_t>(u)] *= cc.rec_mask[static_cast<std::size_t>(u)];
        }
        break;
      }
      case LayerKind::dense: {
        const auto& kp = ps.piece(base + "/kernel");
        const auto& bp = ps.piece(base + "/bias");
        const double* W = ps.values.data() + kp.offset;
        double* dW = grad.data() + kp.offset;
        double* db = grad.data() + bp.offset;
        const int N = static_cast<int>(x.cols), M = L.units;
        for (int m = 0; m < M; ++m) {
          const double g = dout.at(0, static_cast<std::size_t>(m));
          db[m] += g;
          double* dwrow = dW + static_cast<std::size_t>(m) * N;
          const double* wrow = W + static_cast<std::size_t>(m) * N;
          for (int n = 0; n < N; ++n) {
            dwrow[n] += g * x.data[static_cast<std::size_t>(n)];
            din.data[static_cast<std::size_t>(n)] += g * wrow[n];
          }
        }
        break;
      }
    }
    dout = std::move(din);
  }
}

/// Mean squared error over the components of a single prediction.
inline double mse_loss(const SeqMat& pred, std::span<const double> target) {
  if (pred.rows != 1 || pred.cols != target.size()) {
    throw std::invalid_argument("mse_loss: prediction/target shape mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = pred.data[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(target.size());
}

inline SeqMat mse_grad(const SeqMat& pred, std::span<const double> target) {
  if (pred.rows != 1 || pred.cols != target.size()) {
    throw std::invalid_argument("mse_grad: prediction/target shape mismatch");
  }
  SeqMat g(1, pred.cols);
  for (std::size_t i = 0; i < target.size(); ++i) {
    g.data[i] = 2.0 * (pred.data[i] - target[i]) / static_cast<double>(target.size());
  }
  return g;
}

/// lambda * sum of squared weights, biases exempt.
inline double l2_penalty(const ParameterStore& ps, double lambda) {
  double acc = 0.0;
  for (const ParamPiece& p : ps.pieces) {
    if (p.name.ends_with("/bias")) continue;
    for (std::size_t i = 0; i < p.count; ++i) {
      const double w = ps.values[p.offset + i];
      acc += w * w;
    }
  }
  return lambda * acc;
}

/// Adds the gradient of l2_penalty (2*lambda*w per weight) into grad.
/// Call once per batch, after the averaged data gradient.
inline void add_l2_gradient(const ParameterStore& ps, std::span<double> grad, double lambda) {
  if (grad.size() != ps.values.size()) {
    throw std::invalid_argument("add_l2_gradient: gradient vector has wrong length");
  }
  for (const ParamPiece& p : ps.pieces) {
    if (p.name.ends_with("/bias")) continue;
    for (std::size_t i = 0; i < p.count; ++i) {
      grad[p.offset + i] += 2.0 * lambda * ps.values[p.offset + i];
    }
  }
}

}
