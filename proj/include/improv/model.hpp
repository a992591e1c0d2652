#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "improv/dataset.hpp"
#include "improv/errors.hpp"
#include "improv/event.hpp"
#include "improv/nn.hpp"
#include "improv/optimizer.hpp"
#include "improv/scaling.hpp"

namespace improv {

/// Dilated causal convolution, pooled and flattened into a linear readout.
inline NetworkSpec make_cnn_spec(int lags = 10, int dims = kEventDims) {
  NetworkSpec s;
  s.lags = lags;
  s.dims = dims;
  s.layers = {conv1d_layer(64, 4, 8, 0.5), maxpool1d_layer(2), flatten_layer(),
              dense_layer(dims)};
  return s;
}

/// Dilated causal convolution feeding a recurrent layer, final state only.
inline NetworkSpec make_cnn_rnn_spec(int lags = 10, int dims = kEventDims) {
  NetworkSpec s;
  s.lags = lags;
  s.dims = dims;
  s.layers = {conv1d_layer(32, 4, 8, 0.5), lstm_layer(32, false, 0.5, 0.5), dense_layer(dims)};
  return s;
}

inline SeqMat window_input(std::span<const std::array<double, kEventDims>> w) {
  SeqMat m(w.size(), kEventDims);
  for (std::size_t t = 0; t < w.size(); ++t) {
    for (int d = 0; d < kEventDims; ++d) m.at(t, static_cast<std::size_t>(d)) = w[t][d];
  }
  return m;
}

/// Baseline that predicts the window's last event unchanged.
inline std::array<double, kEventDims> naive_predict(
    std::span<const std::array<double, kEventDims>> window) {
  if (window.empty()) throw std::invalid_argument("naive_predict: empty window");
  return window.back();
}

struct TrainConfig {
  int epochs = 200;
  int batch_size = 32;
  double lr = 1e-3;
  double lr_fine = 1e-4;
  double l2 = 0.01;
  int patience = 20;
  std::uint64_t seed = 1;
};

struct TrainLogEntry {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ParameterStore params;
  std::vector<TrainLogEntry> log;
  double best_val_loss = 0.0;
  int best_epoch = 0;
  int stopped_epoch = 0;
};

inline double dataset_loss(const NetworkSpec& spec, const ParameterStore& ps,
                           const WindowedDataset& ds) {
  double acc = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const SeqMat pred = forward(spec, ps, window_input(ds.input(i)));
    acc += mse_loss(pred, ds.target(i));
  }
  return acc / static_cast<double>(ds.size());
}

/// Full-batch-sequential training: batches are taken in dataset order with
/// no shuffling. Validation loss drives a two-phase learning-rate schedule
/// (drop to lr_fine after `patience` stale epochs, stop after another
/// `patience`) and selects the parameters that are returned.
inline TrainResult train_model(const NetworkSpec& spec, const WindowedDataset& train,
                               const WindowedDataset& val, const TrainConfig& cfg) {
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.patience < 1) {
    throw DataError("train: epochs, batch_size and patience must be >= 1");
  }
  if (train.size() == 0 || val.size() == 0) throw DataError("train: empty dataset");

  ParameterStore ps = init_params(spec, cfg.seed);
  Rng rng = Rng::substream(cfg.seed, 0xd0);
  AdamState adam;
  AdamConfig acfg;
  acfg.lr = cfg.lr;

  TrainResult res;
  res.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<double> best_values = ps.values;
  std::vector<double> grad(ps.values.size());
  std::vector<LayerCache> caches;

  int stale = 0;
  bool fine_phase = false;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double train_acc = 0.0;
    const std::size_t n = train.size();
    for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(n, b0 + static_cast<std::size_t>(cfg.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = b0; i < b1; ++i) {
        const SeqMat in = window_input(train.input(i));
        const SeqMat pred = forward(spec, ps, in, true, &rng, &caches);
        train_acc += mse_loss(pred, train.target(i));
        backward(spec, ps, caches, mse_grad(pred, train.target(i)), grad);
      }
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      for (double& g : grad) g *= inv;
      if (cfg.l2 > 0.0) add_l2_gradient(ps, grad, cfg.l2);
      adam_step(ps, grad, adam, acfg);
    }
    const double train_loss = train_acc / static_cast<double>(n);
    const double val_loss = dataset_loss(spec, ps, val);
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch));
    }
    res.log.push_back({epoch, train_loss, val_loss, acfg.lr});
    res.stopped_epoch = epoch;

    if (val_loss < res.best_val_loss) {
      res.best_val_loss = val_loss;
      res.best_epoch = epoch;
      best_values = ps.values;
      stale = 0;
    } else {
      ++stale;
      if (stale >= cfg.patience) {
        if (!fine_phase) {
          fine_phase = true;
          acfg.lr = cfg.lr_fine;
          stale = 0;
        } else {
          break;
        }
      }
    }
  }
  ps.values = std::move(best_values);
  res.params = std::move(ps);
  return res;
}

struct EvalReport {
  std::size_t n = 0;
  double mse = 0.0;
  double rmse = 0.0;
  std::array<double, kEventDims> rmse_per_component{};
};

namespace detail {

template <typename PredictFn>
EvalReport evaluate_with(const WindowedDataset& ds, PredictFn&& predict) {
  if (ds.size() == 0) throw DataError("evaluate: empty dataset");
  EvalReport rep;
  rep.n = ds.size();
  std::array<double, kEventDims> sq{};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::array<double, kEventDims> p = predict(ds.input(i));
    const auto& t = ds.target(i);
    for (int d = 0; d < kEventDims; ++d) {
      const double e = p[static_cast<std::size_t>(d)] - t[static_cast<std::size_t>(d)];
      sq[static_cast<std::size_t>(d)] += e * e;
    }
  }
  double total = 0.0;
  for (int d = 0; d < kEventDims; ++d) {
    const double mean_sq = sq[static_cast<std::size_t>(d)] / static_cast<double>(ds.size());
    rep.rmse_per_component[static_cast<std::size_t>(d)] = std::sqrt(mean_sq);
    total += mean_sq;
  }
  rep.mse = total / kEventDims;
  rep.rmse = std::sqrt(rep.mse);
  return rep;
}

}  // namespace detail

/// Scaled-space error of the trained network over a dataset.
inline EvalReport evaluate(const NetworkSpec& spec, const ParameterStore& ps,
                           const WindowedDataset& ds) {
  return detail::evaluate_with(ds, [&](std::span<const std::array<double, kEventDims>> w) {
    const SeqMat pred = forward(spec, ps, window_input(w));
    std::array<double, kEventDims> out;
    std::copy_n(pred.data.begin(), kEventDims, out.begin());
    return out;
  });
}

/// Scaled-space error of the repeat-last-event baseline over a dataset.
inline EvalReport evaluate_naive(const WindowedDataset& ds) {
  return detail::evaluate_with(ds, [](std::span<const std::array<double, kEventDims>> w) {
    return naive_predict(w);
  });
}

/// Re-expresses a scaled-space report in raw event units. The scaler is
/// affine per component, so each component's error just picks up that
/// component's spread; no data pass is needed.
inline EvalReport unscale_report(const EvalReport& rep, const RobustScaler& sc) {
  EvalReport out = rep;
  double total = 0.0;
  for (int d = 0; d < kEventDims; ++d) {
    const double r =
        rep.rmse_per_component[static_cast<std::size_t>(d)] * sc.spread[static_cast<std::size_t>(d)];
    out.rmse_per_component[static_cast<std::size_t>(d)] = r;
    total += r * r;
  }
  out.mse = total / kEventDims;
  out.rmse = std::sqrt(out.mse);
  return out;
}

// --- persistence ----------------------------------------------------------

struct ModelFile {
  std::string arch;
  NetworkSpec spec;
  RobustScaler scaler;
  ParameterStore params;
  std::vector<TrainLogEntry> log;
  std::uint64_t seed = 0;
  std::string corpus_name;
};

inline constexpr const char* kModelFormat = "improv-model";
inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json layer_to_json(const LayerSpec& L) {
  return {{"kind", layer_tag(L.kind)},
          {"filters", L.filters},
          {"kernel", L.kernel},
          {"dilation", L.dilation},
          {"width", L.width},
          {"units", L.units},
          {"return_sequences", L.return_sequences},
          {"dropout", L.dropout},
          {"recurrent_dropout", L.recurrent_dropout}};
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec L;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "conv1d") L.kind = LayerKind::conv1d;
  else if (kind == "maxpool1d") L.kind = LayerKind::maxpool1d;
  else if (kind == "flatten") L.kind = LayerKind::flatten;
  else if (kind == "lstm") L.kind = LayerKind::lstm;
  else if (kind == "dense") L.kind = LayerKind::dense;
  else throw DataError("model file: unknown layer kind '" + kind + "'");
  L.filters = j.at("filters").get<int>();
  L.kernel = j.at("kernel").get<int>();
  L.dilation = j.at("dilation").get<int>();
  L.width = j.at("width").get<int>();
  L.units = j.at("units").get<int>();
  L.return_sequences = j.at("return_sequences").get<bool>();
  L.dropout = j.at("dropout").get<double>();
  L.recurrent_dropout = j.at("recurrent_dropout").get<double>();
  return L;
}

}  // namespace detail

inline void save_model(const ModelFile& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = kModelFormat;
  j["format_version"] = kModelFormatVersion;
  j["arch"] = m.arch;
  j["seed"] = m.seed;
  j["corpus"] = m.corpus_name;
  j["network"] = {{"lags", m.spec.lags}, {"dims", m.spec.dims}, {"layers", nlohmann::json::array()}};
  for (const LayerSpec& L : m.spec.layers) j["network"]["layers"].push_back(detail::layer_to_json(L));
  j["scaler"] = {{"center", m.scaler.center}, {"spread", m.scaler.spread}};
  j["layout"] = nlohmann::json::array();
  for (const ParamPiece& p : m.params.pieces) {
    j["layout"].push_back({{"name", p.name}, {"offset", p.offset}, {"count", p.count}, {"shape", p.shape}});
  }
  j["weights"] = m.params.values;
  j["training_log"] = nlohmann::json::array();
  for (const TrainLogEntry& e : m.log) {
    j["training_log"].push_back(
        {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"lr", e.lr}});
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f << j.dump(2) << '\n';
}

inline ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("model file: " + std::string(e.what()));
  }
  try {
    if (j.at("format").get<std::string>() != kModelFormat) {
      throw DataError("model file: unrecognized format tag");
    }
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw DataError("model file: unsupported format version");
    }
    ModelFile m;
    m.arch = j.at("arch").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.corpus_name = j.at("corpus").get<std::string>();
    m.spec.lags = j.at("network").at("lags").get<int>();
    m.spec.dims = j.at("network").at("dims").get<int>();
    for (const auto& lj : j.at("network").at("layers")) {
      m.spec.layers.push_back(detail::layer_from_json(lj));
    }
    m.scaler.center = j.at("scaler").at("center").get<std::array<double, kEventDims>>();
    m.scaler.spread = j.at("scaler").at("spread").get<std::array<double, kEventDims>>();
    m.params.pieces = param_layout(m.spec);
    const auto& layout = j.at("layout");
    if (layout.size() != m.params.pieces.size()) {
      throw DataError("model file: layout does not match the network");
    }
    for (std::size_t i = 0; i < m.params.pieces.size(); ++i) {
      const ParamPiece& p = m.params.pieces[i];
      if (layout[i].at("name").get<std::string>() != p.name ||
          layout[i].at("offset").get<std::size_t>() != p.offset ||
          layout[i].at("count").get<std::size_t>() != p.count) {
        throw DataError("model file: layout does not match the network");
      }
    }
    m.params.values = j.at("weights").get<std::vector<double>>();
    if (m.params.values.size() != param_count(m.spec)) {
      throw DataError("model file: weight count does not match the network");
    }
    for (const auto& ej : j.at("training_log")) {
      m.log.push_back({ej.at("epoch").get<int>(), ej.at("train_loss").get<double>(),
                       ej.at("val_loss").get<double>(), ej.at("lr").get<double>()});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("model file: " + std::string(e.what()));
  }
}

}
