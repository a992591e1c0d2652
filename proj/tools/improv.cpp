// improv — command-line front end for the improv library: synthesize or
// ingest corpora, train the two reference networks, generate continuations,
// and compare the results statistically.
//
// Subcommands: ingest, synth, train, generate, stats, render. Every
// subcommand takes --seed, --out-dir and --config. A config file is JSON
// with one snake_case key per flag; precedence is flags > config file >
// built-in defaults. Each run writes <command>-manifest.json into the
// output directory capturing the effective configuration, so
// `improv <command> --config <manifest>` replays a run exactly.
//
// Exit codes: 0 success, 1 usage, 2 bad data, 3 numerical failure.

#include <improv/corpus.hpp>
#include <improv/dataset.hpp>
#include <improv/errors.hpp>
#include <improv/event.hpp>
#include <improv/generate.hpp>
#include <improv/midi.hpp>
#include <improv/model.hpp>
#include <improv/nn.hpp>
#include <improv/rng.hpp>
#include <improv/scaling.hpp>
#include <improv/stats.hpp>
#include <improv/version.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace improv;

namespace {

/// Bad invocation that CLI11 cannot catch on its own (for example a
/// required value missing from both the flags and the config file).
/// main() maps this to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- small file helpers -----------------------------------------------------

std::vector<std::uint8_t> read_binary_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot open: " + p.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_binary_file(const fs::path& p, std::span<const std::uint8_t> bytes) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + p.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + p.string());
}

void write_json_file(const json& j, const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + p.string());
  f << j.dump(2) << '\n';
  if (!f) throw DataError("write failed: " + p.string());
}

/// Loads a config file. A run manifest is accepted too: when the document
/// has a "config" object, that object is used, so manifests replay as-is.
json load_config(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot open: " + p.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("config " + p.string() + ": " + e.what());
  }
  if (j.is_object() && j.contains("config") && j.at("config").is_object()) j = j.at("config");
  if (!j.is_object()) throw DataError("config " + p.string() + ": expected a JSON object");
  return j;
}

/// Fills `value` from config key `key` unless the flag was given explicitly
/// on the command line — flags always win over the file.
template <typename T>
void merge_opt(const CLI::App& cmd, const json& cfg, const std::string& flag,
               const std::string& key, T& value) {
  if (cfg.is_null() || cmd.count(flag) > 0) return;
  const auto it = cfg.find(key);
  if (it == cfg.end()) return;
  try {
    value = it->get<T>();
  } catch (const json::exception& e) {
    throw DataError("config key '" + key + "': " + e.what());
  }
}

// --- run manifest -----------------------------------------------------------

class Manifest {
 public:
  Manifest(std::string command, fs::path out_dir)
      : command_(std::move(command)),
        out_dir_(std::move(out_dir)),
        start_(std::chrono::steady_clock::now()) {}

  json& config() { return config_; }
  void add_input(const fs::path& p) { inputs_.push_back(p.string()); }
  void add_output(const fs::path& p) { outputs_.push_back(p.string()); }

  void write() const {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json m;
    m["command"] = command_;
    m["tool"] = "improv";
    m["version"] = std::string(kVersion);
    m["config"] = config_;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    m["wall_time_seconds"] = secs;
    write_json_file(m, out_dir_ / (command_ + "-manifest.json"));
  }

 private:
  std::string command_;
  fs::path out_dir_;
  std::chrono::steady_clock::time_point start_;
  json config_ = json::object();
  std::vector<std::string> inputs_, outputs_;
};

// --- common options ----------------------------------------------------------

struct CommonOpts {
  std::string out_dir = "out";
  std::string config_path;
  std::uint64_t seed = 1;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--out-dir", c.out_dir, "directory for artifacts (created if missing)");
  cmd->add_option("--config", c.config_path,
                  "JSON config file or a previous run manifest; explicit flags override it");
  cmd->add_option("--seed", c.seed, "rng seed");
}

/// Loads the config file (if any) and resolves the common options against
/// it. Returns the config object for the command-specific merges.
json merge_common(const CLI::App& cmd, CommonOpts& c) {
  json cfg;
  if (!c.config_path.empty()) cfg = load_config(c.config_path);
  merge_opt(cmd, cfg, "--out-dir", "out_dir", c.out_dir);
  merge_opt(cmd, cfg, "--seed", "seed", c.seed);
  return cfg;
}

fs::path prepare_out_dir(const CommonOpts& c) {
  fs::path dir(c.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

// --- shared printing ----------------------------------------------------------

struct SeriesStats {
  double mean = 0.0, sd = 0.0, lo = 0.0, hi = 0.0;
};

SeriesStats series_stats(std::span<const double> v) {
  SeriesStats s;
  if (v.empty()) return s;
  s.lo = s.hi = v.front();
  double sum = 0.0;
  for (double x : v) {
    sum += x;
    s.lo = std::min(s.lo, x);
    s.hi = std::max(s.hi, x);
  }
  s.mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(sq / static_cast<double>(v.size()));
  return s;
}

json series_stats_json(std::span<const double> v) {
  const SeriesStats s = series_stats(v);
  return json{{"mean", s.mean}, {"sd", s.sd}, {"min", s.lo}, {"max", s.hi}};
}

void print_corpus_summary(const Corpus& c) {
  const DescriptiveStats d = describe(c.events);
  const FlatNotes f = flatten_to_notes(c.events);
  std::printf("corpus %s: pieces %zu  events %zu  notes %zu  notes/event %.4f  chord share %.4f\n",
              c.name.c_str(), c.piece_count(), d.n_events, d.n_notes, d.notes_per_event,
              d.chord_ratio);
  const auto row = [](const char* label, std::span<const double> v, const char* unit) {
    const SeriesStats s = series_stats(v);
    std::printf("  %-9s mean %10.3f  sd %10.3f  min %10.3f  max %10.3f%s\n", label, s.mean, s.sd,
                s.lo, s.hi, unit);
  };
  row("pitch", f.pitch, "");
  row("velocity", f.velocity, "");
  row("duration", f.duration, " ms");
  row("ioi", f.ioi, " ms");
}

json describe_json(const Corpus& c) {
  const DescriptiveStats d = describe(c.events);
  const FlatNotes f = flatten_to_notes(c.events);
  return json{{"name", c.name},
              {"pieces", c.piece_count()},
              {"events", d.n_events},
              {"notes", d.n_notes},
              {"notes_per_event", d.notes_per_event},
              {"chord_share", d.chord_ratio},
              {"pitch", series_stats_json(f.pitch)},
              {"velocity", series_stats_json(f.velocity)},
              {"duration_ms", series_stats_json(f.duration)},
              {"ioi_ms", series_stats_json(f.ioi)}};
}

// --- feature extraction --------------------------------------------------------

constexpr std::array<const char*, 4> kFeatureNames = {"pitch", "velocity", "duration", "ioi"};

/// Note-level series per feature (chords contribute one entry per sounded
/// pitch; the ioi sits on a chord's last member, 0 elsewhere).
std::array<std::vector<double>, 4> note_series(const Corpus& c) {
  FlatNotes f = flatten_to_notes(c.events);
  return {std::move(f.pitch), std::move(f.velocity), std::move(f.duration), std::move(f.ioi)};
}

/// Event-level series per feature (one entry per event; pitch is the
/// event's lowest sounded pitch).
std::array<std::vector<double>, 4> event_series(const Corpus& c) {
  std::array<std::vector<double>, 4> out;
  for (auto& s : out) s.reserve(c.events.size());
  for (const Event& e : c.events) {
    out[0].push_back(static_cast<double>(e.pitches[0]));
    out[1].push_back(static_cast<double>(e.velocity));
    out[2].push_back(e.duration_ms);
    out[3].push_back(e.ioi_ms);
  }
  return out;
}

std::vector<EventVec> event_vectors(const Corpus& c) {
  std::vector<EventVec> out;
  out.reserve(c.events.size());
  for (const Event& e : c.events) out.push_back(event_to_vector(e));
  return out;
}

// --- ingest ----------------------------------------------------------------

struct IngestOpts {
  CommonOpts common;
  std::vector<std::string> files;
  double threshold = kChordThresholdMs;
  std::string name = "ingested";
};

void run_ingest(const CLI::App& cmd, IngestOpts& o) {
  const json cfg = merge_common(cmd, o.common);
  merge_opt(cmd, cfg, "files", "files", o.files);
  merge_opt(cmd, cfg, "--threshold", "threshold_ms", o.threshold);
  merge_opt(cmd, cfg, "--name", "name", o.name);
  if (o.files.empty()) throw UsageError("ingest: no input files given");

  const fs::path out_dir = prepare_out_dir(o.common);
  Manifest man("ingest", out_dir);

  Corpus c;
  c.name = o.name;
  c.piece_bounds.clear();
  std::vector<std::string> failures;
  std::size_t discarded = 0;
  for (const std::string& file : o.files) {
    try {
      const auto bytes = read_binary_file(file);
      const SmfReadResult smf = read_smf(bytes);
      for (const std::string& w : smf.warnings) std::cerr << file << ": warning: " << w << "\n";
      GroupingResult g = group_notes_to_events(smf.notes, o.threshold);
      discarded += g.discarded_notes;
      if (g.events.empty()) throw DataError("no notes");
      c.piece_bounds.push_back(c.events.size());
      c.events.insert(c.events.end(), g.events.begin(), g.events.end());
    } catch (const DataError& e) {
      failures.push_back(file + ": " + e.what());
    }
  }
  if (!failures.empty()) {
    std::string msg = "ingest: " + std::to_string(failures.size()) + " of " +
                      std::to_string(o.files.size()) + " file(s) failed; no output written";
    for (const std::string& f : failures) msg += "\n  " + f;
    throw DataError(msg);
  }
  if (discarded > 0) {
    std::cerr << "note: dropped " << discarded << " chord notes beyond the 10 lowest\n";
  }
  c.check();

  const fs::path csv = out_dir / "corpus.csv";
  write_corpus_csv(c, csv);
  print_corpus_summary(c);
  std::printf("wrote %s\n", csv.string().c_str());

  man.config() = json{{"files", o.files},
                      {"threshold_ms", o.threshold},
                      {"name", o.name},
                      {"out_dir", o.common.out_dir},
                      {"seed", o.common.seed}};
  for (const std::string& f : o.files) man.add_input(f);
  man.add_output(csv);
  man.write();
}

// --- synth -------------------------------------------------------------------

struct SynthOpts {
  CommonOpts common;
  SynthConfig sc;
  std::string name;
};

void run_synth(const CLI::App& cmd, SynthOpts& o) {
  const json cfg = merge_common(cmd, o.common);
  SynthConfig& s = o.sc;
  merge_opt(cmd, cfg, "--pieces", "pieces", s.pieces);
  merge_opt(cmd, cfg, "--events-per-piece", "events_per_piece", s.events_per_piece);
  merge_opt(cmd, cfg, "--chord-prob", "chord_prob", s.chord_prob);
  merge_opt(cmd, cfg, "--min-chord-size", "min_chord_size", s.min_chord_size);
  merge_opt(cmd, cfg, "--max-chord-size", "max_chord_size", s.max_chord_size);
  merge_opt(cmd, cfg, "--register-low", "register_low", s.register_low);
  merge_opt(cmd, cfg, "--register-high", "register_high", s.register_high);
  merge_opt(cmd, cfg, "--register-step-sd", "register_step_sd", s.register_step_sd);
  merge_opt(cmd, cfg, "--chord-spread", "chord_spread", s.chord_spread);
  merge_opt(cmd, cfg, "--dur-log-median", "dur_log_median", s.dur_log_median);
  merge_opt(cmd, cfg, "--dur-log-sd", "dur_log_sd", s.dur_log_sd);
  merge_opt(cmd, cfg, "--ioi-log-median", "ioi_log_median", s.ioi_log_median);
  merge_opt(cmd, cfg, "--ioi-log-sd", "ioi_log_sd", s.ioi_log_sd);
  merge_opt(cmd, cfg, "--piece-tempo-sd", "piece_tempo_sd", s.piece_tempo_sd);
  merge_opt(cmd, cfg, "--velocity-low", "velocity_low", s.velocity_low);
  merge_opt(cmd, cfg, "--velocity-high", "velocity_high", s.velocity_high);
  merge_opt(cmd, cfg, "--velocity-walk-sd", "velocity_walk_sd", s.velocity_walk_sd);
  merge_opt(cmd, cfg, "--velocity-noise-sd", "velocity_noise_sd", s.velocity_noise_sd);
  merge_opt(cmd, cfg, "--name", "name", o.name);

  const fs::path out_dir = prepare_out_dir(o.common);
  Manifest man("synth", out_dir);

  Corpus c = synth_corpus(s, o.common.seed);
  if (!o.name.empty()) c.name = o.name;

  const fs::path csv = out_dir / "corpus.csv";
  write_corpus_csv(c, csv);
  print_corpus_summary(c);
  std::printf("wrote %s\n", csv.string().c_str());

  man.config() = json{{"pieces", s.pieces},
                      {"events_per_piece", s.events_per_piece},
                      {"chord_prob", s.chord_prob},
                      {"min_chord_size", s.min_chord_size},
                      {"max_chord_size", s.max_chord_size},
                      {"register_low", s.register_low},
                      {"register_high", s.register_high},
                      {"register_step_sd", s.register_step_sd},
                      {"chord_spread", s.chord_spread},
                      {"dur_log_median", s.dur_log_median},
                      {"dur_log_sd", s.dur_log_sd},
                      {"ioi_log_median", s.ioi_log_median},
                      {"ioi_log_sd", s.ioi_log_sd},
                      {"piece_tempo_sd", s.piece_tempo_sd},
                      {"velocity_low", s.velocity_low},
                      {"velocity_high", s.velocity_high},
                      {"velocity_walk_sd", s.velocity_walk_sd},
                      {"velocity_noise_sd", s.velocity_noise_sd},
                      {"name", o.name},
                      {"out_dir", o.common.out_dir},
                      {"seed", o.common.seed}};
  man.add_output(csv);
  man.write();
}

// --- train -------------------------------------------------------------------

struct TrainOpts {
  CommonOpts common;
  std::string corpus;
  std::string arch = "cnn";
  TrainConfig tc;
  double val_fraction = 0.1;
  int lags = 10;
  bool augment = false;
  std::string offsets = "-6,-5,-4,-3,-2,-1,1,2,3,4,5";
};

/// Parses a comma-separated semitone list. 0 is always included so the
/// untransposed pieces stay in the training set.
std::vector<int> parse_offsets(const std::string& s) {
  std::set<int> offs{0};
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    int v = 0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    const auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || p != last) throw UsageError("bad transpose offset '" + tok + "'");
    offs.insert(v);
  }
  if (offs.size() < 2) throw UsageError("offset list names no transpositions");
  return {offs.begin(), offs.end()};
}

NetworkSpec spec_for_arch(const std::string& arch, int lags) {
  if (arch == "cnn") return make_cnn_spec(lags);
  if (arch == "cnn-rnn") return make_cnn_rnn_spec(lags);
  throw UsageError("unknown arch '" + arch + "' (expected cnn or cnn-rnn)");
}

void run_train(const CLI::App& cmd, TrainOpts& o) {
  const json cfg = merge_common(cmd, o.common);
  merge_opt(cmd, cfg, "--corpus", "corpus", o.corpus);
  merge_opt(cmd, cfg, "--arch", "arch", o.arch);
  merge_opt(cmd, cfg, "--epochs", "epochs", o.tc.epochs);
  merge_opt(cmd, cfg, "--batch-size", "batch_size", o.tc.batch_size);
  merge_opt(cmd, cfg, "--lr", "lr", o.tc.lr);
  merge_opt(cmd, cfg, "--lr-fine", "lr_fine", o.tc.lr_fine);
  merge_opt(cmd, cfg, "--l2", "l2", o.tc.l2);
  merge_opt(cmd, cfg, "--patience", "patience", o.tc.patience);
  merge_opt(cmd, cfg, "--val-fraction", "val_fraction", o.val_fraction);
  merge_opt(cmd, cfg, "--lags", "lags", o.lags);
  merge_opt(cmd, cfg, "--augment", "augment", o.augment);
  merge_opt(cmd, cfg, "--offsets", "offsets", o.offsets);
  if (o.corpus.empty()) throw UsageError("train: --corpus is required");

  const NetworkSpec spec = spec_for_arch(o.arch, o.lags);
  const fs::path out_dir = prepare_out_dir(o.common);
  Manifest man("train", out_dir);

  const Corpus c = read_corpus_csv(fs::path(o.corpus));
  auto [train_part, val_part] = split_contiguous(c, o.val_fraction, o.lags);
  if (o.augment) {
    const std::vector<int> offs = parse_offsets(o.offsets);
    train_part = transpose_augment(train_part, offs);
    std::printf("augmented training part: %zu events in %zu pieces\n", train_part.size(),
                train_part.piece_count());
  }
  const RobustScaler scaler = fit_scaler(train_part.events);
  const WindowedDataset dtrain = build_windows(train_part, scaler, o.lags);
  const WindowedDataset dval = build_windows(val_part, scaler, o.lags);

  o.tc.seed = o.common.seed;
  const TrainResult res = train_model(spec, dtrain, dval, o.tc);

  const EvalReport model_scaled = evaluate(spec, res.params, dval);
  const EvalReport naive_scaled = evaluate_naive(dval);
  const EvalReport model_raw = unscale_report(model_scaled, scaler);
  const EvalReport naive_raw = unscale_report(naive_scaled, scaler);

  std::printf("%-8s %8s %14s %12s %12s %12s\n", "model", "params", "rmse overall", "rmse ioi",
              "rmse p1", "val loss");
  std::printf("%-8s %8zu %14.4f %12.4f %12.4f %12.6f\n", o.arch.c_str(), param_count(spec),
              model_raw.rmse, model_raw.rmse_per_component[12], model_raw.rmse_per_component[0],
              res.best_val_loss);
  std::printf("%-8s %8d %14.4f %12.4f %12.4f %12.6f\n", "naive", 0, naive_raw.rmse,
              naive_raw.rmse_per_component[12], naive_raw.rmse_per_component[0], naive_scaled.mse);
  std::printf("best epoch %d of %d  (windows: train %zu, val %zu)\n", res.best_epoch,
              res.stopped_epoch, dtrain.size(), dval.size());

  const ModelFile mf{o.arch, spec, scaler, res.params, res.log, o.common.seed, c.name};
  const fs::path model_path = out_dir / "model.json";
  save_model(mf, model_path);
  std::printf("wrote %s\n", model_path.string().c_str());

  man.config() = json{{"corpus", o.corpus},
                      {"arch", o.arch},
                      {"epochs", o.tc.epochs},
                      {"batch_size", o.tc.batch_size},
                      {"lr", o.tc.lr},
                      {"lr_fine", o.tc.lr_fine},
                      {"l2", o.tc.l2},
                      {"patience", o.tc.patience},
                      {"val_fraction", o.val_fraction},
                      {"lags", o.lags},
                      {"augment", o.augment},
                      {"offsets", o.offsets},
                      {"out_dir", o.common.out_dir},
                      {"seed", o.common.seed}};
  man.add_input(o.corpus);
  man.add_output(model_path);
  man.write();
}

// --- generate ------------------------------------------------------------------

struct GenerateOpts {
  CommonOpts common;
  std::string model;
  std::string seed_piece;
  int n = 1000;
  int interval = 10;
  double probe_eps = 1e-6;
  int probe_steps = 100;
};

bool has_midi_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".mid" || ext == ".midi" || ext == ".smf";
}

Corpus load_seed_piece(const fs::path& p) {
  if (!has_midi_extension(p)) return read_corpus_csv(p);
  const auto bytes = read_binary_file(p);
  const SmfReadResult smf = read_smf(bytes);
  for (const std::string& w : smf.warnings) std::cerr << p.string() << ": warning: " << w << "\n";
  GroupingResult g = group_notes_to_events(smf.notes);
  if (g.events.empty()) throw DataError("seed piece " + p.string() + ": no notes");
  Corpus c;
  c.name = p.stem().string();
  c.events = std::move(g.events);
  c.check();
  return c;
}

/// Scaled window over the first `lags` events of the first piece long
/// enough to hold one — the deterministic starting point for the probe.
std::vector<std::array<double, kEventDims>> first_window(const Corpus& c, const RobustScaler& sc,
                                                         int lags) {
  for (std::size_t p = 0; p < c.piece_count(); ++p) {
    const auto [first, last] = c.piece_range(p);
    if (last - first < static_cast<std::size_t>(lags)) continue;
    std::vector<std::array<double, kEventDims>> w;
    w.reserve(static_cast<std::size_t>(lags));
    for (std::size_t i = first; i < first + static_cast<std::size_t>(lags); ++i) {
      w.push_back(sc.apply(event_to_vector(c.events[i])));
    }
    return w;
  }
  throw DataError("seed piece is shorter than one window of " + std::to_string(lags) + " events");
}

void run_generate(const CLI::App& cmd, GenerateOpts& o) {
  const json cfg = merge_common(cmd, o.common);
  merge_opt(cmd, cfg, "--model", "model", o.model);
  merge_opt(cmd, cfg, "--seed-piece", "seed_piece", o.seed_piece);
  merge_opt(cmd, cfg, "--n", "n_predictions", o.n);
  merge_opt(cmd, cfg, "--interval", "reseed_interval", o.interval);
  merge_opt(cmd, cfg, "--probe-eps", "probe_eps", o.probe_eps);
  merge_opt(cmd, cfg, "--probe-steps", "probe_steps", o.probe_steps);
  if (o.model.empty()) throw UsageError("generate: --model is required");
  if (o.seed_piece.empty()) throw UsageError("generate: --seed-piece is required");

  const fs::path out_dir = prepare_out_dir(o.common);
  Manifest man("generate", out_dir);

  const ModelFile mf = load_model(fs::path(o.model));
  const Corpus seedc = load_seed_piece(fs::path(o.seed_piece));

  GenConfig gc;
  gc.n_predictions = o.n;
  gc.reseed_interval = o.interval;
  gc.seed = o.common.seed;
  const GenReport rep = generate(mf.spec, mf.params, mf.scaler, seedc, gc);

  std::printf("generated %zu events from %d predictions (%zu rejected)\n", rep.accepted(), o.n,
              rep.rejected());
  for (const auto& [reason, count] : rep.rejected_by_reason) {
    std::printf("  rejected %-10s %d\n", reason.c_str(), count);
  }
  std::printf("window (re)seeded %zu times at interval %d\n", rep.seed_starts.size(), o.interval);

  const fs::path csv = out_dir / "generated.csv";
  const fs::path mid = out_dir / "generated.mid";
  if (rep.events.empty()) {
    std::cerr << "note: every prediction was rejected; no event output written\n";
  } else {
    Corpus g;
    g.name = "generated";
    g.events = rep.events;
    g.check();
    write_corpus_csv(g, csv);
    write_binary_file(mid, write_smf(g.events));
    man.add_output(csv);
    man.add_output(mid);
    std::printf("wrote %s and %s\n", csv.string().c_str(), mid.string().c_str());
  }

  const auto start = first_window(seedc, mf.scaler, mf.spec.lags);
  const ConvergenceResult probe =
      convergence_probe(mf.spec, mf.params, start, o.probe_eps, o.probe_steps);
  if (probe.converged) {
    std::printf("convergence probe: fixpoint at step %d (eps %g)\n", probe.fixpoint_step,
                o.probe_eps);
  } else {
    std::printf("convergence probe: no fixpoint within %d steps (last delta %g)\n", o.probe_steps,
                probe.deltas.empty() ? 0.0 : probe.deltas.back());
  }

  json records = json::array();
  for (const GenRecord& r : rep.records) {
    records.push_back(
        json{{"step", r.step}, {"raw", r.raw}, {"accepted", r.accepted}, {"reason", r.reason}});
  }
  const json report{{"seed", gc.seed},
                    {"n_predictions", gc.n_predictions},
                    {"reseed_interval", gc.reseed_interval},
                    {"accepted", rep.accepted()},
                    {"rejected", rep.rejected()},
                    {"rejected_by_reason", rep.rejected_by_reason},
                    {"reseed_steps", rep.reseed_steps},
                    {"seed_starts", rep.seed_starts},
                    {"convergence",
                     json{{"converged", probe.converged},
                          {"fixpoint_step", probe.fixpoint_step},
                          {"eps", o.probe_eps},
                          {"max_steps", o.probe_steps},
                          {"deltas", probe.deltas}}},
                    {"records", records}};
  const fs::path report_path = out_dir / "generation-report.json";
  write_json_file(report, report_path);
  std::printf("wrote %s\n", report_path.string().c_str());

  man.config() = json{{"model", o.model},
                      {"seed_piece", o.seed_piece},
                      {"n_predictions", o.n},
                      {"reseed_interval", o.interval},
                      {"probe_eps", o.probe_eps},
                      {"probe_steps", o.probe_steps},
                      {"out_dir", o.common.out_dir},
                      {"seed", o.common.seed}};
  man.add_input(o.model);
  man.add_input(o.seed_piece);
  man.add_output(report_path);
  man.write();
}

// --- stats ---------------------------------------------------------------------

struct StatsOpts {
  CommonOpts common;
  std::string which;
  std::vector<std::string> inputs;
  int replicates = 0;  // 0 = table lookup for ad; cramer then uses its default
  std::string midrank = "pitch,velocity";
  std::string kernel = "euclidean";
  std::size_t subset_size = 3000;
  int bins = 50;
  double truncate_duration = 200.0;
  double truncate_ioi = 100.0;
  int max_lag = 15;
};

CramerKernel kernel_from_name(const std::string& name) {
  if (name == "euclidean") return CramerKernel::euclidean;
  if (name == "cramer") return CramerKernel::cramer;
  if (name == "bahr") return CramerKernel::bahr;
  if (name == "log") return CramerKernel::logk;
  throw UsageError("unknown kernel '" + name + "' (expected euclidean, cramer, bahr or log)");
}

std::set<std::string> parse_feature_set(const std::string& s) {
  std::set<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    if (std::find(kFeatureNames.begin(), kFeatureNames.end(), tok) == kFeatureNames.end()) {
      throw UsageError("unknown feature '" + tok + "' (expected pitch, velocity, duration or ioi)");
    }
    out.insert(tok);
  }
  return out;
}

/// Comparison labels for two or three inputs, given in the order
/// corpus, generated[, seed]: indices into the loaded corpora.
std::vector<std::tuple<std::string, std::size_t, std::size_t>> comparisons_for(
    std::size_t n_inputs) {
  if (n_inputs == 2) return {{"corpus-vs-generated", 0, 1}};
  return {{"corpus-vs-generated", 0, 1}, {"seed-vs-generated", 2, 1}};
}

void run_stats(const CLI::App& cmd, StatsOpts& o) {
  const json cfg = merge_common(cmd, o.common);
  merge_opt(cmd, cfg, "--which", "which", o.which);
  merge_opt(cmd, cfg, "inputs", "inputs", o.inputs);
  merge_opt(cmd, cfg, "--replicates", "replicates", o.replicates);
  merge_opt(cmd, cfg, "--midrank", "midrank", o.midrank);
  merge_opt(cmd, cfg, "--kernel", "kernel", o.kernel);
  merge_opt(cmd, cfg, "--subset-size", "subset_size", o.subset_size);
  merge_opt(cmd, cfg, "--bins", "bins", o.bins);
  merge_opt(cmd, cfg, "--truncate-duration", "truncate_duration", o.truncate_duration);
  merge_opt(cmd, cfg, "--truncate-ioi", "truncate_ioi", o.truncate_ioi);
  merge_opt(cmd, cfg, "--max-lag", "max_lag", o.max_lag);

  static const std::set<std::string> kWhich = {"ad",       "cramer",  "pca",
                                               "describe", "density", "arlags"};
  if (!kWhich.contains(o.which)) {
    throw UsageError("stats: --which must be one of ad, cramer, pca, describe, density, arlags");
  }
  const bool pairwise = o.which == "ad" || o.which == "cramer";
  if (pairwise && (o.inputs.size() < 2 || o.inputs.size() > 3)) {
    throw UsageError("stats --which " + o.which +
                     ": give two or three corpus files (corpus generated [seed])");
  }
  if (!pairwise && o.inputs.size() != 1) {
    throw UsageError("stats --which " + o.which + ": give exactly one corpus file");
  }

  const fs::path out_dir = prepare_out_dir(o.common);
  Manifest man("stats", out_dir);

  std::vector<Corpus> corpora;
  corpora.reserve(o.inputs.size());
  for (const std::string& p : o.inputs) corpora.push_back(read_corpus_csv(fs::path(p)));

  json out;
  out["which"] = o.which;
  std::vector<fs::path> extra_outputs;

  if (o.which == "describe") {
    print_corpus_summary(corpora[0]);
    out["describe"] = describe_json(corpora[0]);
  } else if (o.which == "pca") {
    const PcaResult p = pca_variance(event_vectors(corpora[0]));
    std::printf("pca variance shares over %zu events (%%):\n ", p.n);
    for (double v : p.pct) std::printf(" %.4f", v);
    std::printf("\n");
    out["pca"] = json{{"n", p.n},
                      {"eigenvalues", p.eigenvalues},
                      {"pct", p.pct},
                      {"components", p.components}};
  } else if (o.which == "density") {
    const auto series = note_series(corpora[0]);
    const std::array<double, 4> truncate = {120.0, 127.0, o.truncate_duration, o.truncate_ioi};
    json tables = json::object();
    for (std::size_t fi = 0; fi < kFeatureNames.size(); ++fi) {
      const DensityTable t = density_table(series[fi], o.bins, truncate[fi]);
      const fs::path csv = out_dir / (std::string("density-") + kFeatureNames[fi] + ".csv");
      std::string body = "bin_lo,bin_hi,count,density\n";
      for (int b = 0; b < t.bins; ++b) {
        detail::append_double(body, t.lo + b * t.bin_width);
        body.push_back(',');
        detail::append_double(body, b + 1 == t.bins ? t.hi : t.lo + (b + 1) * t.bin_width);
        body.push_back(',');
        body += std::to_string(t.counts[static_cast<std::size_t>(b)]);
        body.push_back(',');
        detail::append_double(body, t.density[static_cast<std::size_t>(b)]);
        body.push_back('\n');
      }
      std::ofstream f(csv, std::ios::binary);
      if (!f) throw DataError("cannot open for writing: " + csv.string());
      f << body;
      extra_outputs.push_back(csv);
      std::printf("%-9s %d bins over [%g, %g], n %zu, overflow %zu\n", kFeatureNames[fi], t.bins,
                  t.lo, t.hi, t.n_total, t.overflow);
      tables[kFeatureNames[fi]] = json{{"bins", t.bins},         {"lo", t.lo},
                                       {"hi", t.hi},             {"bin_width", t.bin_width},
                                       {"n_total", t.n_total},   {"overflow", t.overflow},
                                       {"counts", t.counts},     {"density", t.density}};
    }
    out["density"] = tables;
  } else if (o.which == "arlags") {
    const auto series = event_series(corpora[0]);
    json reports = json::object();
    for (std::size_t fi = 0; fi < kFeatureNames.size(); ++fi) {
      const ArLagReport r = ar_lag_analysis(series[fi], o.max_lag);
      std::printf("%-9s suggested order %d (n %zu, sigma2 %.6g)\n", kFeatureNames[fi],
                  r.suggested_order, r.n_obs, r.sigma2);
      reports[kFeatureNames[fi]] = json{{"max_lag", r.max_lag},
                                        {"n_obs", r.n_obs},
                                        {"sigma2", r.sigma2},
                                        {"coef", r.coef},
                                        {"t_stat", r.t_stat},
                                        {"suggested_order", r.suggested_order}};
    }
    out["arlags"] = reports;
  } else if (o.which == "ad") {
    const std::set<std::string> midrank_set = parse_feature_set(o.midrank);
    const auto comps = comparisons_for(o.inputs.size());
    std::vector<std::array<std::vector<double>, 4>> feats;
    feats.reserve(corpora.size());
    for (const Corpus& c : corpora) feats.push_back(note_series(c));
    std::printf("%-20s %-9s %7s %7s %10s %10s %12s  %s\n", "comparison", "feature", "n1", "n2",
                "A2", "T", "p", "method");
    json cells = json::array();
    std::uint64_t cell = 0;
    for (const auto& [label, ia, ib] : comps) {
      for (std::size_t fi = 0; fi < kFeatureNames.size(); ++fi) {
        AdConfig acfg;
        acfg.midrank = midrank_set.contains(kFeatureNames[fi]);
        if (o.replicates > 0) {
          acfg.method = PValueMethod::permutation;
          acfg.replicates = o.replicates;
        }
        acfg.seed = splitmix64(o.common.seed + 1000003ULL * cell++);
        const std::vector<std::vector<double>> samples = {feats[ia][fi], feats[ib][fi]};
        const AdResult r = ad_ksample(samples, acfg);
        const char* method = r.method == PValueMethod::permutation ? "permutation" : "asymptotic";
        std::printf("%-20s %-9s %7zu %7zu %10.4f %10.4f %12.6g  %s%s\n", label.c_str(),
                    kFeatureNames[fi], samples[0].size(), samples[1].size(), r.a2, r.t, r.p,
                    r.midrank ? "midrank " : "", method);
        cells.push_back(json{{"comparison", label},
                             {"feature", kFeatureNames[fi]},
                             {"n1", samples[0].size()},
                             {"n2", samples[1].size()},
                             {"a2", r.a2},
                             {"sigma", r.sigma},
                             {"t", r.t},
                             {"p", r.p},
                             {"midrank", r.midrank},
                             {"method", method},
                             {"replicates", acfg.method == PValueMethod::permutation
                                                ? json(acfg.replicates)
                                                : json()},
                             {"seed", acfg.seed}});
      }
    }
    out["ad"] = cells;
  } else {  // cramer
    const CramerKernel kernel = kernel_from_name(o.kernel);
    const auto comps = comparisons_for(o.inputs.size());
    std::vector<std::vector<EventVec>> vecs;
    vecs.reserve(corpora.size());
    for (const Corpus& c : corpora) vecs.push_back(event_vectors(c));
    json cells = json::array();
    std::uint64_t cell = 0;
    for (const auto& [label, ia, ib] : comps) {
      CramerConfig ccfg;
      ccfg.kernel = kernel;
      if (o.replicates >= 99) ccfg.replicates = o.replicates;
      ccfg.seed = splitmix64(o.common.seed + 1000003ULL * cell++);
      ccfg.subset_size = o.subset_size;
      const CramerResult r = cramer_test(vecs[ia], vecs[ib], ccfg);
      std::printf("%-20s statistic %.6g  p %.6g  (kernel %s, m %zu, n %zu, blocks %zu)\n",
                  label.c_str(), r.headline().statistic, r.headline().p, kernel_name(r.kernel),
                  r.headline().m, r.headline().n, r.blocks.size());
      json blocks = json::array();
      for (const CramerBlock& b : r.blocks) {
        blocks.push_back(json{{"m", b.m}, {"n", b.n}, {"statistic", b.statistic}, {"p", b.p}});
      }
      cells.push_back(json{{"comparison", label},
                           {"kernel", kernel_name(r.kernel)},
                           {"replicates", r.replicates},
                           {"subset_size", ccfg.subset_size},
                           {"seed", ccfg.seed},
                           {"blocks", blocks}});
    }
    out["cramer"] = cells;
  }

  const fs::path report_path = out_dir / ("stats-" + o.which + ".json");
  write_json_file(out, report_path);
  std::printf("wrote %s\n", report_path.string().c_str());

  man.config() = json{{"which", o.which},
                      {"inputs", o.inputs},
                      {"replicates", o.replicates},
                      {"midrank", o.midrank},
                      {"kernel", o.kernel},
                      {"subset_size", o.subset_size},
                      {"bins", o.bins},
                      {"truncate_duration", o.truncate_duration},
                      {"truncate_ioi", o.truncate_ioi},
                      {"max_lag", o.max_lag},
                      {"out_dir", o.common.out_dir},
                      {"seed", o.common.seed}};
  for (const std::string& p : o.inputs) man.add_input(p);
  man.add_output(report_path);
  for (const fs::path& p : extra_outputs) man.add_output(p);
  man.write();
}

// --- render --------------------------------------------------------------------

struct RenderOpts {
  CommonOpts common;
  std::string corpus;
};

void run_render(const CLI::App& cmd, RenderOpts& o) {
  const json cfg = merge_common(cmd, o.common);
  merge_opt(cmd, cfg, "--corpus", "corpus", o.corpus);
  if (o.corpus.empty()) throw UsageError("render: --corpus is required");

  const fs::path out_dir = prepare_out_dir(o.common);
  Manifest man("render", out_dir);

  const Corpus c = read_corpus_csv(fs::path(o.corpus));
  for (std::size_t p = 0; p < c.piece_count(); ++p) {
    const auto [first, last] = c.piece_range(p);
    const auto bytes = write_smf(std::span(c.events).subspan(first, last - first));
    char name[32];
    std::snprintf(name, sizeof name, "piece-%03zu.mid", p);
    const fs::path mid = out_dir / name;
    write_binary_file(mid, bytes);
    man.add_output(mid);
  }
  std::printf("wrote %zu midi file(s) to %s\n", c.piece_count(), out_dir.string().c_str());

  man.config() =
      json{{"corpus", o.corpus}, {"out_dir", o.common.out_dir}, {"seed", o.common.seed}};
  man.add_input(o.corpus);
  man.write();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-based keyboard improvisation pipeline: corpora, models, generation, tests"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  IngestOpts ingest;
  CLI::App* cmd_ingest = app.add_subcommand("ingest", "read midi files into one corpus csv");
  cmd_ingest->add_option("files", ingest.files, "standard midi files, one piece each");
  cmd_ingest->add_option("--threshold", ingest.threshold,
                         "chord grouping threshold in ms (default 35)");
  cmd_ingest->add_option("--name", ingest.name, "corpus name");
  add_common(cmd_ingest, ingest.common);
  cmd_ingest->callback([&] { run_ingest(*cmd_ingest, ingest); });

  SynthOpts synth;
  CLI::App* cmd_synth = app.add_subcommand("synth", "synthesize a seeded random-walk corpus");
  cmd_synth->add_option("--pieces", synth.sc.pieces, "piece count");
  cmd_synth->add_option("--events-per-piece", synth.sc.events_per_piece, "events per piece");
  cmd_synth->add_option("--chord-prob", synth.sc.chord_prob, "chance an event is a chord");
  cmd_synth->add_option("--min-chord-size", synth.sc.min_chord_size, "smallest chord");
  cmd_synth->add_option("--max-chord-size", synth.sc.max_chord_size, "largest chord");
  cmd_synth->add_option("--register-low", synth.sc.register_low, "register walk floor");
  cmd_synth->add_option("--register-high", synth.sc.register_high, "register walk ceiling");
  cmd_synth->add_option("--register-step-sd", synth.sc.register_step_sd, "register walk step sd");
  cmd_synth->add_option("--chord-spread", synth.sc.chord_spread, "chord pitch spread");
  cmd_synth->add_option("--dur-log-median", synth.sc.dur_log_median, "log duration median");
  cmd_synth->add_option("--dur-log-sd", synth.sc.dur_log_sd, "log duration sd");
  cmd_synth->add_option("--ioi-log-median", synth.sc.ioi_log_median, "log ioi median");
  cmd_synth->add_option("--ioi-log-sd", synth.sc.ioi_log_sd, "log ioi sd");
  cmd_synth->add_option("--piece-tempo-sd", synth.sc.piece_tempo_sd, "per-piece tempo log sd");
  cmd_synth->add_option("--velocity-low", synth.sc.velocity_low, "velocity walk floor");
  cmd_synth->add_option("--velocity-high", synth.sc.velocity_high, "velocity walk ceiling");
  cmd_synth->add_option("--velocity-walk-sd", synth.sc.velocity_walk_sd, "velocity walk step sd");
  cmd_synth->add_option("--velocity-noise-sd", synth.sc.velocity_noise_sd, "velocity jitter sd");
  cmd_synth->add_option("--name", synth.name, "corpus name (default synth-<seed>)");
  add_common(cmd_synth, synth.common);
  cmd_synth->callback([&] { run_synth(*cmd_synth, synth); });

  TrainOpts train;
  CLI::App* cmd_train = app.add_subcommand("train", "fit a network and report rmse vs naive");
  cmd_train->add_option("--corpus", train.corpus, "training corpus csv");
  cmd_train->add_option("--arch", train.arch, "cnn or cnn-rnn");
  cmd_train->add_option("--epochs", train.tc.epochs, "epoch cap");
  cmd_train->add_option("--batch-size", train.tc.batch_size, "minibatch size");
  cmd_train->add_option("--lr", train.tc.lr, "first-phase learning rate");
  cmd_train->add_option("--lr-fine", train.tc.lr_fine, "refinement learning rate");
  cmd_train->add_option("--l2", train.tc.l2, "l2 penalty on kernels");
  cmd_train->add_option("--patience", train.tc.patience, "stale epochs before switching/stopping");
  cmd_train->add_option("--val-fraction", train.val_fraction, "tail share held out (default 0.1)");
  cmd_train->add_option("--lags", train.lags, "window length");
  cmd_train->add_flag("--augment", train.augment, "add transposed copies of the training part");
  cmd_train->add_option("--offsets", train.offsets,
                        "semitone offsets for --augment (originals always kept)");
  add_common(cmd_train, train.common);
  cmd_train->callback([&] { run_train(*cmd_train, train); });

  GenerateOpts generate;
  CLI::App* cmd_generate = app.add_subcommand("generate", "free-run a model from a seed piece");
  cmd_generate->add_option("--model", generate.model, "model file from train");
  cmd_generate->add_option("--seed-piece", generate.seed_piece, "seed corpus csv or midi file");
  cmd_generate->add_option("--n", generate.n, "predictions to make");
  cmd_generate->add_option("--interval", generate.interval, "reseed every this many predictions");
  cmd_generate->add_option("--probe-eps", generate.probe_eps, "convergence probe threshold");
  cmd_generate->add_option("--probe-steps", generate.probe_steps, "convergence probe step cap");
  add_common(cmd_generate, generate.common);
  cmd_generate->callback([&] { run_generate(*cmd_generate, generate); });

  StatsOpts stats;
  CLI::App* cmd_stats = app.add_subcommand("stats", "distribution tests and summaries");
  cmd_stats->add_option("--which", stats.which, "ad, cramer, pca, describe, density or arlags");
  cmd_stats->add_option("inputs", stats.inputs,
                        "corpus csv files; ad/cramer take corpus generated [seed]");
  cmd_stats->add_option("--replicates", stats.replicates,
                        "permutation replicates (ad default 0 = table lookup; cramer min 99)");
  cmd_stats->add_option("--midrank", stats.midrank,
                        "features compared with the tie-aware rank statistic");
  cmd_stats->add_option("--kernel", stats.kernel, "cramer kernel: euclidean, cramer, bahr, log");
  cmd_stats->add_option("--subset-size", stats.subset_size, "cramer block size");
  cmd_stats->add_option("--bins", stats.bins, "density histogram bins");
  cmd_stats->add_option("--truncate-duration", stats.truncate_duration,
                        "density duration cut in ms (default 200)");
  cmd_stats->add_option("--truncate-ioi", stats.truncate_ioi,
                        "density ioi cut in ms (default 100)");
  cmd_stats->add_option("--max-lag", stats.max_lag, "autoregression order to probe");
  add_common(cmd_stats, stats.common);
  cmd_stats->callback([&] { run_stats(*cmd_stats, stats); });

  RenderOpts render;
  CLI::App* cmd_render = app.add_subcommand("render", "write one midi file per corpus piece");
  cmd_render->add_option("--corpus", render.corpus, "corpus csv");
  add_common(cmd_render, render.common);
  cmd_render->callback([&] { run_render(*cmd_render, render); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
