// End-to-end walk through the library: synthesize a corpus, train the small
// convolutional model, generate new events from it, and compare what came
// out against what went in. Everything is seeded, so two runs print the
// same numbers.

#include <improv/corpus.hpp>
#include <improv/dataset.hpp>
#include <improv/generate.hpp>
#include <improv/model.hpp>
#include <improv/nn.hpp>
#include <improv/scaling.hpp>
#include <improv/stats.hpp>

#include <cstdio>
#include <vector>

using namespace improv;

int main() {
  // a small synthetic corpus: eight pieces of drifting chords and notes
  SynthConfig sc;
  sc.pieces = 8;
  sc.events_per_piece = 400;
  const Corpus corpus = synth_corpus(sc, 12345);
  const DescriptiveStats d = describe(corpus.events);
  std::printf("corpus %s: %zu events, %zu notes, %.2f notes/event, %.0f%% chords\n",
              corpus.name.c_str(), d.n_events, d.n_notes, d.notes_per_event,
              100.0 * d.chord_ratio);

  // scale on the training split only, window into 10-lag samples
  const auto [train_part, val_part] = split_contiguous(corpus, 0.1, 10);
  const RobustScaler scaler = fit_scaler(train_part.events);
  const WindowedDataset dtrain = build_windows(train_part, scaler, 10);
  const WindowedDataset dval = build_windows(val_part, scaler, 10);
  std::printf("windows: %zu train, %zu validation\n", dtrain.size(), dval.size());

  // a short training run is enough to beat the repeat-last baseline
  const NetworkSpec spec = make_cnn_spec();
  TrainConfig tc;
  tc.epochs = 10;
  tc.patience = 4;
  tc.seed = 7;
  const TrainResult tr = train_model(spec, dtrain, dval, tc);
  const EvalReport model_rmse = unscale_report(evaluate(spec, tr.params, dval), scaler);
  const EvalReport naive_rmse = unscale_report(evaluate_naive(dval), scaler);
  std::printf("validation rmse: model %.2f vs repeat-last %.2f (best epoch %d)\n",
              model_rmse.rmse, naive_rmse.rmse, tr.best_epoch);

  // let the model improvise, reseeding its window every ten predictions
  GenConfig gc;
  gc.n_predictions = 500;
  gc.reseed_interval = 10;
  gc.seed = 99;
  const GenReport rep = generate(spec, tr.params, scaler, corpus, gc);
  std::printf("generation: %zu accepted, %zu rejected, %zu reseeds\n", rep.accepted(),
              rep.rejected(), rep.reseed_steps.size());

  // compare generated notes against the corpus, feature by feature
  const FlatNotes from_corpus = flatten_to_notes(corpus.events);
  const FlatNotes from_model = flatten_to_notes(rep.events);
  const auto cell = [](const char* name, const std::vector<double>& a,
                       const std::vector<double>& b, bool midrank) {
    AdConfig cfg;
    cfg.midrank = midrank;
    const std::vector<std::vector<double>> samples = {a, b};
    const AdResult r = ad_ksample(samples, cfg);
    std::printf("  %-8s statistic %9.2f  p %.3g\n", name, r.a2, r.p);
  };
  std::printf("corpus vs generated, per feature:\n");
  cell("pitch", from_corpus.pitch, from_model.pitch, true);
  cell("velocity", from_corpus.velocity, from_model.velocity, true);
  cell("duration", from_corpus.duration, from_model.duration, false);
  cell("ioi", from_corpus.ioi, from_model.ioi, false);
  return 0;
}
