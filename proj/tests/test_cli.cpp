// End-to-end checks of the command-line driver: every subcommand is run as
// a child process against small corpora, and the artifacts it writes are
// inspected. IMPROV_CLI_PATH is injected by the build.

#include <improv/corpus.hpp>
#include <improv/event.hpp>
#include <improv/model.hpp>
#include <improv/nn.hpp>
#include <improv/scaling.hpp>

#include <catch2/catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace improv;

namespace {

const fs::path& scratch_root() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "improv-cli-tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = scratch_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct CmdResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

CmdResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "_stdout.txt";
  const fs::path err = dir / "_stderr.txt";
  const std::string cmd = std::string(IMPROV_CLI_PATH) + " " + args + " >" + out.string() +
                          " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

json load_json(const fs::path& p) { return json::parse(slurp(p)); }

bool same_bytes(const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b); }

/// One-piece corpus with iois comfortably above the grouping threshold, so
/// midi round trips are exact.
Corpus slow_corpus(int n) {
  Corpus c;
  c.name = "slow";
  for (int i = 0; i < n; ++i) {
    const double ioi = 40.0 + 7.0 * (i % 20);
    if (i % 4 == 0) {
      c.events.push_back(make_chord_event({48 + i % 24, 55 + i % 24, 62 + i % 12}, 40 + i % 60,
                                          120.0 + i % 50, ioi));
    } else {
      c.events.push_back(make_note_event(40 + i % 40, 30 + i % 70, 90.0 + i % 80, ioi));
    }
  }
  c.events.back().ioi_ms = c.events.back().duration_ms;
  c.check();
  return c;
}

/// Model file whose network ignores its input and always emits `target`
/// (flatten feeding a dense layer with a zero kernel and a fixed bias).
void write_constant_model(const fs::path& path, const std::array<double, kEventDims>& target,
                          int lags = 10) {
  NetworkSpec spec;
  spec.lags = lags;
  spec.dims = kEventDims;
  spec.layers = {flatten_layer(), dense_layer(kEventDims)};
  ParameterStore ps = init_params(spec, 1);
  std::fill(ps.values.begin(), ps.values.end(), 0.0);
  std::copy(target.begin(), target.end(),
            ps.values.end() - static_cast<std::ptrdiff_t>(kEventDims));
  ModelFile mf;
  mf.arch = "stub";
  mf.spec = spec;
  for (int d = 0; d < kEventDims; ++d) {
    mf.scaler.center[static_cast<std::size_t>(d)] = 0.0;
    mf.scaler.spread[static_cast<std::size_t>(d)] = 1.0;
  }
  mf.params = std::move(ps);
  mf.log = {};
  mf.seed = 1;
  mf.corpus_name = "stub";
  save_model(mf, path);
}

}  // namespace

TEST_CASE("synth writes a corpus, summary and manifest deterministically") {
  const fs::path dir = fresh_dir("synth");
  const std::string common = "synth --pieces 2 --events-per-piece 60 --seed 5 ";
  const CmdResult a = run_cli(common + "--out-dir " + (dir / "a").string(), dir);
  INFO(a.err);
  REQUIRE(a.exit_code == 0);
  CHECK(a.out.find("pieces 2") != std::string::npos);
  CHECK(fs::exists(dir / "a" / "corpus.csv"));
  CHECK(fs::exists(dir / "a" / "synth-manifest.json"));

  const CmdResult b = run_cli(common + "--out-dir " + (dir / "b").string(), dir);
  REQUIRE(b.exit_code == 0);
  CHECK(same_bytes(dir / "a" / "corpus.csv", dir / "b" / "corpus.csv"));

  const CmdResult c = run_cli("synth --pieces 2 --events-per-piece 60 --seed 6 --out-dir " +
                                  (dir / "c").string(),
                              dir);
  REQUIRE(c.exit_code == 0);
  CHECK_FALSE(same_bytes(dir / "a" / "corpus.csv", dir / "c" / "corpus.csv"));

  const json man = load_json(dir / "a" / "synth-manifest.json");
  CHECK(man.at("command") == "synth");
  CHECK(man.at("config").at("pieces") == 2);
  CHECK(man.at("config").at("seed") == 5);
  CHECK(man.at("version").is_string());
  CHECK(man.at("wall_time_seconds").is_number());
}

TEST_CASE("train prints the expected parameter counts and rmse table") {
  const fs::path dir = fresh_dir("train");
  REQUIRE(run_cli("synth --pieces 2 --events-per-piece 90 --seed 9 --out-dir " +
                      (dir / "data").string(),
                  dir)
              .exit_code == 0);
  const std::string corpus = (dir / "data" / "corpus.csv").string();

  SECTION("cnn") {
    const CmdResult r = run_cli("train --corpus " + corpus +
                                    " --arch cnn --epochs 2 --seed 3 --out-dir " +
                                    (dir / "cnn").string(),
                                dir);
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("7565") != std::string::npos);
    CHECK(r.out.find("naive") != std::string::npos);
    CHECK(r.out.find("rmse overall") != std::string::npos);
    CHECK(fs::exists(dir / "cnn" / "model.json"));
  }

  SECTION("cnn-rnn") {
    const CmdResult r = run_cli("train --corpus " + corpus +
                                    " --arch cnn-rnn --epochs 1 --seed 3 --out-dir " +
                                    (dir / "rnn").string(),
                                dir);
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("10445") != std::string::npos);
  }

  SECTION("unknown arch is a usage error") {
    const CmdResult r = run_cli("train --corpus " + corpus + " --arch mlp --out-dir " +
                                    (dir / "x").string(),
                                dir);
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("mlp") != std::string::npos);
  }
}

TEST_CASE("train with a fixed seed rewrites the identical model file") {
  const fs::path dir = fresh_dir("train-determinism");
  REQUIRE(run_cli("synth --pieces 2 --events-per-piece 70 --seed 2 --out-dir " +
                      (dir / "data").string(),
                  dir)
              .exit_code == 0);
  const std::string corpus = (dir / "data" / "corpus.csv").string();
  const std::string args = "train --corpus " + corpus + " --epochs 3 --seed 21 --out-dir ";
  REQUIRE(run_cli(args + (dir / "a").string(), dir).exit_code == 0);
  REQUIRE(run_cli(args + (dir / "b").string(), dir).exit_code == 0);
  CHECK(same_bytes(dir / "a" / "model.json", dir / "b" / "model.json"));

  SECTION("replaying the manifest reproduces the model bit for bit") {
    const CmdResult r = run_cli("train --config " + (dir / "a" / "train-manifest.json").string() +
                                    " --out-dir " + (dir / "replay").string(),
                                dir);
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    CHECK(same_bytes(dir / "a" / "model.json", dir / "replay" / "model.json"));
  }
}

TEST_CASE("config file values apply beneath explicit flags") {
  const fs::path dir = fresh_dir("precedence");
  REQUIRE(run_cli("synth --pieces 2 --events-per-piece 70 --seed 4 --out-dir " +
                      (dir / "data").string(),
                  dir)
              .exit_code == 0);
  {
    std::ofstream f(dir / "cfg.json");
    f << R"({"corpus": ")" << (dir / "data" / "corpus.csv").string()
      << R"(", "epochs": 3, "seed": 8})";
  }

  SECTION("file fills in what flags leave unset") {
    const CmdResult r = run_cli("train --config " + (dir / "cfg.json").string() + " --out-dir " +
                                    (dir / "a").string(),
                                dir);
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    const json man = load_json(dir / "a" / "train-manifest.json");
    CHECK(man.at("config").at("epochs") == 3);
    CHECK(man.at("config").at("seed") == 8);
    const json model = load_json(dir / "a" / "model.json");
    CHECK(model.at("training_log").size() == 3);
  }

  SECTION("an explicit flag beats the file") {
    const CmdResult r = run_cli("train --config " + (dir / "cfg.json").string() +
                                    " --epochs 2 --out-dir " + (dir / "b").string(),
                                dir);
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    const json man = load_json(dir / "b" / "train-manifest.json");
    CHECK(man.at("config").at("epochs") == 2);
    CHECK(load_json(dir / "b" / "model.json").at("training_log").size() == 2);
  }
}

TEST_CASE("generate emits events, a report and the convergence summary") {
  const fs::path dir = fresh_dir("generate");
  const Corpus seed_piece = slow_corpus(40);
  write_corpus_csv(seed_piece, dir / "seed.csv");
  std::array<double, kEventDims> target{};
  target.fill(-1.0);
  target[0] = 64.0;  // one sounded pitch, the rest stay silent
  target[10] = 80.0;
  target[11] = 250.0;
  target[12] = 180.0;
  write_constant_model(dir / "stub.json", target);

  const std::string base = "generate --model " + (dir / "stub.json").string() + " --seed-piece " +
                           (dir / "seed.csv").string();
  const CmdResult r = run_cli(base + " --n 25 --interval 10 --seed 6 --out-dir " +
                                  (dir / "a").string(),
                              dir);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("generated 25 events") != std::string::npos);
  CHECK(r.out.find("fixpoint at step 2") != std::string::npos);

  const json rep = load_json(dir / "a" / "generation-report.json");
  CHECK(rep.at("records").size() == 25);
  CHECK(rep.at("accepted") == 25);
  CHECK(rep.at("reseed_steps") == json::array({10, 20}));
  CHECK(rep.at("convergence").at("converged") == true);
  CHECK(rep.at("convergence").at("fixpoint_step") == 2);

  const Corpus gen = read_corpus_csv(dir / "a" / "generated.csv");
  REQUIRE(gen.events.size() == 25);
  CHECK(gen.events.front().pitches[0] == 64);
  CHECK(gen.events.front().velocity == 80);
  CHECK(fs::exists(dir / "a" / "generated.mid"));

  SECTION("same seed replays bit-identically, another seed differs") {
    REQUIRE(run_cli(base + " --n 25 --interval 10 --seed 6 --out-dir " + (dir / "b").string(),
                    dir)
                .exit_code == 0);
    CHECK(same_bytes(dir / "a" / "generation-report.json",
                     dir / "b" / "generation-report.json"));
    CHECK(same_bytes(dir / "a" / "generated.csv", dir / "b" / "generated.csv"));
  }

  SECTION("reseed interval 20 is functional") {
    const CmdResult r20 = run_cli(base + " --n 45 --interval 20 --seed 6 --out-dir " +
                                      (dir / "c").string(),
                                  dir);
    REQUIRE(r20.exit_code == 0);
    const json rep20 = load_json(dir / "c" / "generation-report.json");
    CHECK(rep20.at("reseed_steps") == json::array({20, 40}));
  }

  SECTION("a midi seed piece works too") {
    write_corpus_csv(seed_piece, dir / "render-src.csv");
    REQUIRE(run_cli("render --corpus " + (dir / "render-src.csv").string() + " --out-dir " +
                        (dir / "mid").string(),
                    dir)
                .exit_code == 0);
    const CmdResult rm = run_cli("generate --model " + (dir / "stub.json").string() +
                                     " --seed-piece " + (dir / "mid" / "piece-000.mid").string() +
                                     " --n 12 --interval 10 --seed 6 --out-dir " +
                                     (dir / "d").string(),
                                 dir);
    INFO(rm.err);
    REQUIRE(rm.exit_code == 0);
    CHECK(load_json(dir / "d" / "generation-report.json").at("accepted") == 12);
  }

  SECTION("a seed piece below one window is refused") {
    write_corpus_csv(slow_corpus(9), dir / "short.csv");
    const CmdResult rs = run_cli("generate --model " + (dir / "stub.json").string() +
                                     " --seed-piece " + (dir / "short.csv").string() +
                                     " --out-dir " + (dir / "e").string(),
                                 dir);
    CHECK(rs.exit_code == 2);
  }
}

TEST_CASE("stats produces the two-comparison grid and per-feature reports") {
  const fs::path dir = fresh_dir("stats");
  REQUIRE(run_cli("synth --pieces 2 --events-per-piece 100 --seed 31 --out-dir " +
                      (dir / "c1").string(),
                  dir)
              .exit_code == 0);
  REQUIRE(run_cli("synth --pieces 2 --events-per-piece 80 --seed 32 --out-dir " +
                      (dir / "c2").string(),
                  dir)
              .exit_code == 0);
  REQUIRE(run_cli("synth --pieces 1 --events-per-piece 60 --seed 33 --out-dir " +
                      (dir / "c3").string(),
                  dir)
              .exit_code == 0);
  const std::string a = (dir / "c1" / "corpus.csv").string();
  const std::string b = (dir / "c2" / "corpus.csv").string();
  const std::string c = (dir / "c3" / "corpus.csv").string();

  SECTION("ad grid has 8 cells for three inputs") {
    const CmdResult r = run_cli("stats --which ad " + a + " " + b + " " + c + " --out-dir " +
                                    (dir / "ad").string(),
                                dir);
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    const json rep = load_json(dir / "ad" / "stats-ad.json");
    REQUIRE(rep.at("ad").size() == 8);
    CHECK(rep.at("ad")[0].at("comparison") == "corpus-vs-generated");
    CHECK(rep.at("ad")[0].at("feature") == "pitch");
    CHECK(rep.at("ad")[0].at("midrank") == true);
    CHECK(rep.at("ad")[2].at("feature") == "duration");
    CHECK(rep.at("ad")[2].at("midrank") == false);
    CHECK(rep.at("ad")[4].at("comparison") == "seed-vs-generated");
  }

  SECTION("ad with two inputs yields 4 cells and honours --replicates") {
    const CmdResult r = run_cli("stats --which ad " + a + " " + b +
                                    " --replicates 99 --seed 2 --out-dir " +
                                    (dir / "ad2").string(),
                                dir);
    REQUIRE(r.exit_code == 0);
    const json rep = load_json(dir / "ad2" / "stats-ad.json");
    REQUIRE(rep.at("ad").size() == 4);
    CHECK(rep.at("ad")[0].at("method") == "permutation");
    CHECK(rep.at("ad")[0].at("replicates") == 99);
  }

  SECTION("cramer on identical files reports a zero statistic") {
    const CmdResult r = run_cli("stats --which cramer " + a + " " + a + " --out-dir " +
                                    (dir / "cr").string(),
                                dir);
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    const json rep = load_json(dir / "cr" / "stats-cramer.json");
    REQUIRE(rep.at("cramer").size() == 1);
    const double stat = rep.at("cramer")[0].at("blocks")[0].at("statistic").get<double>();
    CHECK(std::abs(stat) < 1e-6);
  }

  SECTION("density defaults truncate duration at 200 ms and ioi at 100 ms") {
    const CmdResult r = run_cli("stats --which density " + a + " --out-dir " +
                                    (dir / "dens").string(),
                                dir);
    REQUIRE(r.exit_code == 0);
    const json rep = load_json(dir / "dens" / "stats-density.json");
    CHECK(rep.at("density").at("duration").at("hi") == 200.0);
    CHECK(rep.at("density").at("ioi").at("hi") == 100.0);
    for (const char* f : {"pitch", "velocity", "duration", "ioi"}) {
      CHECK(fs::exists(dir / "dens" / (std::string("density-") + f + ".csv")));
    }
  }

  SECTION("pca shares sum to 100") {
    const CmdResult r = run_cli("stats --which pca " + a + " --out-dir " + (dir / "pca").string(),
                                dir);
    REQUIRE(r.exit_code == 0);
    const json rep = load_json(dir / "pca" / "stats-pca.json");
    double sum = 0.0;
    for (const auto& v : rep.at("pca").at("pct")) sum += v.get<double>();
    CHECK(sum == Catch::Approx(100.0).margin(1e-6));
  }

  SECTION("describe prints the event and note counts") {
    const CmdResult r = run_cli("stats --which describe " + a + " --out-dir " +
                                    (dir / "desc").string(),
                                dir);
    REQUIRE(r.exit_code == 0);
    const Corpus loaded = read_corpus_csv(dir / "c1" / "corpus.csv");
    CHECK(r.out.find("events " + std::to_string(loaded.events.size())) != std::string::npos);
  }

  SECTION("arlags reports a suggested order per feature") {
    const CmdResult r = run_cli("stats --which arlags " + a + " --max-lag 6 --out-dir " +
                                    (dir / "ar").string(),
                                dir);
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    const json rep = load_json(dir / "ar" / "stats-arlags.json");
    CHECK(rep.at("arlags").at("pitch").at("max_lag") == 6);
    CHECK(rep.at("arlags").at("ioi").contains("suggested_order"));
  }

  SECTION("a csv with missing columns names the expected header") {
    std::ofstream f(dir / "bad.csv");
    f << "p1,p2,vel\n1,2,3\n";
    f.close();
    const CmdResult r = run_cli("stats --which describe " + (dir / "bad.csv").string() +
                                    " --out-dir " + (dir / "bad").string(),
                                dir);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("p1,p2,p3") != std::string::npos);
  }
}

TEST_CASE("render and ingest round-trip a slow corpus exactly") {
  const fs::path dir = fresh_dir("roundtrip");
  Corpus c = slow_corpus(30);
  Corpus two = c;
  two.piece_bounds = {0, 15};  // two pieces, same events
  two.events[14].ioi_ms = two.events[14].duration_ms;  // piece-final convention
  write_corpus_csv(two, dir / "orig.csv");

  REQUIRE(run_cli("render --corpus " + (dir / "orig.csv").string() + " --out-dir " +
                      (dir / "mid").string(),
                  dir)
              .exit_code == 0);
  REQUIRE(fs::exists(dir / "mid" / "piece-000.mid"));
  REQUIRE(fs::exists(dir / "mid" / "piece-001.mid"));

  const CmdResult r = run_cli("ingest " + (dir / "mid" / "piece-000.mid").string() + " " +
                                  (dir / "mid" / "piece-001.mid").string() + " --out-dir " +
                                  (dir / "back").string(),
                              dir);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(r.err.find("warning") == std::string::npos);
  CHECK(same_bytes(dir / "orig.csv", dir / "back" / "corpus.csv"));
}

TEST_CASE("ingest refuses mixed valid and corrupt inputs") {
  const fs::path dir = fresh_dir("ingest-mixed");
  write_corpus_csv(slow_corpus(20), dir / "src.csv");
  REQUIRE(run_cli("render --corpus " + (dir / "src.csv").string() + " --out-dir " +
                      (dir / "mid").string(),
                  dir)
              .exit_code == 0);
  {
    std::ofstream f(dir / "broken.mid", std::ios::binary);
    f << "not a midi file";
  }
  const CmdResult r = run_cli("ingest " + (dir / "mid" / "piece-000.mid").string() + " " +
                                  (dir / "broken.mid").string() + " --out-dir " +
                                  (dir / "out").string(),
                              dir);
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("broken.mid") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out" / "corpus.csv"));
}

TEST_CASE("usage problems exit with code 1") {
  const fs::path dir = fresh_dir("usage");
  CHECK(run_cli("train", dir).exit_code == 1);
  CHECK(run_cli("stats --which nonsense foo.csv", dir).exit_code == 1);
  CHECK(run_cli("frobnicate", dir).exit_code == 1);
  CHECK(run_cli("--help", dir).exit_code == 0);
}
