#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "stimpute/data_io.hpp"
#include "stimpute/fsutil.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = STIMPUTE_CLI;

struct RunResult {
  int exit_code;
  std::string out;
  std::string err;
};

RunResult run(const std::string& args) {
  const auto dir = fs::temp_directory_path() / "stimpute_cli_io";
  fs::create_directories(dir);
  const auto out_path = (dir / "out.txt").string();
  const auto err_path = (dir / "err.txt").string();
  const std::string cmd = kCli + " " + args + " > " + out_path + " 2> " + err_path;
  const int rc = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = stimpute::read_file(out_path);
  r.err = stimpute::read_file(err_path);
  return r;
}

// One shared scratch area with a small fixture and trained checkpoint.
struct CliFixture {
  CliFixture() {
    root = fs::temp_directory_path() / "stimpute_cli_fixture";
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string base = root.string();

    REQUIRE(run("synth --nodes 5 --steps 300 --seed 4 --sigma 0.3 --steps-per-day 48 --out " +
                base + "/fix").exit_code == 0);
    REQUIRE(run("train --data " + base + "/fix/speeds.csv --graph " + base +
                "/fix/graph.csv --pattern rm --window 16 --blocks 1 "
                "--diffusion-steps 2 --hidden 8 --out-dim 6 --gse-hidden 4 "
                "--lr 2e-3 --batch 2 --iters 60 --seed 7 --val-every 30 --out " +
                base + "/run").exit_code == 0);
  }

  fs::path root;
};

const CliFixture& fixture() {
  static CliFixture f;
  return f;
}

}  // namespace

TEST_CASE("help is available for every subcommand") {
  CHECK(run("--help").exit_code == 0);
  for (const std::string sub : {"synth", "mask", "train", "impute", "evaluate", "report"}) {
    const auto r = run(sub + " --help");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("--") != std::string::npos);
  }
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("").exit_code == 2);
  CHECK(run("synth --nodes 5").exit_code == 2);          // missing required
  CHECK(run("synth --bogus 1").exit_code == 2);          // unknown flag
  CHECK(run("frobnicate").exit_code == 2);               // unknown subcommand
  const auto r = run("mask --pattern xx --ratio 0.2 --seed 1 --shape 4x4 --out /tmp/m.csv");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("error: usage:") != std::string::npos);
}

TEST_CASE("config files reject unknown keys") {
  const auto& f = fixture();
  const auto cfg = f.root / "bad.cfg";
  {
    std::ofstream out(cfg);
    out << "definitely_not_a_flag = 1\n";
  }
  const auto r = run("synth --config " + cfg.string() + " --nodes 4 --steps 10 --seed 1 --out " +
                     (f.root / "cfgout").string());
  CHECK(r.exit_code == 2);
}

TEST_CASE("synthetic data generation is deterministic") {
  const auto& f = fixture();
  const std::string base = f.root.string();
  REQUIRE(run("synth --nodes 5 --steps 300 --seed 4 --sigma 0.3 --steps-per-day 48 --out " +
              base + "/fix2").exit_code == 0);
  CHECK(stimpute::read_file(base + "/fix/speeds.csv") ==
        stimpute::read_file(base + "/fix2/speeds.csv"));
  CHECK(stimpute::read_file(base + "/fix/graph.csv") ==
        stimpute::read_file(base + "/fix2/graph.csv"));
}

TEST_CASE("mask generation covers the patterns and validates the graph") {
  const auto& f = fixture();
  const std::string base = f.root.string();
  CHECK(run("mask --pattern rm --ratio 0.3 --seed 2 --shape 5x20 --out " + base +
            "/rm.csv").exit_code == 0);
  CHECK(run("mask --pattern scm --ratio 0.3 --seed 2 --shape 5x20 --graph " + base +
            "/fix/graph.csv --out " + base + "/scm.csv").exit_code == 0);

  const auto missing_graph =
      run("mask --pattern scm --ratio 0.3 --seed 2 --shape 5x20 --out " + base + "/x.csv");
  CHECK(missing_graph.exit_code == 3);
  CHECK(missing_graph.err.find("error: data:") != std::string::npos);

  const auto wrong_shape =
      run("mask --pattern scm --ratio 0.3 --seed 2 --shape 7x20 --graph " + base +
          "/fix/graph.csv --out " + base + "/y.csv");
  CHECK(wrong_shape.exit_code == 3);
  CHECK(wrong_shape.err.find("shape-mismatch") != std::string::npos);
}

TEST_CASE("training writes the run artifacts") {
  const auto& f = fixture();
  CHECK(fs::exists(f.root / "run/checkpoint.stim"));
  CHECK(fs::exists(f.root / "run/config.txt"));
  const auto loss = stimpute::read_file((f.root / "run/loss.csv").string());
  CHECK(loss.find("iteration,loss,val_rmse\n") == 0);
  CHECK(loss.find("\n60,") != std::string::npos);

  const auto cfg = stimpute::read_file((f.root / "run/config.txt").string());
  CHECK(cfg.find("window = 16") != std::string::npos);
  CHECK(cfg.find("seed = 7") != std::string::npos);
}

TEST_CASE("imputation passes observed entries through verbatim") {
  const auto& f = fixture();
  const std::string base = f.root.string();

  // The fixture has no missing entries, so output equals input.
  const auto r = run("impute --model " + base + "/run --data " + base +
                     "/fix/speeds.csv --graph " + base + "/fix/graph.csv --out " +
                     base + "/imputed.csv");
  REQUIRE(r.exit_code == 0);
  const auto in = stimpute::load_speed_matrix(base + "/fix/speeds.csv");
  const auto out = stimpute::load_speed_matrix(base + "/imputed.csv");
  CHECK(in.values == out.values);
}

TEST_CASE("imputing with a mismatched model reports shape-mismatch") {
  const auto& f = fixture();
  const std::string base = f.root.string();
  REQUIRE(run("synth --nodes 7 --steps 60 --seed 9 --sigma 0.3 --steps-per-day 48 --out " +
              base + "/other").exit_code == 0);
  const auto r = run("impute --model " + base + "/run --data " + base +
                     "/other/speeds.csv --graph " + base + "/other/graph.csv --out " +
                     base + "/z.csv");
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("error: shape-mismatch:") != std::string::npos);
}

TEST_CASE("missing input files give a data error") {
  const auto r = run("impute --model /nonexistent --data /nonexistent.csv "
                     "--graph /nonexistent2.csv --out /tmp/out.csv");
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("error: data:") != std::string::npos);
}

TEST_CASE("evaluation grid and plot emission work end to end") {
  const auto& f = fixture();
  const std::string base = f.root.string();
  const auto r = run("evaluate --model " + base + "/run --data " + base +
                     "/fix/speeds.csv --graph " + base + "/fix/graph.csv "
                     "--patterns rm,tcm,scm,bm --ratios 0.2,0.4 --seed 11 "
                     "--period 48 --export-node node_1 --export-times 0,8 --out " +
                     base + "/eval");
  REQUIRE(r.exit_code == 0);
  const auto report = stimpute::read_file(base + "/eval/report.csv");
  CHECK(report.find("pattern,ratio,model,") == 0);
  // 4 patterns x 2 ratios x 3 models.
  CHECK(std::count(report.begin(), report.end(), '\n') == 1 + 24);
  CHECK(fs::exists(base + "/eval/transitions_node_1.csv"));

  REQUIRE(run("report --report " + base + "/eval/report.csv --out " + base +
              "/plots").exit_code == 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(base + "/plots")) {
    ++files;
    CHECK(e.path().extension() == ".csv");
  }
  CHECK(files == 12);  // 4 patterns x 3 metrics

  const auto rm_rmse = stimpute::read_file(base + "/plots/rm_rmse.csv");
  CHECK(rm_rmse.find("ratio,stimpute,mean_fill,historical_average\n") == 0);
  CHECK(rm_rmse.find("\n0.20,") != std::string::npos);
  CHECK(rm_rmse.find("0.40,") != std::string::npos);

  // Regeneration is byte-identical.
  REQUIRE(run("report --report " + base + "/eval/report.csv --out " + base +
              "/plots2").exit_code == 0);
  CHECK(stimpute::read_file(base + "/plots/rm_rmse.csv") ==
        stimpute::read_file(base + "/plots2/rm_rmse.csv"));

  const auto bad = run("report --report " + base + "/eval/transitions_node_1.csv --out " +
                       base + "/plots3");
  CHECK(bad.exit_code == 3);
}
