// End-to-end checks of the qdq binary: exit codes, stage-order errors,
// config precedence, and byte-stable reruns. Each case runs the real
// executable (path injected as QDQ_BIN) inside a scratch directory.

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "qdq/io.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run_in(const fs::path& dir, const std::string& args) {
  const fs::path log = dir / "cmd_out.txt";
  const std::string cmd = "cd '" + dir.string() + "' && '" + QDQ_BIN + "' " +
                          args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (fs::exists(log)) {
    const std::vector<unsigned char> raw = qdq::slurp_file(log.string());
    r.out.assign(raw.begin(), raw.end());
  }
  return r;
}

// one scratch dir per test case, removed on destruction
struct Scratch {
  fs::path dir;
  explicit Scratch(const char* name) {
    dir = fs::current_path() / (std::string("cli_") + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  RunResult qdq(const std::string& args) { return run_in(dir, args); }
  bool has(const char* f) const { return fs::exists(dir / f); }
  std::vector<unsigned char> bytes(const char* f) const {
    return qdq::slurp_file((dir / f).string());
  }
};

// smallest pipeline that exercises every stage
const char* kGen = "gen-data --env line-reach --behavior medium --n 6 --seed 3";
const char* kWin = "build-qwindow --set window=40 --set k=20";
const char* kDiff = "train-diffusion --iters 40";
const char* kDist = "distill-consistency --iters 40";
const char* kTrain =
    "train-qdq --iters 10 --set eval_interval=5 --set eval_episodes=2 --seed 3";

}  // namespace

TEST_CASE("cli: no subcommand and bad flags are config errors") {
  Scratch s("noargs");
  CHECK(s.qdq("").code == 2);
  CHECK(s.qdq("frobnicate").code == 2);
  CHECK(s.qdq("gen-data --no-such-flag").code == 2);
}

TEST_CASE("cli: unknown config keys and bad values are rejected") {
  Scratch s("badcfg");
  RunResult r = s.qdq("gen-data --set typo_key=3");
  CHECK(r.code == 2);
  CHECK(r.out.find("typo_key") != std::string::npos);
  CHECK(s.qdq("gen-data --set alpha=fast").code == 2);
  CHECK(s.qdq("gen-data --env mars-rover").code == 2);
  CHECK(s.qdq("gen-data --behavior sloppy").code == 2);
  CHECK(s.qdq("gen-data --set mixture_random=0.5 --behavior mixture").code == 2);
}

TEST_CASE("cli: stage order violations name the missing producer") {
  Scratch s("order");
  RunResult r = s.qdq(kWin);
  CHECK(r.code == 3);
  CHECK(r.out.find("gen-data") != std::string::npos);

  r = s.qdq(kDiff);
  CHECK(r.code == 3);
  CHECK(r.out.find("build-qwindow") != std::string::npos);

  REQUIRE(s.qdq(kGen).code == 0);
  REQUIRE(s.qdq(kWin).code == 0);
  r = s.qdq(kDist);
  CHECK(r.code == 3);
  CHECK(r.out.find("train-diffusion") != std::string::npos);

  r = s.qdq(kTrain);
  CHECK(r.code == 3);
  CHECK(r.out.find("distill-consistency") != std::string::npos);

  r = s.qdq("eval");
  CHECK(r.code == 3);
  CHECK(r.out.find("train-qdq") != std::string::npos);

  // a dataset is not a checkpoint: wrong magic is an artifact error that
  // names both sides
  r = s.qdq("eval --checkpoint dataset.bin");
  CHECK(r.code == 3);
  CHECK(r.out.find("QDQDS1") != std::string::npos);
}

TEST_CASE("cli: full pipeline runs and reruns byte-identically") {
  Scratch s("pipe");
  REQUIRE(s.qdq(kGen).code == 0);
  REQUIRE(s.qdq(kWin).code == 0);
  REQUIRE(s.qdq(kDiff).code == 0);
  REQUIRE(s.qdq(kDist).code == 0);
  REQUIRE(s.qdq(kTrain).code == 0);
  REQUIRE(s.qdq("eval --episodes 2").code == 0);
  REQUIRE(s.qdq("diagnose-uncertainty --probes 8").code == 0);
  REQUIRE(s.qdq("emit-plots --bins 7 --set hist_samples=20").code == 0);

  const char* files[] = {"dataset.bin",           "qdataset.bin",
                         "score_model.bin",       "consistency_model.bin",
                         "checkpoint.bin",        "metrics.jsonl",
                         "eval.json",             "uncertainty_report.csv",
                         "plots/hist_q.csv",      "plots/uncertainty_quantiles.csv",
                         "plots/curves_train_metrics.csv",
                         "plots/curves_eval_metrics.csv"};
  std::vector<std::vector<unsigned char>> before;
  for (const char* f : files) {
    REQUIRE(s.has(f));
    before.push_back(s.bytes(f));
  }

  REQUIRE(s.qdq(kGen).code == 0);
  REQUIRE(s.qdq(kWin).code == 0);
  REQUIRE(s.qdq(kDiff).code == 0);
  REQUIRE(s.qdq(kDist).code == 0);
  REQUIRE(s.qdq(kTrain).code == 0);
  REQUIRE(s.qdq("eval --episodes 2").code == 0);
  REQUIRE(s.qdq("diagnose-uncertainty --probes 8").code == 0);
  REQUIRE(s.qdq("emit-plots --bins 7 --set hist_samples=20").code == 0);
  for (std::size_t i = 0; i < before.size(); ++i) {
    INFO(files[i]);
    CHECK(s.bytes(files[i]) == before[i]);
  }

  // every artifact embeds the resolved config
  const std::vector<unsigned char> ev = s.bytes("eval.json");
  const std::string evs(ev.begin(), ev.end());
  CHECK(evs.find("\"config\"") != std::string::npos);
  CHECK(evs.find("alpha = 0.99") != std::string::npos);  // line-reach preset
  CHECK(evs.find("\"eval_mean\"") != std::string::npos);
}

TEST_CASE("cli: flags beat --set, --set beats config file") {
  Scratch s("prec");
  REQUIRE(s.qdq(kGen).code == 0);
  {
    std::FILE* f = std::fopen((s.dir / "a.conf").string().c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fputs("window = 40\nk = 40\n", f);
    std::fclose(f);
  }
  // file k=40 -> 5 windows/traj; --set k=20 -> 9; --k 10 -> 17
  RunResult r = s.qdq("build-qwindow --config a.conf --set k=20 --k 10");
  CHECK(r.code == 0);
  CHECK(r.out.find("102 windows") != std::string::npos);
  r = s.qdq("build-qwindow --config a.conf --set k=20");
  CHECK(r.out.find("54 windows") != std::string::npos);
  r = s.qdq("build-qwindow --config a.conf");
  CHECK(r.out.find("30 windows") != std::string::npos);
}

TEST_CASE("cli: explicit env must match the artifact") {
  Scratch s("envmatch");
  REQUIRE(s.qdq(kGen).code == 0);
  RunResult r = s.qdq("build-qwindow --set env=cliff-car --set window=40");
  CHECK(r.code == 2);
  CHECK(r.out.find("cliff-car") != std::string::npos);
  CHECK(r.out.find("line-reach") != std::string::npos);
  CHECK(s.qdq("build-qwindow --set env=line-reach --set window=40").code == 0);
}

TEST_CASE("cli: train-qdq with alpha=1 needs no consistency model") {
  Scratch s("alpha1");
  REQUIRE(s.qdq(kGen).code == 0);
  RunResult r = s.qdq(
      "train-qdq --alpha 1 --iters 6 --set eval_interval=3 "
      "--set eval_episodes=2 --seed 3");
  CHECK(r.code == 0);
  CHECK(s.has("checkpoint.bin"));
}

TEST_CASE("cli: verify-tabular writes a report and a replayable counterexample") {
  Scratch s("verify");
  RunResult r = s.qdq("verify-tabular --mdps 3 --pairs 30 --seed 11");
  CHECK(r.code == 0);
  REQUIRE(s.has("verify_report.csv"));
  const std::vector<unsigned char> rep = s.bytes("verify_report.csv");
  const std::string reps(rep.begin(), rep.end());
  CHECK(reps.find("check,trial,measured,bound,pass") != std::string::npos);
  CHECK(reps.find(",fail") == std::string::npos);
  CHECK(reps.find("contraction,") != std::string::npos);
  CHECK(reps.find("gap_expanding,") != std::string::npos);
  CHECK(!s.has("counterexample_mdp.bin"));

  // beta above one voids the suboptimality guarantee: the sweep must fail,
  // keep the report, and serialize the offending MDP for replay
  r = s.qdq("verify-tabular --mdps 3 --pairs 30 --seed 11 --beta 1.02");
  CHECK(r.code == 5);
  CHECK(s.has("verify_report.csv"));
  CHECK(s.has("counterexample_mdp.bin"));
  r = s.qdq("verify-tabular --replay counterexample_mdp.bin --beta 1.02");
  CHECK(r.code == 5);
  r = s.qdq("verify-tabular --replay counterexample_mdp.bin");
  CHECK(r.code == 0);
}

TEST_CASE("cli: emit-plots tolerates empty metrics and conserves bin counts") {
  Scratch s("plots");
  REQUIRE(s.qdq(kGen).code == 0);
  REQUIRE(s.qdq(kWin).code == 0);
  REQUIRE(s.qdq(kDiff).code == 0);
  REQUIRE(s.qdq(kDist).code == 0);
  {
    std::FILE* f = std::fopen((s.dir / "empty.jsonl").string().c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fclose(f);
  }
  RunResult r = s.qdq("emit-plots --bins 5 --set hist_samples=20 --metrics empty.jsonl");
  CHECK(r.code == 0);

  const std::vector<unsigned char> tc = s.bytes("plots/curves_train_empty.csv");
  const std::string tcs(tc.begin(), tc.end());
  CHECK(tcs.find("step,critic_loss,actor_loss,mean_h,u_frac\n") != std::string::npos);
  // header only: nothing after the column row
  CHECK(tcs.substr(tcs.find("u_frac\n") + 7).empty());

  const std::vector<unsigned char> h = s.bytes("plots/hist_q.csv");
  const std::string hs(h.begin(), h.end());
  long data = 0, model = 0, rows = 0;
  std::size_t pos = 0;
  while (pos < hs.size()) {
    std::size_t nl = hs.find('\n', pos);
    const std::string line = hs.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty() || line[0] == '#' || line.rfind("bin_lo", 0) == 0) continue;
    double lo, hi;
    long cd, cm;
    REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%ld,%ld", &lo, &hi, &cd, &cm) == 4);
    data += cd;
    model += cm;
    ++rows;
  }
  CHECK(rows == 5);
  CHECK(data == 54);   // every dataset q lands in a bin
  CHECK(model == 20);  // every model draw lands in a bin

  // a malformed metrics line is an artifact error naming the line
  {
    std::FILE* f = std::fopen((s.dir / "bad.jsonl").string().c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fputs("{\"critic_loss\": 1.0, \"step\": 1, \"mean_h\": 0.1, \"u_frac\": 0}\nnot json\n", f);
    std::fclose(f);
  }
  r = s.qdq("emit-plots --bins 5 --set hist_samples=20 --metrics bad.jsonl");
  CHECK(r.code == 3);
  CHECK(r.out.find("line 2") != std::string::npos);
}
