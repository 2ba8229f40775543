#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "qdq/errors.hpp"
#include "qdq/io.hpp"
#include "qdq/qwindow.hpp"
#include "qdq/rng.hpp"

using namespace qdq;

namespace {

// hand-rolled trajectory builder for synthetic cases
Trajectory make_traj(const std::vector<double>& rewards, int terminal_at = -1) {
  Trajectory t;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    Transition tr;
    tr.s = {static_cast<double>(i), 0.0};
    tr.a = {0.0};
    tr.r = rewards[i];
    tr.s_next = {static_cast<double>(i + 1), 0.0};
    tr.terminal = static_cast<int>(i) == terminal_at;
    tr.timeout = !tr.terminal && i + 1 == rewards.size();
    t.steps.push_back(tr);
  }
  return t;
}

Dataset wrap(std::vector<Trajectory> ts, double r_max = 1.0) {
  Dataset ds;
  ds.env_name = "line-reach";
  ds.state_dim = 2;
  ds.action_dim = 1;
  ds.r_max = r_max;
  ds.trajectories = std::move(ts);
  return ds;
}

}  // namespace

TEST_CASE("zero rewards give zero q everywhere") {
  Dataset ds = wrap({make_traj(std::vector<double>(300, 0.0))});
  QDataset qs = build_q_dataset(ds, {});
  CHECK(!qs.samples.empty());
  for (const auto& s : qs.samples) CHECK(s.q == 0.0);
}

TEST_CASE("constant reward over a full window matches the geometric series") {
  Dataset ds = wrap({make_traj(std::vector<double>(200, 1.0))});
  QWindowConfig cfg;  // k=10, window=200, gamma=0.99
  QDataset qs = build_q_dataset(ds, cfg);
  REQUIRE(qs.samples.size() == 1);  // L == window -> single start
  const double want = (1.0 - std::pow(0.99, 200)) / 0.01;
  CHECK(qs.samples[0].q == doctest::Approx(want).epsilon(1e-12));
  CHECK(qs.samples[0].q == doctest::Approx(86.6013).epsilon(1e-4));
  CHECK(!qs.samples[0].terminal_truncated);
}

TEST_CASE("terminal three steps in: hand summation") {
  Dataset ds = wrap({make_traj({1.0, 2.0, 3.0}, 2)}, 3.0);
  QWindowConfig cfg;
  cfg.k = 10;
  cfg.window = 200;
  cfg.gamma_disc = 0.9;
  QDataset qs = build_q_dataset(ds, cfg);
  REQUIRE(qs.samples.size() == 1);
  CHECK(qs.samples[0].q == doctest::Approx(5.23).epsilon(1e-12));
  CHECK(qs.samples[0].terminal_truncated);
}

TEST_CASE("terminal-truncated q equals the exact remaining return") {
  Rng rng(3);
  std::vector<double> rewards(37);
  for (auto& r : rewards) r = rng.normal();
  Dataset ds = wrap({make_traj(rewards, 36)}, 10.0);
  QWindowConfig cfg;
  cfg.k = 5;
  cfg.window = 50;
  QDataset qs = build_q_dataset(ds, cfg);
  for (const auto& s : qs.samples) {
    CHECK(s.terminal_truncated);
    double want = 0, disc = 1;
    for (std::size_t j = s.offset; j < rewards.size(); ++j) {
      want += disc * rewards[j];
      disc *= cfg.gamma_disc;
    }
    CHECK(s.q == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("window start count follows the ceiling rule") {
  QWindowConfig cfg;  // k=10, window=200
  for (int L : {1, 5, 10, 199, 200, 201, 250, 400, 1000}) {
    Dataset ds = wrap({make_traj(std::vector<double>(L, 0.0))});
    QDataset qs = build_q_dataset(ds, cfg);
    const int expect =
        static_cast<int>(std::ceil(std::max(L - cfg.window + 1, 1) / double(cfg.k)));
    CAPTURE(L);
    CHECK(static_cast<int>(qs.samples.size()) == expect);
    // offsets are the k-grid
    for (std::size_t i = 0; i < qs.samples.size(); ++i)
      CHECK(qs.samples[i].offset == i * cfg.k);
  }
}

TEST_CASE("q never exceeds the geometric cap") {
  Rng rng(9);
  std::vector<Trajectory> ts;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> rewards(260);
    for (auto& r : rewards) r = 2 * rng.uniform() - 1;
    ts.push_back(make_traj(rewards));
  }
  Dataset ds = wrap(std::move(ts));
  QWindowConfig cfg;
  QDataset qs = build_q_dataset(ds, cfg);
  const double cap = 1.0 * (1 - std::pow(0.99, 200)) / 0.01;
  for (const auto& s : qs.samples) CHECK(std::abs(s.q) <= cap);
}

TEST_CASE("truncation bound: values and monotonicity") {
  CHECK(truncation_bound(0.99, 0.0, 200) == 0.0);
  CHECK(truncation_bound(0.99, 1.0, 200) ==
        doctest::Approx(std::pow(0.99, 200) / 0.01).epsilon(1e-15));
  CHECK(truncation_bound(0.99, 1.0, 200) == doctest::Approx(13.3980).epsilon(1e-4));
  CHECK(truncation_bound(0.99, 1.0, 300) < truncation_bound(0.99, 1.0, 200));
  CHECK_THROWS_AS(truncation_bound(1.0, 1.0, 10), ConfigError);
  CHECK_THROWS_AS(truncation_bound(0.99, -1.0, 10), ConfigError);
}

TEST_CASE("window truncation error respects the geometric bound") {
  // realize long synthetic trajectories; compare width-W vs width-(W+500) sums
  Rng rng(31);
  const int W = 200, EXT = 500;
  const double gamma = 0.99;
  const double bound =
      truncation_bound(gamma, 1.0, W) + truncation_bound(gamma, 1.0, W + EXT);
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> rewards(W + EXT);
    for (auto& r : rewards) r = 2 * rng.uniform() - 1;
    double qw = 0, ql = 0, disc = 1;
    for (int j = 0; j < W + EXT; ++j) {
      if (j < W) qw += disc * rewards[j];
      ql += disc * rewards[j];
      disc *= gamma;
    }
    worst = std::max(worst, std::abs(qw - ql));
  }
  CHECK(worst <= bound);
}

TEST_CASE("config validation") {
  Dataset ds = wrap({make_traj({1.0})});
  QWindowConfig cfg;
  cfg.k = 0;
  CHECK_THROWS_AS(build_q_dataset(ds, cfg), ConfigError);
  cfg.k = 300;
  cfg.window = 200;
  CHECK_THROWS_AS(build_q_dataset(ds, cfg), ConfigError);
  cfg.k = 10;
  cfg.gamma_disc = 1.0;
  CHECK_THROWS_AS(build_q_dataset(ds, cfg), ConfigError);
  Dataset empty = wrap({});
  CHECK_THROWS_AS(build_q_dataset(empty, {}), ConfigError);
}

TEST_CASE("q-dataset file round trips bit exact") {
  Rng rng(17);
  std::vector<double> rewards(230);
  for (auto& r : rewards) r = rng.normal() * 0.3;
  Dataset ds = wrap({make_traj(rewards, 228)}, 5.0);
  QWindowConfig cfg;
  cfg.k = 7;
  cfg.window = 40;
  QDataset qs = build_q_dataset(ds, cfg);
  qs.config = "k = 7\nwindow = 40\n";
  const char* path = "qs_roundtrip.bin";
  save_q_dataset(path, qs);
  QDataset back = load_q_dataset(path);
  std::remove(path);
  CHECK(back.config == qs.config);
  CHECK(back.env_name == qs.env_name);
  CHECK(back.cfg.k == 7);
  CHECK(back.cfg.window == 40);
  REQUIRE(back.samples.size() == qs.samples.size());
  for (std::size_t i = 0; i < qs.samples.size(); ++i) {
    CHECK(back.samples[i].s == qs.samples[i].s);
    CHECK(back.samples[i].a == qs.samples[i].a);
    CHECK(back.samples[i].q == qs.samples[i].q);  // bit exact
    CHECK(back.samples[i].terminal_truncated == qs.samples[i].terminal_truncated);
    CHECK(back.samples[i].traj == qs.samples[i].traj);
    CHECK(back.samples[i].offset == qs.samples[i].offset);
  }
}

TEST_CASE("moments: mean and std over samples") {
  Dataset ds = wrap({make_traj({2.0}, 0), make_traj({4.0}, 0)}, 4.0);
  QWindowConfig cfg;
  cfg.k = 1;
  cfg.window = 10;
  QDataset qs = build_q_dataset(ds, cfg);
  REQUIRE(qs.samples.size() == 2);
  CHECK(qs.q_mean() == doctest::Approx(3.0));
  CHECK(qs.q_std() == doctest::Approx(std::sqrt(2.0)));  // n-1 denominator
}
