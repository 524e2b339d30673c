#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "glfluct/matrix_lab.hpp"
#include "glfluct/parser.hpp"

using namespace glfluct;

namespace {

constexpr RSParams kUnitary{1.0, 0.0};
constexpr RSParams kGL{0.5, 0.5};
constexpr RSParams kGeneric{2.0, 0.3};

SimConfig quick_config(RSParams rs, int N, int samples, double T = 1.0, std::uint64_t seed = 42) {
  SimConfig c;
  c.N = N;
  c.rs = rs;
  c.T = TimeVector({T});
  c.steps_per_unit_time = 100;
  c.samples = samples;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("gue increments: normalization and symmetry") {
  Rng rng(1);
  const int N = 8;
  const double dt = 0.37;
  double acc = 0.0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const Eigen::MatrixXcd x = sample_gue(N, dt, rng);
    CHECK((x - x.adjoint()).cwiseAbs().maxCoeff() == 0.0);  // exactly Hermitian
    acc += ((x * x).trace() / double(N)).real();
  }
  acc /= draws;
  CHECK(std::abs(acc - dt) <= 0.03 * dt);

  Rng rng2(2);
  const Eigen::MatrixXcd w = sample_increment(N, kUnitary, dt, rng2);
  CHECK((w + w.adjoint()).cwiseAbs().maxCoeff() <= 1e-15);  // skew at (1,0)
}

TEST_CASE("simulate_paths basics") {
  SUBCASE("time zero is the identity") {
    SimConfig c = quick_config(kGL, 4, 3, 0.0);
    const PathDataset ds = simulate_paths(c);
    for (const auto& tuple : ds.tuples)
      CHECK((tuple[0] - Eigen::MatrixXcd::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("unitarity at (1,0)") {
    SimConfig c = quick_config(kUnitary, 16, 8);
    const PathDataset ds = simulate_paths(c);
    for (const auto& tuple : ds.tuples) {
      const Eigen::MatrixXcd& b = tuple[0];
      CHECK((b.adjoint() * b - Eigen::MatrixXcd::Identity(16, 16)).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
  SUBCASE("determinism: identical config gives identical datasets") {
    SimConfig c = quick_config(kGeneric, 6, 5);
    const PathDataset a = simulate_paths(c);
    const PathDataset b = simulate_paths(c);
    for (int s = 0; s < c.samples; ++s)
      CHECK((a.tuples[s][0] - b.tuples[s][0]).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("mean of tr B(t) within 3 stderr of e^{(s-r)t/2}") {
    SimConfig c = quick_config(kGeneric, 24, 800);
    const PathDataset ds = simulate_paths(c);
    const auto rep = estimate(ds, {parse("tr(X1)", 1)}, {"trX"});
    const double expect = std::exp((kGeneric.s - kGeneric.r) * 0.5);
    CHECK(std::abs(rep.means[0].pred.real() - expect) <= 1e-8);  // L kills single letters
    CHECK(std::abs(rep.means[0].est - rep.means[0].pred) <= 3.5 * rep.means[0].se);
  }
  SUBCASE("euler scheme agrees with the geometric scheme in the mean") {
    SimConfig c = quick_config(kGL, 16, 600);
    c.scheme = SimConfig::Scheme::euler_maruyama;
    const PathDataset ds = simulate_paths(c);
    const auto rep = estimate(ds, {parse("tr(X1 X1*)", 1)}, {"trXX*"});
    CHECK(rep.means[0].z <= 4.0);
  }
}

TEST_CASE("halving pair shares driving noise") {
  SimConfig c = quick_config(kUnitary, 8, 12);
  const auto [coarse, fine] = simulate_paths_halving(c);
  CHECK(fine.config.steps_per_unit_time == 2 * c.steps_per_unit_time);
  double maxdiff = 0.0;
  for (int s = 0; s < c.samples; ++s)
    maxdiff = std::max(maxdiff, (coarse.tuples[s][0] - fine.tuples[s][0]).cwiseAbs().maxCoeff());
  // coupled paths stay O(dt) close; independent paths would be O(1) apart
  CHECK(maxdiff <= 0.5);
  CHECK(maxdiff > 0.0);
}

TEST_CASE("dataset save/load round trip") {
  SimConfig c = quick_config(kGeneric, 5, 4);
  const PathDataset ds = simulate_paths(c);
  const std::string path = "glfluct_test_dataset.bin";
  save_dataset(ds, path);
  {
    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "GLBM");
  }
  const PathDataset back = load_dataset(path);
  CHECK(back.config.N == 5);
  CHECK(back.config.T.size() == 1);
  CHECK(back.tuples.size() == ds.tuples.size());
  double maxdiff = 0.0;
  for (std::size_t s = 0; s < ds.tuples.size(); ++s)
    maxdiff = std::max(maxdiff, (ds.tuples[s][0] - back.tuples[s][0]).cwiseAbs().maxCoeff());
  CHECK(maxdiff == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("estimate: degenerate and error paths") {
  SimConfig c = quick_config(kGL, 4, 40);
  const PathDataset ds = simulate_paths(c);
  SUBCASE("constant polynomial flagged with zero variance") {
    const auto rep = estimate(ds, {TracePoly::constant(3.0)}, {"const"});
    CHECK(rep.means[0].degenerate);
    CHECK(rep.means[0].se == 0.0);
    CHECK(rep.covs[0].est == Complex(0.0));
  }
  SUBCASE("fewer samples than batches rejected") {
    EstimateOptions opt;
    opt.batches = 100;
    CHECK_THROWS(estimate(ds, {parse("tr(X1)", 1)}, {}, opt));
  }
  SUBCASE("index outside dataset rejected") {
    CHECK_THROWS(estimate(ds, {parse("tr(X2)", 2)}, {}));
  }
}

TEST_CASE("estimator sanity: pseudo-covariance vanishes at r=s") {
  SimConfig c = quick_config(kGL, 24, 800, 1.0, 2027);
  const PathDataset ds = simulate_paths(c);
  const auto rep = estimate(ds, {parse("tr(X1)", 1)}, {"trX"});
  for (const auto& cs : rep.covs) {
    if (cs.pseudo) {
      CHECK(std::abs(cs.pred_limit) <= 1e-9);
      CHECK(std::abs(cs.est) <= 3.5 * cs.se);
    }
  }
}

TEST_CASE("rate_study") {
  const TracePoly x = parse("tr(X1)", 1);
  const TracePoly xs = parse("tr(X1*)", 1);
  const TimeVector T({1.0});
  SUBCASE("needs three Ns") {
    CHECK_THROWS(rate_study({2, 4}, kUnitary, T, {x, xs}));
  }
  SUBCASE("k=1 converges identically") {
    const RateStudy r = rate_study({4, 8, 16}, kUnitary, T, {x});
    CHECK(r.converged);
  }
  SUBCASE("k=2 for trX at (1,0) reports converged (exactly N-free)") {
    const RateStudy r = rate_study({4, 8, 16}, kUnitary, T, {x, xs});
    CHECK(r.converged);
  }
  SUBCASE("k=2 slope at most -1 for trX^2") {
    const TracePoly x2 = parse("tr(X1 X1)", 1);
    const RateStudy r = rate_study({4, 8, 16, 32}, kUnitary, T, {x2, x2.conjugate()});
    CHECK(!r.converged);
    CHECK(r.slope <= -1.0);
  }
}

TEST_CASE("reports are deterministic") {
  SimConfig c = quick_config(kGeneric, 6, 60);
  const PathDataset ds = simulate_paths(c);
  const auto rep1 = estimate(ds, {parse("tr(X1)", 1)}, {"trX"});
  const auto rep2 = estimate(simulate_paths(c), {parse("tr(X1)", 1)}, {"trX"});
  std::ostringstream a, b;
  write_report_csv(rep1, a);
  write_report_csv(rep2, b);
  CHECK(a.str() == b.str());
  CHECK(a.str().find("kind,poly") == 0);
  CHECK(report_json(rep1) == report_json(rep2));
}

TEST_CASE("expand_increments distributional check via the semigroup") {
  // tr(B(t2)) expanded into increments must reproduce E tr B(t2) computed at a
  // single time; the mean of the expanded polynomial over an increment
  // simulation must agree within MC error.
  const double t1 = 0.4, t2 = 1.0;
  const auto [expanded, inc_times] = expand_increments(parse("tr(X2)", 2), {t1, t2});
  const TimeVector Tinc(inc_times);
  const Complex pred_direct = heat_expectation(parse("tr(X1)", 1), kUnitary, TimeVector({t2}), 16);
  const Complex pred_expanded = heat_expectation(expanded, kUnitary, Tinc, 16);
  CHECK(std::abs(pred_direct - pred_expanded) <= 1e-9);

  SimConfig c;
  c.N = 16;
  c.rs = kUnitary;
  c.T = Tinc;
  c.steps_per_unit_time = 100;
  c.samples = 400;
  c.seed = 11;
  const PathDataset ds = simulate_paths(c);
  const auto rep = estimate(ds, {expanded}, {"expanded"});
  CHECK(rep.means[0].z <= 4.0);
}
