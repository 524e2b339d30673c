// Acceptance suite: one pass/fail line per criterion.  Criteria may be chosen
// on the command line (default: all); the Monte Carlo criteria 5, 7, 8 share
// datasets when run in one invocation.  Exit code 0 iff all selected pass.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <set>
#include <sstream>

#include "glfluct/covariance.hpp"
#include "glfluct/matrix_lab.hpp"
#include "glfluct/parallel.hpp"
#include "glfluct/parser.hpp"
#include "glfluct/rs_basis.hpp"

using namespace glfluct;

namespace {

constexpr RSParams kUnitary{1.0, 0.0};
constexpr RSParams kGL{0.5, 0.5};
constexpr RSParams kGeneric{2.0, 0.3};
constexpr std::uint64_t kAcceptanceSeed = 20240601;

struct Outcome {
  bool pass;
  std::string detail;
};

double rel_diff(Complex a, Complex b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

Eigen::MatrixXcd random_matrix(Rng& rng, int N, double scale = 1.0) {
  Eigen::MatrixXcd m(N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) m(i, j) = scale * Complex(rng.next_gaussian(), rng.next_gaussian());
  return m;
}

// --------------------------------------------------------------------------
// 1. Magic formulas, N in 2..8, three parameter pairs, 100 random pairs each.
Outcome criterion_1() {
  Rng rng(kAcceptanceSeed);
  double worst = 0.0;
  for (RSParams rs : {kUnitary, kGL, kGeneric}) {
    for (int N = 2; N <= 8; ++N) {
      const auto basis = build_rs_basis(N, rs);
      for (int trial = 0; trial < 100; ++trial) {
        const Eigen::MatrixXcd A = random_matrix(rng, N);
        const Eigen::MatrixXcd B = random_matrix(rng, N);
        Complex s_plain = 0.0, s_mixed = 0.0;
        Eigen::MatrixXcd m_plain = Eigen::MatrixXcd::Zero(N, N);
        Eigen::MatrixXcd m_mixed = Eigen::MatrixXcd::Zero(N, N);
        for (const auto& xi : basis) {
          s_plain += (xi * A).trace() / double(N) * ((xi * B).trace() / double(N));
          s_mixed += (xi.adjoint() * A).trace() / double(N) * ((xi * B).trace() / double(N));
          m_plain += xi * A * xi;
          m_mixed += xi.adjoint() * A * xi;
        }
        const Complex trAB = (A * B).trace() / double(N);
        const Complex trA = A.trace() / double(N);
        worst = std::max(worst, std::abs(s_plain - (rs.s - rs.r) / (double(N) * N) * trAB));
        worst = std::max(worst, std::abs(s_mixed - (rs.s + rs.r) / (double(N) * N) * trAB));
        worst = std::max(
            worst,
            (m_plain - (rs.s - rs.r) * trA * Eigen::MatrixXcd::Identity(N, N)).cwiseAbs().maxCoeff());
        worst = std::max(
            worst,
            (m_mixed - (rs.s + rs.r) * trA * Eigen::MatrixXcd::Identity(N, N)).cwiseAbs().maxCoeff());
      }
    }
  }
  return {worst <= 1e-12, "max residual " + std::to_string(worst)};
}

// --------------------------------------------------------------------------
// 2. Intertwining oracle on every canonical monomial of degree <= 6, J={1,2}.
Outcome criterion_2() {
  const TimeVector T({0.7, 1.3});
  const FilteredBasis fb = build_basis(2, 6);
  const std::size_t M = fb.monomials.size();
  std::vector<double> worst_per(M, 0.0);
  std::atomic<bool> fail{false};
  parallel_for(M, [&](std::size_t idx) {
    const TracePoly p = TracePoly::from_term(fb.monomials[idx], 1.0);
    Rng rng(kAcceptanceSeed, 2, idx, 0);
    double worst = 0.0;
    for (int N : {2, 3, 4}) {
      std::vector<Eigen::MatrixXcd> g;
      for (int j = 0; j < 2; ++j) g.push_back(random_matrix(rng, N, 0.6));
      const RSParams rs = (idx % 3 == 0) ? kUnitary : (idx % 3 == 1 ? kGL : kGeneric);
      const auto res = laplacian_parts_oracle(p, g, rs, T);
      const Complex combined = res.d_part + res.l_part / Complex(double(N) * N);
      worst = std::max(worst, std::abs(res.brute_half_laplacian - combined) /
                                  std::max(1.0, std::abs(res.brute_half_laplacian)));
    }
    worst_per[idx] = worst;
    if (worst > 1e-10) fail = true;
  });
  const double worst = *std::max_element(worst_per.begin(), worst_per.end());
  std::ostringstream detail;
  detail << M << " monomials, max relative residual " << worst;
  return {!fail.load(), detail.str()};
}

// --------------------------------------------------------------------------
// 3. Three-way sigma agreement on 50 random pairs of degree <= 4.
Outcome criterion_3() {
  Rng rng(kAcceptanceSeed + 3);
  const RSParams params[] = {kUnitary, kGL, kGeneric};
  SigmaOptions opt;
  opt.tol = 1e-9;

  auto random_sigma_poly = [&](int max_deg) {
    TracePoly p;
    const int terms = 1 + static_cast<int>(rng.next_u64() % 2);
    for (int t = 0; t < terms; ++t) {
      int budget = 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(max_deg));
      std::vector<Word> ws;
      while (budget > 0) {
        const int len = 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(budget));
        Word w;
        for (int i = 0; i < len; ++i)
          w.push_back(static_cast<char>(make_letter(1, (rng.next_u64() & 1) != 0)));
        ws.push_back(canonical_rotation(w));
        budget -= len;
        if ((rng.next_u64() & 1) == 0) break;
      }
      p.add_term(mono_from_words(std::move(ws)),
                 Complex(rng.next_unit() * 2.0 - 1.0, rng.next_unit() * 2.0 - 1.0));
    }
    return p;
  };

  double worst_df = 0.0;
  std::vector<std::pair<TracePoly, TracePoly>> pairs;
  std::vector<RSParams> pair_rs;
  for (int trial = 0; trial < 50; ++trial) {
    pairs.emplace_back(random_sigma_poly(4), random_sigma_poly(4));
    pair_rs.push_back(params[trial % 3]);
  }
  std::vector<double> diffs(pairs.size(), 0.0);
  parallel_for(pairs.size(), [&](std::size_t i) {
    const TimeVector T({1.0});
    const Complex d = sigma_direct(pairs[i].first, pairs[i].second, pair_rs[i], T, opt).value;
    const Complex f = sigma_free(pairs[i].first, pairs[i].second, pair_rs[i], T, opt).value;
    diffs[i] = std::abs(d - f);
  });
  worst_df = *std::max_element(diffs.begin(), diffs.end());

  // mixed-variant closed form vs direct on one-variable polynomials
  double worst_closed = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Complex> pc(1 + rng.next_u64() % 4, Complex(0.0));
    std::vector<Complex> qc(1 + rng.next_u64() % 4, Complex(0.0));
    pc.push_back(Complex(0.0));
    qc.push_back(Complex(0.0));
    TracePoly tp, tq;
    for (std::size_t n = 1; n < pc.size(); ++n) {
      pc[n] = Complex(rng.next_unit() - 0.5, rng.next_unit() - 0.5);
      Word w(n, static_cast<char>(make_letter(1, false)));
      tp.add_term(mono_from_words({w}), pc[n]);
    }
    for (std::size_t m = 1; m < qc.size(); ++m) {
      qc[m] = Complex(rng.next_unit() - 0.5, rng.next_unit() - 0.5);
      Word w(m, static_cast<char>(make_letter(1, false)));
      tq.add_term(mono_from_words({w}), qc[m]);
    }
    const RSParams rs = params[trial % 3];
    const double T = 0.9;
    const Complex closed = sigma_closed_poly(pc, qc, ClosedVariant::mixed, rs, T, opt).value;
    const Complex direct = sigma_direct(tp, tq.conjugate(), rs, TimeVector({T}), opt).value;
    worst_closed = std::max(worst_closed, std::abs(closed - direct));
  }
  std::ostringstream detail;
  detail << "max |direct-free| " << worst_df << ", max |closed-direct| " << worst_closed;
  return {worst_df <= 1e-7 && worst_closed <= 1e-7, detail.str()};
}

// --------------------------------------------------------------------------
// 4. Closed-form anchors from all implemented methods.
Outcome criterion_4() {
  SigmaOptions opt;
  opt.tol = 1e-10;
  const TracePoly x = parse("tr(X1)", 1);
  const TracePoly xs = parse("tr(X1*)", 1);
  const std::vector<Complex> X = {0.0, 1.0};
  double worst = 0.0;
  auto check_all = [&](RSParams rs, double T, double expect) {
    worst = std::max(worst, std::abs(sigma_direct(x, xs, rs, TimeVector({T}), opt).value - expect));
    worst = std::max(worst, std::abs(sigma_free(x, xs, rs, TimeVector({T}), opt).value - expect));
    worst = std::max(
        worst, std::abs(sigma_closed_poly(X, X, ClosedVariant::mixed, rs, T, opt).value - expect));
  };
  check_all(kUnitary, 1.0, 1.0 - std::exp(-1.0));
  check_all(kGL, 1.0, std::exp(1.0) - 1.0);
  const bool anchors_ok = worst <= 1e-8;

  const Complex haar = sigma_direct(x, xs, kUnitary, TimeVector({10.0}), opt).value;
  const bool haar_ok = std::abs(haar - 1.0) <= 5e-5;
  std::ostringstream detail;
  detail << "anchor residual " << worst << ", |sigma_10 - 1| = " << std::abs(haar - 1.0);
  return {anchors_ok && haar_ok, detail.str()};
}

// --------------------------------------------------------------------------
// Shared Monte Carlo datasets for criteria 5, 7, 8.  The criterion-5 dataset
// is the coarse member of a common-random-number halving pair (same law as a
// direct 200-step run); the fine member over the first 512 paths provides the
// coupled dt-halving shift.  The Gaussianity dataset (criterion 7) runs at 50
// steps per unit time: its shape statistics are insensitive to the O(dt) mean
// bias and the sample count is what matters.
struct McData {
  PathDataset main_unitary;     // N=64, (1,0), 200 steps, 2000 samples
  PathDataset halving_fine;     // first 512 paths at 400 steps, shared noise
  PathDataset gauss_unitary;    // N=64, (1,0), 50 steps, 4000 samples
  PathDataset gl_smallN;        // r=s, N=32
};

SimConfig unitary_config(int samples, int steps) {
  SimConfig c;
  c.N = 64;
  c.rs = kUnitary;
  c.T = TimeVector({1.0});
  c.steps_per_unit_time = steps;
  c.samples = samples;
  c.seed = kAcceptanceSeed;
  return c;
}

McData& mc_data() {
  static McData data = [] {
    McData d;
    std::cerr << "[mc] simulating N=64 main dataset + halving pair (2000/512 paths)...\n";
    auto pair = simulate_paths_halving(unitary_config(2000, 200), 512);
    d.main_unitary = std::move(pair.first);
    d.halving_fine = std::move(pair.second);
    std::cerr << "[mc] simulating N=64 Gaussianity dataset (4000 paths, 50 steps)...\n";
    SimConfig gauss_cfg = unitary_config(4000, 50);
    gauss_cfg.seed = kAcceptanceSeed + 1;
    d.gauss_unitary = simulate_paths(gauss_cfg);
    std::cerr << "[mc] simulating r=s dataset (N=32, 2000 paths)...\n";
    SimConfig gl_cfg;
    gl_cfg.N = 32;
    gl_cfg.rs = kGL;
    gl_cfg.T = TimeVector({1.0});
    gl_cfg.steps_per_unit_time = 200;
    gl_cfg.samples = 2000;
    gl_cfg.seed = kAcceptanceSeed + 2;
    d.gl_smallN = simulate_paths(gl_cfg);
    return d;
  }();
  return data;
}

std::vector<TracePoly> acceptance_polys() {
  return {parse("tr(X1)", 1), parse("tr(X1*)", 1), parse("tr(X1 X1)", 1), parse("tr(X1 X1*)", 1)};
}

// 5. MC vs exact finite-N at the pinned configuration.
Outcome criterion_5() {
  const McData& d = mc_data();
  const PathDataset& ds = d.main_unitary;
  const auto polys = acceptance_polys();
  const FluctuationReport rep =
      estimate(ds, polys, {"trX", "trX*", "trX^2", "trXX*"});
  double worst_mean_z = 0.0, worst_cov_z = 0.0;
  for (const auto& m : rep.means) worst_mean_z = std::max(worst_mean_z, m.z);
  for (const auto& c : rep.covs) worst_cov_z = std::max(worst_cov_z, c.z);

  // dt-halving with common random numbers over the shared 512-path prefix
  const int fs = d.halving_fine.config.samples;
  const auto rc = estimate(d.main_unitary.prefix(fs), polys, {}, EstimateOptions{20, false});
  const auto rf = estimate(d.halving_fine, polys, {}, EstimateOptions{20, false});
  double worst_shift = 0.0;
  for (std::size_t i = 0; i < rc.means.size(); ++i) {
    const double shift = std::abs(rc.means[i].est - rf.means[i].est);
    // floor at rounding scale: identically-constant observables shift by dust
    const double se = std::max(rc.means[i].se, 1e-10);
    worst_shift = std::max(worst_shift, shift / se);
  }
  std::ostringstream detail;
  detail << "max mean z " << worst_mean_z << ", max cov z " << worst_cov_z
         << ", max halving shift " << worst_shift << " stderr";
  return {worst_mean_z <= 3.0 && worst_cov_z <= 3.0 && worst_shift < 1.0, detail.str()};
}

// 6. CLT convergence rates (exact finite-N, no MC noise).
Outcome criterion_6() {
  const TracePoly x = parse("tr(X1)", 1);
  const TracePoly x2 = parse("tr(X1 X1)", 1);
  const TimeVector T({1.0});
  const std::vector<int> Ns = {8, 16, 32, 64};
  // trX at (1,0) has an exactly N-independent k=2 moment, so the slope is fit
  // on trX^2, whose remainder genuinely decays
  const RateStudy k2 = rate_study(Ns, kUnitary, T, {x2, x2.conjugate()});
  const RateStudy k4 = rate_study(Ns, kUnitary, T, {x, x, x, x});
  std::ostringstream detail;
  detail << "k=2 slope " << k2.slope << ", k=4 slope " << k4.slope;
  const bool ok2 = k2.converged || k2.slope <= -1.0;
  const bool ok4 = k4.converged || k4.slope <= -1.0;
  return {ok2 && ok4, detail.str()};
}

// 7. Gaussianity of the standardized fluctuation at desk scale.
Outcome criterion_7() {
  const McData& d = mc_data();
  const PathDataset& ds = d.gauss_unitary;  // 4000 samples
  const TracePoly x = parse("tr(X1)", 1);
  const std::size_t S = ds.tuples.size();
  std::vector<Complex> v(S);
  parallel_for(S, [&](std::size_t s) { v[s] = x.evaluate(ds.tuples[s]); });
  Complex mean = 0.0;
  for (const auto& z : v) mean += z;
  mean /= double(S);

  auto shape_moments = [&](auto&& proj) {
    double m1 = 0, m2 = 0, m3 = 0, m4 = 0;
    for (const auto& z : v) {
      const double t = proj(z - mean);
      m1 += t;
      m2 += t * t;
      m3 += t * t * t;
      m4 += t * t * t * t;
    }
    m1 /= double(S);
    m2 /= double(S);
    m3 /= double(S);
    m4 /= double(S);
    const double sd = std::sqrt(m2);
    const double skew = m3 / (sd * sd * sd);
    const double exkurt = m4 / (m2 * m2) - 3.0;
    return std::make_pair(skew, exkurt);
  };
  const auto [skew_re, kurt_re] = shape_moments([](Complex z) { return z.real(); });
  const auto [skew_im, kurt_im] = shape_moments([](Complex z) { return z.imag(); });
  const double se_skew = std::sqrt(6.0 / double(S));
  const double se_kurt = std::sqrt(24.0 / double(S));
  const double z_skew = std::max(std::abs(skew_re), std::abs(skew_im)) / se_skew;
  const double z_kurt = std::max(std::abs(kurt_re), std::abs(kurt_im)) / se_kurt;

  const MeanStat third = estimate_fluctuation_moment(ds, {x, x, x});
  const double z3 = third.se > 0.0 ? std::abs(third.est) / third.se : 0.0;

  std::ostringstream detail;
  detail << "skew z " << z_skew << ", kurtosis z " << z_kurt << ", odd k=3 z " << z3;
  return {z_skew <= 4.0 && z_kurt <= 4.0 && z3 <= 4.0, detail.str()};
}

// 8. Circular symmetry at r = s.
Outcome criterion_8() {
  const McData& d = mc_data();
  const TracePoly x = parse("tr(X1)", 1);
  const auto rep = estimate(d.gl_smallN, {x}, {"trX"});
  double pseudo_pred = 0.0, pseudo_z = 0.0;
  for (const auto& c : rep.covs) {
    if (c.pseudo) {
      pseudo_pred = std::abs(c.pred_limit);
      pseudo_z = c.se > 0.0 ? std::abs(c.est) / c.se : 0.0;
    }
  }
  std::ostringstream detail;
  detail << "pseudo prediction " << pseudo_pred << ", estimate z " << pseudo_z;
  return {pseudo_pred <= 1e-9 && pseudo_z <= 3.0, detail.str()};
}

// 9. Determinism and negative controls (CLI path as optional extra argv).
Outcome criterion_9(const std::string& cli_path) {
  // byte-identical reports from identical seeds
  SimConfig c;
  c.N = 12;
  c.rs = kGeneric;
  c.T = TimeVector({1.0});
  c.steps_per_unit_time = 50;
  c.samples = 60;
  c.seed = 77;
  const auto polys = std::vector<TracePoly>{parse("tr(X1)", 1)};
  std::ostringstream a, b;
  write_report_csv(estimate(simulate_paths(c), polys, {"trX"}), a);
  write_report_csv(estimate(simulate_paths(c), polys, {"trX"}), b);
  const bool deterministic = a.str() == b.str();

  bool controls_ok = true;
  std::string control_note = "CLI controls skipped (no CLI path given)";
  if (!cli_path.empty()) {
    const int ok_rc = std::system((cli_path + " validate --quick > /dev/null 2>&1").c_str());
    const int bad_rc =
        std::system((cli_path + " validate --quick --convention full_delta > /dev/null 2>&1").c_str());
    const int corrupt_rc = std::system(
        (cli_path +
         " compare --r 0.5 --s 0.5 --N 8 --samples 80 --steps 40 --poly 'tr(X1)' --corrupt-sigma"
         " --out /tmp/glfluct_c9 > /dev/null 2>&1")
            .c_str());
    controls_ok = ok_rc == 0 && bad_rc != 0 && corrupt_rc != 0;
    std::ostringstream note;
    note << "validate rc=" << ok_rc << ", forced-convention rc=" << bad_rc
         << ", corrupt-sigma rc=" << corrupt_rc;
    control_note = note.str();
  }
  return {deterministic && controls_ok,
          std::string(deterministic ? "reports byte-identical" : "REPORTS DIFFER") + "; " +
              control_note};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> chosen;
  std::string cli_path;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.size() > 2 && arg.find('/') != std::string::npos)
      cli_path = arg;
    else
      chosen.insert(std::atoi(arg.c_str()));
  }
  if (chosen.empty()) chosen = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  bool all_ok = true;
  for (int crit : chosen) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out{false, "unknown criterion"};
    try {
      switch (crit) {
        case 1: out = criterion_1(); break;
        case 2: out = criterion_2(); break;
        case 3: out = criterion_3(); break;
        case 4: out = criterion_4(); break;
        case 5: out = criterion_5(); break;
        case 6: out = criterion_6(); break;
        case 7: out = criterion_7(); break;
        case 8: out = criterion_8(); break;
        case 9: out = criterion_9(cli_path); break;
        default: break;
      }
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %d: %s  (%s) [%.1fs]\n", crit, out.pass ? "PASS" : "FAIL",
                out.detail.c_str(), secs);
    std::fflush(stdout);
    all_ok = all_ok && out.pass;
  }
  return all_ok ? 0 : 1;
}
