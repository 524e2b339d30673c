#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "glfluct/covariance.hpp"
#include "glfluct/parser.hpp"
#include "test_util.hpp"

using namespace glfluct;
using testutil::random_poly;

namespace {

constexpr RSParams kUnitary{1.0, 0.0};
constexpr RSParams kGL{0.5, 0.5};
constexpr RSParams kGeneric{2.0, 0.3};

// Hand-derived anchors for P = tr X (single index, time T):
//   sigma_T(trX, trX*) = e^{2sT} - e^{(s-r)T}
//   sigma_T(trX, trX)  = a e^{a} (1 + a/2),  a = (s-r)T
// Both follow by integrating the degree-2 evolution in closed form.
double sigma_mixed_anchor(RSParams rs, double T) {
  return std::exp(2.0 * rs.s * T) - std::exp((rs.s - rs.r) * T);
}
double sigma_plain_anchor(RSParams rs, double T) {
  const double a = (rs.s - rs.r) * T;
  return a * std::exp(a) * (1.0 + 0.5 * a);
}

}  // namespace

TEST_CASE("sigma_direct: anchors and trivia") {
  const TracePoly x = parse("tr(X1)", 1);
  const TracePoly xs = parse("tr(X1*)", 1);
  SUBCASE("constants have zero covariance") {
    const SigmaResult r = sigma_direct(TracePoly::constant(2.0), x, kGeneric, TimeVector({1.0}));
    CHECK(std::abs(r.value) == 0.0);
  }
  SUBCASE("unitary mixed anchor 1 - e^{-T}") {
    for (double T : {0.3, 1.0, 2.5}) {
      const SigmaResult r = sigma_direct(x, xs, kUnitary, TimeVector({T}));
      CHECK(std::abs(r.value - (1.0 - std::exp(-T))) <= 1e-9);
      CHECK(r.est_error <= 1e-9);
    }
  }
  SUBCASE("general mixed anchor") {
    for (RSParams rs : {kUnitary, kGL, kGeneric}) {
      const double T = 0.9;
      const SigmaResult r = sigma_direct(x, xs, rs, TimeVector({T}));
      CHECK(std::abs(r.value - sigma_mixed_anchor(rs, T)) <= 1e-8);
    }
  }
  SUBCASE("pseudo-covariance anchor, zero at r=s") {
    for (RSParams rs : {kUnitary, kGL, kGeneric}) {
      const double T = 1.2;
      const SigmaResult r = sigma_direct(x, x, rs, TimeVector({T}));
      CHECK(std::abs(r.value - sigma_plain_anchor(rs, T)) <= 1e-8);
    }
    CHECK(std::abs(sigma_direct(x, x, kGL, TimeVector({1.0})).value) <= 1e-12);
  }
  SUBCASE("symmetry, bilinearity, constant invariance") {
    Rng rng(5);
    const TimeVector T({1.0});
    for (int trial = 0; trial < 6; ++trial) {
      const TracePoly p = random_poly(rng, 1, 3, 2);
      const TracePoly q = random_poly(rng, 1, 3, 2);
      const Complex spq = sigma_direct(p, q, kGeneric, T).value;
      const Complex sqp = sigma_direct(q, p, kGeneric, T).value;
      CHECK(std::abs(spq - sqp) <= 1e-9);
      const Complex shift = sigma_direct(p + TracePoly::constant(Complex(0.4, -2.0)), q, kGeneric, T).value;
      CHECK(std::abs(shift - spq) <= 1e-9);
    }
  }
  SUBCASE("T -> 0 linearly") {
    const Complex g1 = sigma_direct(x, xs, kGeneric, TimeVector({1e-3})).value;
    const Complex g2 = sigma_direct(x, xs, kGeneric, TimeVector({2e-3})).value;
    CHECK(std::abs(g2 / g1 - 2.0) <= 5e-3);
  }
}

TEST_CASE("gamma_tilde: structure") {
  const TimeVector T({1.0});
  SUBCASE("corollary form for P = Q = X, mixed") {
    for (RSParams rs : {kUnitary, kGL, kGeneric}) {
      const TracePoly g = gamma_tilde(parse("tr(X1)", 1), parse("tr(X1*)", 1), rs, T);
      // (T/2)(r+s) tr(C B B* D*) with roles b=1, c=2, d=3
      Word w;
      w.push_back(static_cast<char>(make_letter(2, false)));
      w.push_back(static_cast<char>(make_letter(1, false)));
      w.push_back(static_cast<char>(make_letter(1, true)));
      w.push_back(static_cast<char>(make_letter(3, true)));
      TracePoly expect = TracePoly::from_word(canonical_rotation(w), 0.5 * (rs.r + rs.s));
      CHECK(g.max_coeff_distance(expect) <= 1e-14);
    }
  }
  SUBCASE("vanishes against constants") {
    CHECK(gamma_tilde(parse("tr(X1)", 1), TracePoly::constant(1.0), kGeneric, T).is_zero());
  }
  SUBCASE("collapsing roles recovers gamma") {
    Rng rng(9);
    for (int trial = 0; trial < 12; ++trial) {
      const TracePoly p = random_poly(rng, 2, 3, 2);
      const TracePoly q = random_poly(rng, 2, 3, 2);
      const TimeVector T2({0.8, 1.1});
      const TracePoly collapsed = collapse_roles(gamma_tilde(p, q, kGeneric, T2), 2);
      CHECK(collapsed.max_coeff_distance(gamma_op(kGeneric, T2, p, q)) <= 1e-12);
    }
  }
}

TEST_CASE("sigma_free agrees with sigma_direct") {
  const TracePoly x = parse("tr(X1)", 1);
  const TracePoly xs = parse("tr(X1*)", 1);
  SUBCASE("anchors") {
    for (RSParams rs : {kUnitary, kGL, kGeneric}) {
      const double T = 1.0;
      const SigmaResult r = sigma_free(x, xs, rs, TimeVector({T}));
      CHECK(std::abs(r.value - sigma_mixed_anchor(rs, T)) <= 1e-8);
    }
  }
  SUBCASE("random pairs, quick version") {
    Rng rng(41);
    const RSParams all[] = {kUnitary, kGL, kGeneric};
    for (int trial = 0; trial < 9; ++trial) {
      const RSParams rs = all[trial % 3];
      const TracePoly p = random_poly(rng, 1, 3, 2);
      const TracePoly q = random_poly(rng, 1, 3, 2);
      const TimeVector T({1.0});
      const Complex d = sigma_direct(p, q, rs, T).value;
      const Complex f = sigma_free(p, q, rs, T).value;
      CHECK(std::abs(d - f) <= 1e-8 * std::max(1.0, std::abs(d)));
    }
  }
  SUBCASE("sigma(1,1) = 0") {
    CHECK(std::abs(sigma_free(TracePoly::constant(1.0), TracePoly::constant(1.0), kGeneric,
                              TimeVector({1.0}))
                       .value) == 0.0);
  }
}

TEST_CASE("sigma_closed_poly") {
  const std::vector<Complex> X = {0.0, 1.0};  // p(X) = X
  SUBCASE("mixed anchors") {
    CHECK(std::abs(sigma_closed_poly(X, X, ClosedVariant::mixed, kUnitary, 1.0).value -
                   (1.0 - std::exp(-1.0))) <= 1e-8);
    CHECK(std::abs(sigma_closed_poly(X, X, ClosedVariant::mixed, kGL, 1.0).value -
                   (std::exp(1.0) - 1.0)) <= 1e-8);
  }
  SUBCASE("plain variant is zero at r=s and matches sigma_direct elsewhere") {
    CHECK(std::abs(sigma_closed_poly(X, X, ClosedVariant::plain, kGL, 1.0).value) <= 1e-12);
    for (RSParams rs : {kUnitary, kGeneric}) {
      const SigmaResult r = sigma_closed_poly(X, X, ClosedVariant::plain, rs, 1.3);
      CHECK(std::abs(r.value - sigma_plain_anchor(rs, 1.3)) <= 1e-8);
      CHECK(!r.note.empty());  // sign-convention note
    }
  }
  SUBCASE("higher powers agree with sigma_direct") {
    const std::vector<Complex> p = {0.0, Complex(0.5, 0.2), Complex(-1.0, 0.0)};  // 0.5+0.2i X - X^2
    const std::vector<Complex> q = {0.0, 0.0, Complex(0.0, 1.0)};                 // i X^2
    const TracePoly tp = parse("(0.5+0.2i)*tr(X1) - tr(X1 X1)", 1);
    const TracePoly tq = parse("1i*tr(X1 X1)", 1);
    const double T = 0.8;
    for (RSParams rs : {kUnitary, kGL, kGeneric}) {
      {
        const Complex closed = sigma_closed_poly(p, q, ClosedVariant::mixed, rs, T).value;
        const Complex direct = sigma_direct(tp, tq.conjugate(), rs, TimeVector({T})).value;
        CHECK(std::abs(closed - direct) <= 1e-7);
      }
      {
        const Complex closed = sigma_closed_poly(p, q, ClosedVariant::plain, rs, T).value;
        const Complex direct = sigma_direct(tp, tq, rs, TimeVector({T})).value;
        CHECK(std::abs(closed - direct) <= 1e-7);
      }
      {
        const Complex closed = sigma_closed_poly(p, q, ClosedVariant::star_star, rs, T).value;
        const Complex direct = sigma_direct(tp.conjugate(), tq.conjugate(), rs, TimeVector({T})).value;
        CHECK(std::abs(closed - direct) <= 1e-7);
      }
    }
  }
}

TEST_CASE("quadrature cap is reported, not fatal") {
  SigmaOptions opt;
  opt.tol = 1e-30;  // unattainable
  opt.min_nodes = 16;
  opt.max_nodes = 32;
  const TracePoly x = parse("tr(X1)", 1);
  const SigmaResult r = sigma_direct(x, x.conjugate(), kUnitary, TimeVector({1.0}), opt);
  CHECK(!r.converged);
  CHECK(r.quadrature_nodes == 32);
  CHECK(r.est_error >= 0.0);
  CHECK(std::abs(r.value - (1.0 - std::exp(-1.0))) <= 1e-8);
}

TEST_CASE("non-PSD embedding signals an upstream inconsistency") {
  GaussianField f;
  f.polys = {parse("tr(X1)", 1)};
  f.C = Eigen::MatrixXcd::Constant(1, 1, Complex(-1.0, 0.0));  // impossible covariance
  f.R = Eigen::MatrixXcd::Zero(1, 1);
  CHECK_THROWS(sample_gaussian_field(f, 5, 1));
}

TEST_CASE("JSON-shaped serialization of sigma results and fields") {
  const TracePoly x = parse("tr(X1)", 1);
  const SigmaResult r = sigma_direct(x, x.conjugate(), kUnitary, TimeVector({1.0}));
  const std::string js = sigma_json(r);
  CHECK(js.find("\"method\":\"direct\"") != std::string::npos);
  CHECK(js.find("\"value_re\":") != std::string::npos);
  CHECK(js.find("\"value_im\":") != std::string::npos);
  CHECK(js.find("\"est_error\":") != std::string::npos);
  CHECK(js.find("\"nodes\":") != std::string::npos);
  const GaussianField f = build_gaussian_field({x}, kUnitary, TimeVector({1.0}));
  const std::string fj = field_json(f);
  CHECK(fj.find("\"C_re\":") != std::string::npos);
  CHECK(fj.find("\"R_re\":") != std::string::npos);
}

TEST_CASE("conjugation symmetry of sigma") {
  Rng rng(61);
  const TimeVector T({1.0});
  for (int trial = 0; trial < 8; ++trial) {
    const TracePoly p = random_poly(rng, 1, 3, 2);
    const TracePoly q = random_poly(rng, 1, 3, 2);
    const Complex lhs = sigma_direct(p.conjugate(), q.conjugate(), kGeneric, T).value;
    const Complex rhs = std::conj(sigma_direct(q, p, kGeneric, T).value);
    CHECK(std::abs(lhs - rhs) <= 1e-8 * std::max(1.0, std::abs(rhs)));
  }
}

TEST_CASE("wick_moment") {
  const TracePoly x = parse("tr(X1)", 1);
  const TracePoly xs = parse("tr(X1*)", 1);
  const TimeVector T({1.0});
  SUBCASE("odd k vanishes") {
    CHECK(wick_moment({x, x, xs}, kUnitary, T) == Complex(0.0));
  }
  SUBCASE("k=2 is sigma") {
    const Complex w2 = wick_moment({x, xs}, kUnitary, T);
    CHECK(std::abs(w2 - sigma_direct(x, xs, kUnitary, T).value) <= 1e-12);
  }
  SUBCASE("k=4 pairing sum") {
    const Complex w4 = wick_moment({x, x, xs, xs}, kGeneric, T);
    const Complex sxx = sigma_direct(x, x, kGeneric, T).value;
    const Complex sxsxs = sigma_direct(xs, xs, kGeneric, T).value;
    const Complex sxxs = sigma_direct(x, xs, kGeneric, T).value;
    CHECK(std::abs(w4 - (sxx * sxsxs + 2.0 * sxxs * sxxs)) <= 1e-10);
  }
}

TEST_CASE("exact_fluctuation_moment") {
  const TracePoly x = parse("tr(X1)", 1);
  const TracePoly xs = parse("tr(X1*)", 1);
  const TimeVector T({1.0});
  SUBCASE("k=1 centers to zero") {
    for (int N : {2, 5}) {
      CHECK(std::abs(exact_fluctuation_moment({x}, kGeneric, T, N)) <= 1e-10);
    }
  }
  SUBCASE("k=2 for trX at (1,0) is exactly N-independent") {
    // the triangular degree-2 flow makes N^2(E[PQ]-E[P]E[Q]) equal sigma for
    // every N; the acceptance rate study uses trX^2, which does depend on N
    const Complex limit = sigma_direct(x, xs, kUnitary, T, SigmaOptions{1e-11}).value;
    for (int N : {4, 8, 16})
      CHECK(std::abs(exact_fluctuation_moment({x, xs}, kUnitary, T, N) - limit) <= 1e-9);
  }
  SUBCASE("k=2 for trX^2 decays towards sigma") {
    const TracePoly x2 = parse("tr(X1 X1)", 1);
    const TracePoly x2s = x2.conjugate();
    const Complex limit = sigma_direct(x2, x2s, kUnitary, T, SigmaOptions{1e-11}).value;
    double prev = 1e9;
    for (int N : {4, 8, 16}) {
      const double diff = std::abs(exact_fluctuation_moment({x2, x2s}, kUnitary, T, N) - limit);
      CHECK(diff < prev);
      prev = diff;
    }
    CHECK(prev <= 2.0 / (16.0 * 16.0));
  }
}

TEST_CASE("gaussian field and sampling") {
  const TracePoly x = parse("tr(X1)", 1);
  const TimeVector T({1.0});
  SUBCASE("circular case at r=s") {
    const GaussianField f = build_gaussian_field({x}, kGL, T);
    CHECK(std::abs(f.R(0, 0)) <= 1e-10);
    CHECK(f.C(0, 0).real() > 0.0);
    CHECK(f.min_real_embedding_eigenvalue >= -1e-10);
    const auto samples = sample_gaussian_field(f, 20000, 7);
    Complex m2 = 0.0, pseudo = 0.0;
    for (const auto& s : samples) {
      m2 += s[0] * std::conj(s[0]);
      pseudo += s[0] * s[0];
    }
    m2 /= double(samples.size());
    pseudo /= double(samples.size());
    CHECK(std::abs(m2 - f.C(0, 0)) <= 0.05 * std::abs(f.C(0, 0)));
    CHECK(std::abs(pseudo) <= 0.05 * std::abs(f.C(0, 0)));
  }
  SUBCASE("self-adjoint polynomial gives real samples") {
    const TracePoly p = parse("tr(X1 X1*)", 1);  // P = P*
    const GaussianField f = build_gaussian_field({p}, kGeneric, T);
    const auto samples = sample_gaussian_field(f, 50, 3);
    for (const auto& s : samples) CHECK(std::abs(s[0].imag()) <= 1e-7 * (1.0 + std::abs(s[0])));
  }
  SUBCASE("n=0 gives nothing; PSD matrices from a poly family") {
    const TracePoly p1 = parse("tr(X1)", 1);
    const TracePoly p2 = parse("tr(X1 X1)", 1);
    const TracePoly p3 = parse("tr(X1 X1*)", 1);
    const GaussianField f = build_gaussian_field({p1, p2, p3}, kGeneric, T);
    CHECK(sample_gaussian_field(f, 0, 1).empty());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(f.C);
    CHECK(es.eigenvalues().minCoeff() >= -1e-9);
    CHECK(f.min_real_embedding_eigenvalue >= -1e-9);
  }
}
