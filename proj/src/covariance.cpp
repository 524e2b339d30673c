#include "glfluct/covariance.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "glfluct/quadrature.hpp"
#include "glfluct/rng.hpp"

namespace glfluct {

namespace {

using Method = SigmaResult::Method;

// Adaptive Gauss-Legendre on [0,1] with node doubling; f is evaluated at a
// full node set per level.
template <class Eval>
SigmaResult adaptive_quadrature(Eval&& eval_level, const SigmaOptions& opt, Method method,
                                double prefactor) {
  SigmaResult res;
  res.method = method;
  int n = opt.min_nodes;
  Complex prev = prefactor * eval_level(n);
  res.quadrature_nodes = n;
  while (true) {
    n *= 2;
    const Complex cur = prefactor * eval_level(n);
    res.est_error = std::abs(cur - prev);
    res.value = cur;
    res.quadrature_nodes = n;
    if (res.est_error <= opt.tol) break;
    if (n >= opt.max_nodes) {
      res.converged = false;
      res.note = "quadrature: node cap reached";
      break;
    }
    prev = cur;
  }
  if (!std::isfinite(res.value.real()) || !std::isfinite(res.value.imag()))
    throw std::runtime_error("sigma: non-finite quadrature result");
  return res;
}

TimeVector role_times(const TimeVector& T, bool b_block) {
  const int n = T.size();
  std::vector<double> t(static_cast<std::size_t>(3 * n), 0.0);
  for (int j = 1; j <= n; ++j) {
    if (b_block)
      t[static_cast<std::size_t>(j - 1)] = T.at(j);
    else {
      t[static_cast<std::size_t>(n + j - 1)] = T.at(j);
      t[static_cast<std::size_t>(2 * n + j - 1)] = T.at(j);
    }
  }
  return TimeVector(std::move(t));
}

// G -> [P](B G C) substitution: (j,1) becomes (b_j,1)(role_j,1), (j,*) becomes
// (role_j,*)(b_j,*); the insertion gap of original letter l is gap 2l.
Word substitute_role(const Word& w, int n_indices, int role) {
  Word out;
  out.reserve(2 * w.size());
  for (char ch : w) {
    const LetterCode c = static_cast<LetterCode>(ch);
    const int j = letter_index(c);
    const int bj = tripled_index(j, 0, n_indices);
    const int rj = tripled_index(j, role, n_indices);
    if (letter_star(c)) {
      out.push_back(static_cast<char>(make_letter(rj, true)));
      out.push_back(static_cast<char>(make_letter(bj, true)));
    } else {
      out.push_back(static_cast<char>(make_letter(bj, false)));
      out.push_back(static_cast<char>(make_letter(rj, false)));
    }
  }
  return out;
}

Word rot_from(const Word& w, int start) {
  if (start == 0) return w;
  return w.substr(static_cast<std::size_t>(start)) + w.substr(0, static_cast<std::size_t>(start));
}

// Free expectation of the integrand family over the tripled index set:
// F(t) = [e^{t D_b} e^{(1-t) D_cd} R](1), computed with one pair of flows per
// node level (D_b and D_cd commute: disjoint index support).
class TripledIntegrand {
 public:
  TripledIntegrand(const TracePoly& R, RSParams rs, const TimeVector& T, const SigmaOptions& opt)
      : fs_({make_d_generator(rs, role_times(T, true)), make_d_generator(rs, role_times(T, false))},
            opt.cap),
        exp_tol_(opt.exp_tol) {
    fs_.add(R);
    x_ = fs_.vector_of(R);
  }

  // ordered ascending nodes; returns F at each node
  std::vector<Complex> evaluate(const std::vector<double>& nodes) {
    const std::size_t k = nodes.size();
    std::vector<Complex> out(k);
    // z(u) = e^{u D_cd} x at u = 1 - t, snapshots in ascending u order
    std::vector<Eigen::VectorXcd> z(k);
    {
      Eigen::VectorXcd cur = x_;
      double u_prev = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        const double u = 1.0 - nodes[k - 1 - i];
        cur = fs_.exp_action({0.0, u - u_prev}, cur, exp_tol_);
        z[k - 1 - i] = cur;
        u_prev = u;
      }
    }
    // y(t) = e^{t D_b^T} 1 ascending in t; F = <y, z> (bilinear)
    Eigen::VectorXcd y = Eigen::VectorXcd::Ones(fs_.dim());
    double t_prev = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      y = fs_.exp_action({nodes[i] - t_prev, 0.0}, y, exp_tol_, /*transpose=*/true);
      t_prev = nodes[i];
      out[i] = y.cwiseProduct(z[i]).sum();
    }
    return out;
  }

  int dim() const { return fs_.dim(); }

 private:
  FlowSpace fs_;
  Eigen::VectorXcd x_;
  double exp_tol_;
};

SigmaResult sigma_from_tripled(const TracePoly& R, RSParams rs, const TimeVector& T,
                               const SigmaOptions& opt, Method method) {
  if (R.is_zero()) {
    SigmaResult res;
    res.method = method;
    res.quadrature_nodes = 0;
    return res;
  }
  TripledIntegrand integrand(R, rs, T, opt);
  auto eval_level = [&](int n) -> Complex {
    const GaussLegendre& gl = gauss_legendre(n);
    const std::vector<Complex> f = integrand.evaluate(gl.nodes);
    Complex acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) acc += gl.weights[i] * f[i];
    return acc;
  };
  return adaptive_quadrature(eval_level, opt, method, 2.0);
}

}  // namespace

int tripled_index(int j, int role, int n_indices) { return role * n_indices + j; }

SigmaResult sigma_direct(const TracePoly& P, const TracePoly& Q, RSParams rs, const TimeVector& T,
                         const SigmaOptions& opt) {
  if (P.is_zero() || Q.is_zero()) {
    SigmaResult res;
    res.method = Method::direct;
    return res;
  }
  FlowSpace ep({make_d_generator(rs, T)}, opt.cap);
  ep.add(P);
  FlowSpace eq({make_d_generator(rs, T)}, opt.cap);
  eq.add(Q);
  FlowSpace w({make_d_generator(rs, T)}, opt.cap);

  // Gamma images of all pairs of closure monomials, indexed into w.
  const int na = ep.dim();
  const int nb = eq.dim();
  std::vector<std::vector<TracePoly>> gpair(static_cast<std::size_t>(na));
  for (int a = 0; a < na; ++a) {
    gpair[static_cast<std::size_t>(a)].resize(static_cast<std::size_t>(nb));
    for (int b = 0; b < nb; ++b) {
      TracePoly g = gamma_op(rs, T, TracePoly::from_term(ep.basis()[static_cast<std::size_t>(a)], 1.0),
                             TracePoly::from_term(eq.basis()[static_cast<std::size_t>(b)], 1.0));
      w.add(g);
      gpair[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = std::move(g);
    }
  }
  // sparse (row, val) lists now that w's dimension is final
  std::vector<std::vector<std::vector<std::pair<int, double>>>> glists(
      static_cast<std::size_t>(na),
      std::vector<std::vector<std::pair<int, double>>>(static_cast<std::size_t>(nb)));
  for (int a = 0; a < na; ++a)
    for (int b = 0; b < nb; ++b) {
      auto& lst = glists[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
      for (const auto& [m, c] : gpair[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)].terms())
        lst.emplace_back(w.index_of(m), c.real());
    }

  const Eigen::VectorXcd xp = ep.vector_of(P);
  const Eigen::VectorXcd xq = eq.vector_of(Q);

  auto eval_level = [&](int n) -> Complex {
    const GaussLegendre& gl = gauss_legendre(n);
    Complex acc = 0.0;
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
      const double t = gl.nodes[i];
      const Eigen::VectorXcd pt = ep.exp_action({1.0 - t}, xp, opt.exp_tol);
      const Eigen::VectorXcd qt = eq.exp_action({1.0 - t}, xq, opt.exp_tol);
      Eigen::VectorXcd wv = Eigen::VectorXcd::Zero(w.dim());
      for (int a = 0; a < na; ++a) {
        if (pt[a] == Complex(0.0, 0.0)) continue;
        for (int b = 0; b < nb; ++b) {
          const Complex coef = pt[a] * qt[b];
          if (coef == Complex(0.0, 0.0)) continue;
          for (const auto& [row, val] : glists[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)])
            wv[row] += coef * val;
        }
      }
      acc += gl.weights[i] * w.exp_action({t}, wv, opt.exp_tol).sum();
    }
    return acc;
  };
  return adaptive_quadrature(eval_level, opt, Method::direct, 2.0);
}

TracePoly gamma_tilde(const TracePoly& P, const TracePoly& Q, RSParams rs, const TimeVector& T,
                      Convention conv) {
  const int n = T.size();
  if (P.max_index() > n || Q.max_index() > n)
    throw std::invalid_argument("gamma_tilde: polynomial index outside the time vector");
  const double scale = convention_scale(conv);
  TracePoly out;
  std::vector<int> occa, occb;
  for (const auto& [mp, cp] : P.terms()) {
    const std::vector<Word> wsp = mono_words(mp);
    for (const auto& [mq, cq] : Q.terms()) {
      const std::vector<Word> wsq = mono_words(mq);
      const Complex coef = cp * cq;
      for (std::size_t ia = 0; ia < wsp.size(); ++ia) {
        // spectators of P substituted with role c, of Q with role d
        std::vector<Word> spec_p;
        for (std::size_t k = 0; k < wsp.size(); ++k)
          if (k != ia)
            spec_p.push_back(canonical_rotation(substitute_role(wsp[k], n, 1)));
        const Word wa = substitute_role(wsp[ia], n, 1);
        const int na2 = static_cast<int>(wa.size());
        for (std::size_t ib = 0; ib < wsq.size(); ++ib) {
          std::vector<Word> spec(spec_p);
          for (std::size_t k = 0; k < wsq.size(); ++k)
            if (k != ib)
              spec.push_back(canonical_rotation(substitute_role(wsq[k], n, 2)));
          const Word wb = substitute_role(wsq[ib], n, 2);
          const int nb2 = static_cast<int>(wb.size());
          for (int j = 1; j <= n; ++j) {
            const double tj = T.at(j);
            if (tj == 0.0) continue;
            occurrences_of(wsp[ia], j, occa);
            if (occa.empty()) continue;
            occurrences_of(wsq[ib], j, occb);
            if (occb.empty()) continue;
            for (int l : occa) {
              const bool star_l = letter_star(static_cast<LetterCode>(wsp[ia][l]));
              const Word ra = rot_from(wa, (2 * l + 1) % na2);
              for (int h : occb) {
                const bool star_h = letter_star(static_cast<LetterCode>(wsq[ib][h]));
                const double k =
                    (star_l == star_h) ? (rs.s - rs.r) : (rs.s + rs.r);
                Word merged = canonical_rotation(ra + rot_from(wb, (2 * h + 1) % nb2));
                std::vector<Word> words(spec);
                words.push_back(std::move(merged));
                out.add_term(mono_from_words(std::move(words)), coef * scale * tj * k);
              }
            }
          }
        }
      }
    }
  }
  return out;
}

TracePoly collapse_roles(const TracePoly& P, int n_indices) {
  // Evaluating roles c and d at the identity deletes their letters (an empty
  // word contributes tr(I) = 1); role-b letters already carry base indices.
  TracePoly out;
  for (const auto& [m, c] : P.terms()) {
    std::vector<Word> kept;
    for (const Word& w : mono_words(m)) {
      Word reduced;
      for (char ch : w) {
        const LetterCode lc = static_cast<LetterCode>(ch);
        if (letter_index(lc) <= n_indices) reduced.push_back(ch);
      }
      if (!reduced.empty()) kept.push_back(canonical_rotation(reduced));
    }
    out.add_term(mono_from_words(std::move(kept)), c);
  }
  return out;
}

SigmaResult sigma_free(const TracePoly& P, const TracePoly& Q, RSParams rs, const TimeVector& T,
                       const SigmaOptions& opt) {
  const TracePoly R = gamma_tilde(P, Q, rs, T);
  return sigma_from_tripled(R, rs, T, opt, Method::free_probability);
}

SigmaResult sigma_closed_poly(const std::vector<Complex>& p, const std::vector<Complex>& q,
                              ClosedVariant variant, RSParams rs, double T,
                              const SigmaOptions& opt) {
  // roles over the single index: b = 1, c = 2, d = 3
  auto rep_word = [](int count, int first_index, bool first_star, int second_index,
                     bool second_star) {
    Word w;
    for (int i = 0; i < count; ++i) {
      w.push_back(static_cast<char>(make_letter(first_index, first_star)));
      w.push_back(static_cast<char>(make_letter(second_index, second_star)));
    }
    return w;
  };
  TracePoly R;
  for (std::size_t n = 1; n < p.size(); ++n) {
    if (p[n] == Complex(0.0, 0.0)) continue;
    for (std::size_t m = 1; m < q.size(); ++m) {
      if (q[m] == Complex(0.0, 0.0)) continue;
      Word wp, wq;
      Complex coef = static_cast<double>(n) * static_cast<double>(m) * 0.5 * T;
      switch (variant) {
        case ClosedVariant::plain:
          wp = rep_word(static_cast<int>(n), 2, false, 1, false);   // (CB)^n
          wq = rep_word(static_cast<int>(m), 3, false, 1, false);   // (DB)^m
          coef *= (rs.s - rs.r) * p[n] * q[m];
          break;
        case ClosedVariant::mixed:
          wp = rep_word(static_cast<int>(n), 2, false, 1, false);   // (CB)^n
          wq = rep_word(static_cast<int>(m), 1, true, 3, true);     // (B*D*)^m
          coef *= (rs.r + rs.s) * p[n] * std::conj(q[m]);
          break;
        case ClosedVariant::star_star:
          wp = rep_word(static_cast<int>(n), 1, true, 2, true);     // (B*C*)^n
          wq = rep_word(static_cast<int>(m), 1, true, 3, true);     // (B*D*)^m
          coef *= (rs.s - rs.r) * std::conj(p[n]) * std::conj(q[m]);
          break;
      }
      R.add_term(mono_from_words({canonical_rotation(wp + wq)}), coef);
    }
  }
  SigmaResult res =
      sigma_from_tripled(R, rs, TimeVector({T}), opt, Method::closed_form);
  if (variant != ClosedVariant::mixed)
    res.note = std::string(res.note.empty() ? "" : res.note + "; ") +
               "same-type closed form uses the merge-rule sign (+nm), opposite to the printed P'Q' display";
  return res;
}

Complex wick_moment(const std::vector<TracePoly>& Ps, RSParams rs, const TimeVector& T,
                    const SigmaOptions& opt) {
  const std::size_t k = Ps.size();
  if (k == 0) throw std::invalid_argument("wick_moment: need at least one polynomial");
  if (k % 2 != 0) return 0.0;
  std::map<std::pair<std::size_t, std::size_t>, Complex> cache;
  auto sigma = [&](std::size_t i, std::size_t j) {
    const auto key = std::minmax(i, j);
    auto it = cache.find(key);
    if (it == cache.end())
      it = cache.emplace(key, sigma_direct(Ps[key.first], Ps[key.second], rs, T, opt).value).first;
    return it->second;
  };
  std::vector<bool> used(k, false);
  std::function<Complex()> rec = [&]() -> Complex {
    std::size_t i = 0;
    while (i < k && used[i]) ++i;
    if (i == k) return 1.0;
    used[i] = true;
    Complex acc = 0.0;
    for (std::size_t j = i + 1; j < k; ++j) {
      if (used[j]) continue;
      used[j] = true;
      acc += sigma(i, j) * rec();
      used[j] = false;
    }
    used[i] = false;
    return acc;
  };
  return rec();
}

Complex exact_fluctuation_moment(const std::vector<TracePoly>& Ps, RSParams rs,
                                 const TimeVector& T, int N, double tol, std::size_t cap) {
  const std::size_t k = Ps.size();
  if (k == 0) throw std::invalid_argument("exact_fluctuation_moment: need at least one polynomial");
  if (N < 1) throw std::invalid_argument("exact_fluctuation_moment: N >= 1 required");
  HeatSemigroup hs(rs, T, N, Convention::sde_half, cap);
  std::vector<Complex> mu(k);
  for (std::size_t i = 0; i < k; ++i) mu[i] = hs.expectation(Ps[i], tol);

  Complex total = 0.0;
  for (std::size_t mask = 0; mask < (1ull << k); ++mask) {
    TracePoly prod = TracePoly::constant(1.0);
    Complex rest = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (mask & (1ull << i))
        prod = prod * Ps[i];
      else
        rest *= -mu[i];
    }
    total += rest * hs.expectation(prod, tol);
  }
  return total * std::pow(static_cast<double>(N), static_cast<double>(k));
}

GaussianField build_gaussian_field(const std::vector<TracePoly>& Ps, RSParams rs,
                                   const TimeVector& T, const SigmaOptions& opt) {
  const int k = static_cast<int>(Ps.size());
  GaussianField field;
  field.polys = Ps;
  field.C.resize(k, k);
  field.R.resize(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      field.C(i, j) =
          sigma_direct(Ps[static_cast<std::size_t>(i)], Ps[static_cast<std::size_t>(j)].conjugate(),
                       rs, T, opt)
              .value;
      field.R(i, j) = sigma_direct(Ps[static_cast<std::size_t>(i)], Ps[static_cast<std::size_t>(j)],
                                   rs, T, opt)
                          .value;
    }
  // clean up quadrature-level asymmetry
  field.C = 0.5 * (field.C + field.C.adjoint()).eval();
  field.R = 0.5 * (field.R + field.R.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(real_embedding(field));
  field.min_real_embedding_eigenvalue = es.eigenvalues().minCoeff();
  return field;
}

Eigen::MatrixXd real_embedding(const GaussianField& field) {
  const int k = static_cast<int>(field.polys.size());
  const Eigen::MatrixXd Vxx = 0.5 * (field.C.real() + field.R.real());
  const Eigen::MatrixXd Vyy = 0.5 * (field.C.real() - field.R.real());
  const Eigen::MatrixXd Vxy = 0.5 * (field.R.imag() - field.C.imag());
  Eigen::MatrixXd big(2 * k, 2 * k);
  big.topLeftCorner(k, k) = Vxx;
  big.topRightCorner(k, k) = Vxy;
  big.bottomLeftCorner(k, k) = Vxy.transpose();
  big.bottomRightCorner(k, k) = Vyy;
  return 0.5 * (big + big.transpose());
}

namespace {
std::string fmt_num(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}
}  // namespace

std::string sigma_json(const SigmaResult& r) {
  std::ostringstream out;
  const char* method = r.method == SigmaResult::Method::direct
                           ? "direct"
                           : (r.method == SigmaResult::Method::free_probability ? "free" : "closed");
  out << "{\"method\":\"" << method << "\",\"value_re\":" << fmt_num(r.value.real())
      << ",\"value_im\":" << fmt_num(r.value.imag()) << ",\"est_error\":" << fmt_num(r.est_error)
      << ",\"nodes\":" << r.quadrature_nodes << ",\"converged\":"
      << (r.converged ? "true" : "false");
  if (!r.note.empty()) out << ",\"note\":\"" << r.note << "\"";
  out << "}";
  return out.str();
}

std::string field_json(const GaussianField& field) {
  const int k = static_cast<int>(field.polys.size());
  std::ostringstream out;
  auto mat = [&](const Eigen::MatrixXcd& m, const char* re, const char* im) {
    out << "\"" << re << "\":[";
    for (int i = 0; i < k; ++i) {
      if (i) out << ',';
      out << '[';
      for (int j = 0; j < k; ++j) out << (j ? "," : "") << fmt_num(m(i, j).real());
      out << ']';
    }
    out << "],\"" << im << "\":[";
    for (int i = 0; i < k; ++i) {
      if (i) out << ',';
      out << '[';
      for (int j = 0; j < k; ++j) out << (j ? "," : "") << fmt_num(m(i, j).imag());
      out << ']';
    }
    out << ']';
  };
  out << "{\"size\":" << k << ',';
  mat(field.C, "C_re", "C_im");
  out << ',';
  mat(field.R, "R_re", "R_im");
  out << ",\"min_real_embedding_eigenvalue\":" << fmt_num(field.min_real_embedding_eigenvalue)
      << "}";
  return out.str();
}

std::vector<Eigen::VectorXcd> sample_gaussian_field(const GaussianField& field, int n,
                                                    std::uint64_t seed, double psd_tol) {
  const int k = static_cast<int>(field.polys.size());
  std::vector<Eigen::VectorXcd> out;
  if (n == 0) return out;
  const Eigen::MatrixXd big = real_embedding(field);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(big);
  if (es.eigenvalues().minCoeff() < -psd_tol)
    throw std::runtime_error(
        "sample_gaussian_field: real embedding not PSD (sigma inconsistency upstream)");
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd factor = es.eigenvectors() * lam.asDiagonal();
  Rng rng(seed);
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd gauss(2 * k);
    for (int j2 = 0; j2 < 2 * k; ++j2) gauss[j2] = rng.next_gaussian();
    const Eigen::VectorXd z = factor * gauss;
    Eigen::VectorXcd xi(k);
    for (int j2 = 0; j2 < k; ++j2) xi[j2] = Complex(z[j2], z[k + j2]);
    out.push_back(std::move(xi));
  }
  return out;
}

}  // namespace glfluct
