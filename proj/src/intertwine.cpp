#include "glfluct/intertwine.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "glfluct/parallel.hpp"
#include "glfluct/rs_basis.hpp"

namespace glfluct {

namespace {

// Insertion gap of the letter at `pos` (0-based): after it for plain letters,
// before it for starred ones.  Gap g sits between positions g and g+1 mod n.
inline int gap_of(const Word& w, int pos) {
  const int n = static_cast<int>(w.size());
  return letter_star(static_cast<LetterCode>(w[pos])) ? (pos + n - 1) % n : pos;
}

inline Word rot_from(const Word& w, int start) {
  if (start == 0) return w;
  return w.substr(static_cast<std::size_t>(start)) + w.substr(0, static_cast<std::size_t>(start));
}

inline double kappa(RSParams rs, bool star_a, bool star_b) {
  return (star_a == star_b) ? (rs.s - rs.r) : (rs.s + rs.r);
}

}  // namespace

void occurrences_of(const Word& w, int j, std::vector<int>& out) {
  out.clear();
  for (int p = 0; p < static_cast<int>(w.size()); ++p)
    if (letter_index(static_cast<LetterCode>(w[p])) == j) out.push_back(p);
}

namespace {

void check_index_range(const TracePoly& P, const TimeVector& T) {
  if (P.max_index() > T.size())
    throw std::invalid_argument("polynomial uses an index outside the time vector");
}

}  // namespace

TracePoly d_single_word(const Word& w, RSParams rs, const TimeVector& T, double scale) {
  TracePoly out;
  const int n = static_cast<int>(w.size());
  if (n == 0) return out;
  const MonKey self = mono_from_words({w});
  std::vector<int> occ;
  for (int j = 1; j <= T.size(); ++j) {
    const double tj = T.at(j);
    if (tj == 0.0) continue;
    occurrences_of(w, j, occ);
    if (occ.empty()) continue;
    // diagonal insertions: sum_xi xi^2 = sum_xi (xi*)^2 = (s-r) I
    out.add_term(self, scale * tj * (rs.s - rs.r) * static_cast<double>(occ.size()));
    for (int a : occ) {
      for (int b : occ) {
        if (a == b) continue;
        const int g1 = gap_of(w, a);
        const int g2 = gap_of(w, b);
        const double k =
            kappa(rs, letter_star(static_cast<LetterCode>(w[a])), letter_star(static_cast<LetterCode>(w[b])));
        const int len1 = ((g2 - g1) % n + n) % n;
        if (len1 == 0) {
          // coincident gaps: empty arc contributes tr(I) = 1
          out.add_term(self, scale * tj * k);
        } else {
          Word arc1 = canonical_rotation(rot_from(w, (g1 + 1) % n).substr(0, len1));
          Word arc2 = canonical_rotation(rot_from(w, (g2 + 1) % n).substr(0, n - len1));
          out.add_term(mono_from_words({std::move(arc1), std::move(arc2)}), scale * tj * k);
        }
      }
    }
  }
  return out;
}

TracePoly gamma_words(const Word& a, const Word& b, RSParams rs, const TimeVector& T,
                      double scale) {
  TracePoly out;
  const int na = static_cast<int>(a.size());
  const int nb = static_cast<int>(b.size());
  if (na == 0 || nb == 0) return out;
  std::vector<int> occa, occb;
  for (int j = 1; j <= T.size(); ++j) {
    const double tj = T.at(j);
    if (tj == 0.0) continue;
    occurrences_of(a, j, occa);
    if (occa.empty()) continue;
    occurrences_of(b, j, occb);
    if (occb.empty()) continue;
    for (int p : occa) {
      const int ga = gap_of(a, p);
      const Word ra = rot_from(a, (ga + 1) % na);
      for (int q : occb) {
        const int gb = gap_of(b, q);
        const double k = kappa(rs, letter_star(static_cast<LetterCode>(a[p])),
                               letter_star(static_cast<LetterCode>(b[q])));
        Word merged = canonical_rotation(ra + rot_from(b, (gb + 1) % nb));
        out.add_term(mono_from_words({std::move(merged)}), scale * tj * k);
      }
    }
  }
  return out;
}

TracePoly apply_D(RSParams rs, const TimeVector& T, const TracePoly& P, Convention conv) {
  check_index_range(P, T);
  const double scale = convention_scale(conv);
  TracePoly out;
  for (const auto& [m, c] : P.terms()) {
    const std::vector<Word> ws = mono_words(m);
    for (std::size_t i = 0; i < ws.size(); ++i) {
      MonKey rest = mono_erase_word(m, ws[i]);
      TracePoly dw = d_single_word(ws[i], rs, T, scale);
      for (const auto& [dm, dc] : dw.terms()) out.add_term(mono_mul(rest, dm), c * dc);
    }
  }
  return out;
}

TracePoly apply_L(RSParams rs, const TimeVector& T, const TracePoly& P, Convention conv) {
  check_index_range(P, T);
  const double scale = convention_scale(conv);
  TracePoly out;
  for (const auto& [m, c] : P.terms()) {
    const std::vector<Word> ws = mono_words(m);
    for (std::size_t i = 0; i < ws.size(); ++i) {
      for (std::size_t k = i + 1; k < ws.size(); ++k) {
        MonKey rest = mono_erase_word(mono_erase_word(m, ws[i]), ws[k]);
        TracePoly g = gamma_words(ws[i], ws[k], rs, T, scale);
        for (const auto& [gm, gc] : g.terms()) out.add_term(mono_mul(rest, gm), 2.0 * c * gc);
      }
    }
  }
  return out;
}

TracePoly gamma_op(RSParams rs, const TimeVector& T, const TracePoly& P, const TracePoly& Q,
                   Convention conv) {
  check_index_range(P, T);
  check_index_range(Q, T);
  const double scale = convention_scale(conv);
  TracePoly out;
  for (const auto& [mp, cp] : P.terms()) {
    const std::vector<Word> wsp = mono_words(mp);
    for (const auto& [mq, cq] : Q.terms()) {
      const std::vector<Word> wsq = mono_words(mq);
      const Complex coef = cp * cq;
      for (const auto& wa : wsp) {
        MonKey rest_p = mono_erase_word(mp, wa);
        for (const auto& wb : wsq) {
          MonKey rest = mono_mul(rest_p, mono_erase_word(mq, wb));
          TracePoly g = gamma_words(wa, wb, rs, T, scale);
          for (const auto& [gm, gc] : g.terms()) out.add_term(mono_mul(rest, gm), coef * gc);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Basis enumeration

std::vector<Word> enumerate_necklaces(int n_indices, int maxlen) {
  const int K = 2 * n_indices;
  std::vector<Word> out;
  // FKM generation per length, lexicographic within each length.
  for (int n = 1; n <= maxlen; ++n) {
    std::vector<int> a(static_cast<std::size_t>(n) + 1, 0);
    std::function<void(int, int)> gen = [&](int t, int p) {
      if (t > n) {
        if (n % p == 0) {
          Word w;
          w.reserve(static_cast<std::size_t>(n));
          for (int i = 1; i <= n; ++i) w.push_back(static_cast<char>(a[static_cast<std::size_t>(i)]));
          out.push_back(std::move(w));
        }
        return;
      }
      a[static_cast<std::size_t>(t)] = a[static_cast<std::size_t>(t - p)];
      gen(t + 1, p);
      for (int c = a[static_cast<std::size_t>(t - p)] + 1; c < K; ++c) {
        a[static_cast<std::size_t>(t)] = c;
        gen(t + 1, t);
      }
    };
    gen(1, 1);
  }
  return out;
}

FilteredBasis build_basis(int n_indices, int dmax, std::size_t cap) {
  if (n_indices < 1) throw std::invalid_argument("build_basis: need at least one index");
  if (dmax < 0) throw std::invalid_argument("build_basis: dmax must be >= 0");
  FilteredBasis fb;
  fb.n_indices = n_indices;
  fb.dmax = dmax;

  std::vector<Word> words = enumerate_necklaces(n_indices, dmax);
  std::sort(words.begin(), words.end());  // enumeration order for multisets

  std::vector<MonKey> keys;
  keys.emplace_back();  // unit monomial
  std::vector<Word> stack;
  std::function<void(std::size_t, int)> rec = [&](std::size_t start, int remaining) {
    for (std::size_t i = start; i < words.size(); ++i) {
      const int len = static_cast<int>(words[i].size());
      if (len > remaining) continue;
      stack.push_back(words[i]);
      keys.push_back(mono_from_words(stack));
      if (keys.size() > cap) throw BasisCapExceeded(cap);
      rec(i, remaining - len);
      stack.pop_back();
    }
  };
  rec(0, dmax);

  std::sort(keys.begin(), keys.end(), [](const MonKey& a, const MonKey& b) {
    const int da = mono_degree(a), db = mono_degree(b);
    if (da != db) return da < db;
    return a < b;
  });
  fb.monomials = std::move(keys);
  fb.index.reserve(fb.monomials.size());
  for (std::size_t i = 0; i < fb.monomials.size(); ++i)
    fb.index.emplace(fb.monomials[i], static_cast<int>(i));
  return fb;
}

OperatorMatrix operator_matrix(OperatorMatrix::Kind kind, RSParams rs, const TimeVector& T,
                               std::shared_ptr<const FilteredBasis> basis, int N,
                               Convention conv) {
  if (!basis) throw std::invalid_argument("operator_matrix: null basis");
  if (kind == OperatorMatrix::Kind::D_plus_L_over_N2 && N < 1)
    throw std::invalid_argument("operator_matrix: D_plus_L_over_N2 requires N >= 1");
  const int dim = static_cast<int>(basis->monomials.size());
  OperatorMatrix op;
  op.kind = kind;
  op.N = N;
  op.basis = basis;
  op.entries = Eigen::MatrixXcd::Zero(dim, dim);
  // columns are independent
  parallel_for(static_cast<std::size_t>(dim), [&](std::size_t ci) {
    const int c = static_cast<int>(ci);
    const TracePoly col = TracePoly::from_term(basis->monomials[ci], 1.0);
    TracePoly img;
    switch (kind) {
      case OperatorMatrix::Kind::D:
        img = apply_D(rs, T, col, conv);
        break;
      case OperatorMatrix::Kind::L:
        img = apply_L(rs, T, col, conv);
        break;
      case OperatorMatrix::Kind::D_plus_L_over_N2:
        img = apply_D(rs, T, col, conv);
        img += apply_L(rs, T, col, conv) * Complex(1.0 / (static_cast<double>(N) * N), 0.0);
        break;
    }
    for (const auto& [m, v] : img.terms()) {
      auto it = basis->index.find(m);
      if (it == basis->index.end())
        throw std::logic_error("operator_matrix: image monomial outside basis");
      op.entries(it->second, c) = v;
    }
  });
  return op;
}

void export_operator_triplets(const OperatorMatrix& op, std::ostream& out) {
  const auto rows = op.entries.rows();
  const auto cols = op.entries.cols();
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) {
      const Complex v = op.entries(r, c);
      if (v != Complex(0.0, 0.0)) out << r << ' ' << c << ' ' << v.real() << ' ' << v.imag() << '\n';
    }
}

// ---------------------------------------------------------------------------
// FlowSpace

FlowSpace::FlowSpace(std::vector<Generator> gens, std::size_t cap)
    : gens_(std::move(gens)), cap_(cap) {
  cols_.resize(gens_.size());
  row_abs_sum_.resize(gens_.size());
}

int FlowSpace::index_of(const MonKey& m) const {
  auto it = index_.find(m);
  return it == index_.end() ? -1 : it->second;
}

void FlowSpace::add(const TracePoly& P) {
  const std::size_t first = basis_.size();
  bool added = false;
  for (const auto& [m, c] : P.terms()) {
    if (index_.find(m) == index_.end()) {
      index_.emplace(m, static_cast<int>(basis_.size()));
      basis_.push_back(m);
      added = true;
    }
  }
  if (added) close_from(first);
}

void FlowSpace::close_from(std::size_t first_unprocessed) {
  // Worklist: basis_ grows as generator images introduce new monomials; each
  // monomial's columns are computed exactly once per generator.
  for (std::size_t pos = first_unprocessed; pos < basis_.size(); ++pos) {
    if (basis_.size() > cap_) throw BasisCapExceeded(cap_);
    const MonKey m = basis_[pos];
    for (std::size_t g = 0; g < gens_.size(); ++g) {
      TracePoly img = gens_[g](m);
      std::vector<std::pair<int, double>> col;
      col.reserve(img.terms().size());
      for (const auto& [im, c] : img.terms()) {
        auto [it, inserted] = index_.try_emplace(im, static_cast<int>(basis_.size()));
        if (inserted) basis_.push_back(im);
        col.emplace_back(it->second, c.real());
      }
      if (cols_[g].size() < basis_.size()) cols_[g].resize(basis_.size());
      cols_[g][pos] = std::move(col);
    }
  }
  for (std::size_t g = 0; g < gens_.size(); ++g) {
    cols_[g].resize(basis_.size());
    auto& rsum = row_abs_sum_[g];
    rsum.assign(basis_.size(), 0.0);
    for (const auto& col : cols_[g])
      for (const auto& [row, val] : col) rsum[static_cast<std::size_t>(row)] += std::abs(val);
  }
}

Eigen::VectorXcd FlowSpace::vector_of(const TracePoly& P) const {
  Eigen::VectorXcd x = Eigen::VectorXcd::Zero(dim());
  for (const auto& [m, c] : P.terms()) {
    auto it = index_.find(m);
    if (it == index_.end()) throw std::logic_error("FlowSpace::vector_of: monomial not in space");
    x[it->second] = c;
  }
  return x;
}

TracePoly FlowSpace::poly_of(const Eigen::VectorXcd& x) const {
  TracePoly p;
  for (int i = 0; i < dim(); ++i)
    if (x[i] != Complex(0.0, 0.0)) p.add_term(basis_[static_cast<std::size_t>(i)], x[i]);
  return p;
}

void FlowSpace::matvec(const std::vector<double>& weights, const Eigen::VectorXcd& x,
                       Eigen::VectorXcd& y, bool transpose) const {
  y.setZero(x.size());
  for (std::size_t g = 0; g < gens_.size(); ++g) {
    const double w = weights[g];
    if (w == 0.0) continue;
    const auto& cols = cols_[g];
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (transpose) {
        Complex acc = 0.0;
        for (const auto& [row, val] : cols[c]) acc += val * x[row];
        y[static_cast<Eigen::Index>(c)] += w * acc;
      } else {
        const Complex xc = x[static_cast<Eigen::Index>(c)];
        if (xc == Complex(0.0, 0.0)) continue;
        for (const auto& [row, val] : cols[c]) y[row] += (w * val) * xc;
      }
    }
  }
}

Eigen::VectorXcd FlowSpace::exp_action(const std::vector<double>& weights,
                                       const Eigen::VectorXcd& x, double tol,
                                       bool transpose) const {
  if (weights.size() != gens_.size())
    throw std::invalid_argument("exp_action: one weight per generator required");
  if (x.size() == 0) return x;
  // Upper bound on the inf-norm of the weighted combination.
  double norm = 0.0;
  for (std::size_t r = 0; r < basis_.size(); ++r) {
    double acc = 0.0;
    for (std::size_t g = 0; g < gens_.size(); ++g)
      acc += std::abs(weights[g]) * row_abs_sum_[g][r];
    norm = std::max(norm, acc);
  }
  const int m = std::max(1, static_cast<int>(std::ceil(norm / 2.0)));
  std::vector<double> wscaled(weights);
  for (auto& w : wscaled) w /= static_cast<double>(m);

  Eigen::VectorXcd y = x;
  Eigen::VectorXcd term(x.size()), next(x.size());
  constexpr int kMaxTerms = 128;
  for (int rep = 0; rep < m; ++rep) {
    term = y;
    Eigen::VectorXcd acc = y;
    int quiet = 0;
    for (int k = 1; k <= kMaxTerms; ++k) {
      matvec(wscaled, term, next, transpose);
      next /= static_cast<double>(k);
      term.swap(next);
      acc += term;
      const double tn = term.cwiseAbs().maxCoeff();
      const double an = std::max(1.0, acc.cwiseAbs().maxCoeff());
      if (tn <= tol * an) {
        if (++quiet >= 2) break;
      } else {
        quiet = 0;
      }
      if (k == kMaxTerms) throw std::runtime_error("exp_action: Taylor series did not converge");
    }
    y = std::move(acc);
  }
  return y;
}

FlowSpace::Generator make_d_generator(RSParams rs, const TimeVector& T, Convention conv) {
  const double scale = convention_scale(conv);
  return [rs, T, scale](const MonKey& m) {
    TracePoly out;
    const std::vector<Word> ws = mono_words(m);
    for (std::size_t i = 0; i < ws.size(); ++i) {
      MonKey rest = mono_erase_word(m, ws[i]);
      TracePoly dw = d_single_word(ws[i], rs, T, scale);
      for (const auto& [dm, dc] : dw.terms()) out.add_term(mono_mul(rest, dm), dc);
    }
    return out;
  };
}

FlowSpace::Generator make_l_generator(RSParams rs, const TimeVector& T, Convention conv) {
  const double scale = convention_scale(conv);
  return [rs, T, scale](const MonKey& m) {
    TracePoly out;
    const std::vector<Word> ws = mono_words(m);
    for (std::size_t i = 0; i < ws.size(); ++i)
      for (std::size_t k = i + 1; k < ws.size(); ++k) {
        MonKey rest = mono_erase_word(mono_erase_word(m, ws[i]), ws[k]);
        TracePoly g = gamma_words(ws[i], ws[k], rs, T, scale);
        for (const auto& [gm, gc] : g.terms()) out.add_term(mono_mul(rest, gm), 2.0 * gc);
      }
    return out;
  };
}

// ---------------------------------------------------------------------------
// Heat semigroup

HeatSemigroup::HeatSemigroup(RSParams rs, const TimeVector& T, int N, Convention conv,
                             std::size_t cap)
    : fs_(N > 0 ? std::vector<FlowSpace::Generator>{make_d_generator(rs, T, conv),
                                                    make_l_generator(rs, T, conv)}
                : std::vector<FlowSpace::Generator>{make_d_generator(rs, T, conv)},
          cap) {
  weights_.push_back(1.0);
  if (N > 0) weights_.push_back(1.0 / (static_cast<double>(N) * N));
}

Complex HeatSemigroup::expectation(const TracePoly& P, double tol) {
  if (P.is_zero()) return 0.0;
  fs_.add(P);
  Eigen::VectorXcd y = fs_.exp_action(weights_, fs_.vector_of(P), tol);
  const Complex value = y.sum();
  if (!std::isfinite(value.real()) || !std::isfinite(value.imag()))
    throw std::runtime_error("heat_expectation: non-finite result");
  return value;
}

Complex heat_expectation(const TracePoly& P, RSParams rs, const TimeVector& T, int N, double tol,
                         Convention conv, std::size_t cap) {
  HeatSemigroup hs(rs, T, N, conv, cap);
  return hs.expectation(P, tol);
}

// ---------------------------------------------------------------------------
// Brute-force Laplacian oracle

namespace {

// Per-word precomputation: the matrix letters and all cyclic arc products.
struct WordContext {
  const Word* w;
  int n;
  std::vector<Eigen::MatrixXcd> letters;  // matrix (or adjoint) at each position

  // product of letters at positions start, start+1, ..., start+len-1 (cyclic);
  // len = 0 gives the identity
  Eigen::MatrixXcd arc(int start, int len, int N) const {
    Eigen::MatrixXcd acc = Eigen::MatrixXcd::Identity(N, N);
    for (int k = 0; k < len; ++k) acc = acc * letters[static_cast<std::size_t>((start + k) % n)];
    return acc;
  }
};

}  // namespace

LaplacianOracleResult laplacian_parts_oracle(const TracePoly& P,
                                             const std::vector<Eigen::MatrixXcd>& g, RSParams rs,
                                             const TimeVector& T, Convention conv) {
  const int N = g.empty() ? 1 : static_cast<int>(g[0].rows());
  for (const auto& m : g)
    if (m.rows() != N || m.cols() != N)
      throw std::invalid_argument("laplacian_parts_oracle: matrices must be square, equal size");
  check_index_range(P, T);
  const double scale = convention_scale(Convention::sde_half);

  const std::vector<Eigen::MatrixXcd> basis = build_rs_basis(N, rs);

  LaplacianOracleResult res;
  res.d_part = apply_D(rs, T, P, conv).evaluate(g);
  res.l_part = apply_L(rs, T, P, conv).evaluate(g);

  Complex brute = 0.0;
  for (const auto& [mon, coeff] : P.terms()) {
    const std::vector<Word> ws = mono_words(mon);
    const std::size_t W = ws.size();
    if (W == 0) continue;  // constants are killed

    std::vector<WordContext> ctx(W);
    std::vector<Complex> base_value(W);
    for (std::size_t i = 0; i < W; ++i) {
      ctx[i].w = &ws[i];
      ctx[i].n = static_cast<int>(ws[i].size());
      ctx[i].letters.reserve(ws[i].size());
      for (char ch : ws[i]) {
        const LetterCode lc = static_cast<LetterCode>(ch);
        const Eigen::MatrixXcd& a = g.at(static_cast<std::size_t>(letter_index(lc) - 1));
        if (letter_star(lc))
          ctx[i].letters.emplace_back(a.adjoint());
        else
          ctx[i].letters.push_back(a);
      }
      base_value[i] = ctx[i].arc(0, ctx[i].n, N).trace() / static_cast<double>(N);
    }

    for (int j = 1; j <= T.size(); ++j) {
      const double tj = T.at(j);
      if (tj == 0.0) continue;

      // occurrence tables and rotated context products R_g = arc(g+1, n)
      std::vector<std::vector<int>> occ(W);
      for (std::size_t i = 0; i < W; ++i) occurrences_of(ws[i], j, occ[i]);

      for (const auto& xi : basis) {
        const Eigen::MatrixXcd xis = xi.adjoint();
        // first derivative of each trace factor along xi_j
        std::vector<Complex> d1(W, Complex(0.0, 0.0));
        std::vector<Complex> d2(W, Complex(0.0, 0.0));
        for (std::size_t i = 0; i < W; ++i) {
          const auto& c = ctx[i];
          for (int p : occ[i]) {
            const bool star_p = letter_star(static_cast<LetterCode>(ws[i][p]));
            const int gp = gap_of(ws[i], p);
            const Eigen::MatrixXcd R = c.arc((gp + 1) % c.n, c.n, N);
            const Eigen::MatrixXcd& ins = star_p ? xis : xi;
            d1[i] += (ins * R).trace() / static_cast<double>(N);
            // diagonal second insertion: the same factor differentiated twice
            d2[i] += (ins * ins * R).trace() / static_cast<double>(N);
            for (int q : occ[i]) {
              if (q == p) continue;
              const bool star_q = letter_star(static_cast<LetterCode>(ws[i][q]));
              const int gq = gap_of(ws[i], q);
              const Eigen::MatrixXcd& ins_q = star_q ? xis : xi;
              const int len1 = ((gq - gp) % c.n + c.n) % c.n;
              if (len1 == 0) {
                // coincident gaps: plain letter at gp, starred letter next;
                // the plain insertion precedes the starred one
                const Eigen::MatrixXcd& first = star_p ? ins_q : ins;
                const Eigen::MatrixXcd& second = star_p ? ins : ins_q;
                d2[i] += (first * second * R).trace() / static_cast<double>(N);
              } else {
                const Eigen::MatrixXcd A1 = c.arc((gp + 1) % c.n, len1, N);
                const Eigen::MatrixXcd A2 = c.arc((gq + 1) % c.n, c.n - len1, N);
                d2[i] += (ins * A1 * ins_q * A2).trace() / static_cast<double>(N);
              }
            }
          }
        }
        // assemble the second derivative of the product of traces
        Complex total = 0.0;
        for (std::size_t i = 0; i < W; ++i) {
          Complex restprod = 1.0;
          for (std::size_t k2 = 0; k2 < W; ++k2)
            if (k2 != i) restprod *= base_value[k2];
          total += d2[i] * restprod;
        }
        for (std::size_t i = 0; i < W; ++i)
          for (std::size_t k2 = i + 1; k2 < W; ++k2) {
            Complex restprod = 1.0;
            for (std::size_t k3 = 0; k3 < W; ++k3)
              if (k3 != i && k3 != k2) restprod *= base_value[k3];
            total += 2.0 * d1[i] * d1[k2] * restprod;
          }
        brute += coeff * scale * tj * total;
      }
    }
  }
  res.brute_half_laplacian = brute;
  return res;
}

}  // namespace glfluct
