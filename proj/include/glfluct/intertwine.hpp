#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include "glfluct/trace_algebra.hpp"

namespace glfluct {

struct RSParams {
  double r = 1.0;
  double s = 0.0;  // r,s > 0; the unitary boundary (1,0) is admitted
};

// Per-index process times t_j >= 0, j in {1..size}.
struct TimeVector {
  std::vector<double> t;
  TimeVector() = default;
  explicit TimeVector(std::vector<double> v) : t(std::move(v)) {}
  static TimeVector uniform(int n, double value) {
    return TimeVector(std::vector<double>(static_cast<std::size_t>(n), value));
  }
  double at(int j) const { return t.at(static_cast<std::size_t>(j - 1)); }
  int size() const { return static_cast<int>(t.size()); }
};

// Generator normalization.  sde_half defines D, L as the graded parts of
// (1/2)(T.Delta), matching the SDE dB = B dW - (1/2)(r-s)B dt so that
// E tr U(t) = e^{-t/2} at (1,0).  full_delta (the literal T.Delta) exists only
// as the validate negative control.
enum class Convention { sde_half, full_delta };
inline double convention_scale(Convention c) { return c == Convention::sde_half ? 0.5 : 1.0; }

// First-order part: derivation on P(J); on a single word it splits the cyclic
// word at pairs of insertion gaps of a common index.
TracePoly apply_D(RSParams rs, const TimeVector& T, const TracePoly& P,
                  Convention conv = Convention::sde_half);

// Second-order part: kills constants and single words; on products it pairs
// distinct trace factors through the carre du champ.
TracePoly apply_L(RSParams rs, const TimeVector& T, const TracePoly& P,
                  Convention conv = Convention::sde_half);

// Carre du champ Gamma(P,Q) = (1/2)(L(PQ) - L(P)Q - P L(Q)); symmetric
// bilinear, Leibniz in each argument, merges one word of P with one of Q.
TracePoly gamma_op(RSParams rs, const TimeVector& T, const TracePoly& P, const TracePoly& Q,
                   Convention conv = Convention::sde_half);

// Word-level rules (exposed for the covariance module and tests).
TracePoly d_single_word(const Word& w, RSParams rs, const TimeVector& T, double scale);
TracePoly gamma_words(const Word& a, const Word& b, RSParams rs, const TimeVector& T,
                      double scale);

// 0-based positions of index-j letters in w.
void occurrences_of(const Word& w, int j, std::vector<int>& out);

// ---------------------------------------------------------------------------
// Degree-filtered basis

struct FilteredBasis {
  int n_indices = 0;
  int dmax = 0;
  std::vector<MonKey> monomials;            // sorted by (degree, key)
  std::unordered_map<MonKey, int> index;    // key -> position
};

class BasisCapExceeded : public std::runtime_error {
 public:
  explicit BasisCapExceeded(std::size_t cap)
      : std::runtime_error("basis dimension exceeds cap " + std::to_string(cap)) {}
};

// Canonical cyclic words (necklaces) over the 2*n_indices letter alphabet,
// lengths 1..maxlen, in lexicographic order.
std::vector<Word> enumerate_necklaces(int n_indices, int maxlen);

FilteredBasis build_basis(int n_indices, int dmax, std::size_t cap = 200000);

struct OperatorMatrix {
  enum class Kind { D, L, D_plus_L_over_N2 };
  Kind kind = Kind::D;
  int N = 0;  // only for D_plus_L_over_N2
  std::shared_ptr<const FilteredBasis> basis;
  Eigen::MatrixXcd entries;  // column c = image of basis monomial c
};

OperatorMatrix operator_matrix(OperatorMatrix::Kind kind, RSParams rs, const TimeVector& T,
                               std::shared_ptr<const FilteredBasis> basis, int N = 0,
                               Convention conv = Convention::sde_half);

// Sparse triplet text dump: one "row col re im" line per nonzero.
void export_operator_triplets(const OperatorMatrix& op, std::ostream& out);

// ---------------------------------------------------------------------------
// Invariant-subspace flow engine.
//
// The full degree filtration is astronomically large for the tripled index
// sets used by the covariance module, but D and L preserve degree, so the
// orbit of any finite polynomial under a fixed set of generators is a finite
// invariant subspace.  FlowSpace materializes that subspace and the restricted
// sparse (real) generator matrices, and provides the exponential action
// exp(sum_g w_g A_g) x via scaled truncated Taylor series.

class FlowSpace {
 public:
  using Generator = std::function<TracePoly(const MonKey&)>;

  explicit FlowSpace(std::vector<Generator> gens, std::size_t cap = 200000);

  void add(const TracePoly& P);
  int dim() const { return static_cast<int>(basis_.size()); }
  const std::vector<MonKey>& basis() const { return basis_; }
  int index_of(const MonKey& m) const;

  Eigen::VectorXcd vector_of(const TracePoly& P) const;
  TracePoly poly_of(const Eigen::VectorXcd& x) const;

  // y = exp(sum_g weights[g] A_g) x, to relative tolerance tol; transpose
  // applies the transposed combination (used for evaluation functionals).
  Eigen::VectorXcd exp_action(const std::vector<double>& weights, const Eigen::VectorXcd& x,
                              double tol, bool transpose = false) const;

  void matvec(const std::vector<double>& weights, const Eigen::VectorXcd& x,
              Eigen::VectorXcd& y, bool transpose = false) const;

 private:
  void close_from(std::size_t first_unprocessed);

  std::vector<Generator> gens_;
  std::size_t cap_;
  std::vector<MonKey> basis_;
  std::unordered_map<MonKey, int> index_;
  // cols_[g][c]: (row, value) entries of generator g's column c
  std::vector<std::vector<std::vector<std::pair<int, double>>>> cols_;
  std::vector<std::vector<double>> row_abs_sum_;  // per generator, per row
};

// Generators for FlowSpace built from the word rules.
FlowSpace::Generator make_d_generator(RSParams rs, const TimeVector& T,
                                      Convention conv = Convention::sde_half);
FlowSpace::Generator make_l_generator(RSParams rs, const TimeVector& T,
                                      Convention conv = Convention::sde_half);

// ---------------------------------------------------------------------------
// Heat semigroup expectation

// E([P]_N(B^N(T))) = [e^{D + L/N^2} P](1); N = 0 requests the N = infinity
// (free) limit [e^{D} P](1).  Reusable across polynomials with one closure.
class HeatSemigroup {
 public:
  HeatSemigroup(RSParams rs, const TimeVector& T, int N, Convention conv = Convention::sde_half,
                std::size_t cap = 200000);
  Complex expectation(const TracePoly& P, double tol = 1e-10);
  int dim() const { return fs_.dim(); }

 private:
  FlowSpace fs_;
  std::vector<double> weights_;
};

Complex heat_expectation(const TracePoly& P, RSParams rs, const TimeVector& T, int N,
                         double tol = 1e-10, Convention conv = Convention::sde_half,
                         std::size_t cap = 200000);

// ---------------------------------------------------------------------------
// Brute-force finite-N Laplacian oracle

struct LaplacianOracleResult {
  Complex brute_half_laplacian;  // (1/2)(T.Delta^N)[P]_N(g), explicit xi-sum
  Complex d_part;                // [apply_D(P)]_N(g)
  Complex l_part;                // [apply_L(P)]_N(g)
};

// Exact directional second derivatives over the explicit (r,s)-orthonormal
// basis; no finite differences.  Cost scales with 2N^2 basis elements, meant
// for N <= 8.
LaplacianOracleResult laplacian_parts_oracle(const TracePoly& P,
                                             const std::vector<Eigen::MatrixXcd>& g, RSParams rs,
                                             const TimeVector& T,
                                             Convention conv = Convention::sde_half);

}  // namespace glfluct
