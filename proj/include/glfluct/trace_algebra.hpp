#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace glfluct {

using Complex = std::complex<double>;

// A letter is a pair (index, star) with index in the declared index set
// {1..n_indices}.  Letters are packed into one byte: code = 2*(index-1)+star.
// 0xFF is reserved as the word terminator inside monomial keys.
using LetterCode = unsigned char;

constexpr LetterCode kWordSep = 0xFF;
constexpr int kMaxIndex = 120;

inline LetterCode make_letter(int index, bool star) {
  return static_cast<LetterCode>(2 * (index - 1) + (star ? 1 : 0));
}
inline int letter_index(LetterCode c) { return static_cast<int>(c / 2) + 1; }
inline bool letter_star(LetterCode c) { return (c & 1) != 0; }
inline LetterCode letter_flip_star(LetterCode c) { return c ^ 1; }

// A word is a nonempty string of letter codes, read cyclically.  Canonical
// form is the lexicographically least rotation.
using Word = std::string;

Word canonical_rotation(const Word& w);
bool is_canonical(const Word& w);

// Conjugation of a single word: reverse the letter order and flip every star,
// then canonicalize (tr(AB)^* = tr(B^*A^*)).
Word conjugate_word(const Word& w);

// A monomial is a multiset of words; stored flattened as the sorted words each
// followed by kWordSep.  The empty key is the unit monomial.
using MonKey = std::string;

MonKey mono_from_words(std::vector<Word> words);
std::vector<Word> mono_words(const MonKey& m);
int mono_degree(const MonKey& m);
int mono_word_count(const MonKey& m);
// Monomial with one word removed / one word inserted (keeps sorted layout).
MonKey mono_erase_word(const MonKey& m, const Word& w);
MonKey mono_insert_word(const MonKey& m, const Word& w);
MonKey mono_mul(const MonKey& a, const MonKey& b);

// Element of the commutative algebra P(J): complex linear combination of
// monomials in the cyclic-word variables.  No zero coefficients are stored.
class TracePoly {
 public:
  using TermMap = std::unordered_map<MonKey, Complex>;

  TracePoly() = default;
  static TracePoly constant(Complex c);
  static TracePoly from_word(const Word& w, Complex c = 1.0);
  static TracePoly from_term(const MonKey& m, Complex c);

  const TermMap& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  int degree() const;           // max monomial degree, 0 for constants and 0
  int max_index() const;        // largest letter index used (0 if constant)
  std::size_t term_count() const { return terms_.size(); }

  void add_term(const MonKey& m, Complex c);

  TracePoly& operator+=(const TracePoly& o);
  TracePoly& operator-=(const TracePoly& o);
  TracePoly& operator*=(Complex c);
  friend TracePoly operator+(TracePoly a, const TracePoly& b) { return a += b; }
  friend TracePoly operator-(TracePoly a, const TracePoly& b) { return a -= b; }
  friend TracePoly operator*(TracePoly a, Complex c) { return a *= c; }
  friend TracePoly operator*(Complex c, TracePoly a) { return a *= c; }
  TracePoly operator*(const TracePoly& o) const;

  bool operator==(const TracePoly& o) const;

  // Coefficient-wise max-abs distance; used by exact identity tests.
  double max_coeff_distance(const TracePoly& o) const;

  TracePoly conjugate() const;

  // Evaluation on a tuple of equal-size square matrices indexed by J
  // (matrices[j-1] is A_j); tr is the normalized trace.
  Complex evaluate(const std::vector<Eigen::MatrixXcd>& matrices) const;
  Complex evaluate_at_one() const;  // every word variable -> 1

  std::vector<MonKey> sorted_monomials() const;  // (degree, key) order

 private:
  TermMap terms_;
};

// Evaluation of a single cyclic word on a matrix tuple (normalized trace).
Complex evaluate_word(const Word& w, const std::vector<Eigen::MatrixXcd>& matrices);

// Rewrites P over indices {1..n} (index k standing for the process at time
// t_k) into a polynomial in independent multiplicative increments:
// (k,1) -> (1,1)(2,1)...(k,1) and (k,*) -> (k,*)...(1,*).  Returns the
// substituted polynomial and the increment durations (t1, t2-t1, ...).
struct IncrementExpansion {
  TracePoly poly;
  std::vector<double> increment_times;
};
IncrementExpansion expand_increments(const TracePoly& p, const std::vector<double>& times);

}  // namespace glfluct
