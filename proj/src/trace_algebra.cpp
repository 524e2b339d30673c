#include "glfluct/trace_algebra.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace glfluct {

namespace {
constexpr double kDropTol = 0.0;  // exact zero removal only
}

Word canonical_rotation(const Word& w) {
  const std::size_t n = w.size();
  if (n <= 1) return w;
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    // compare rotation i with rotation best
    for (std::size_t k = 0; k < n; ++k) {
      LetterCode a = w[(i + k) % n];
      LetterCode b = w[(best + k) % n];
      if (a != b) {
        if (a < b) best = i;
        break;
      }
    }
  }
  if (best == 0) return w;
  Word out;
  out.reserve(n);
  out.append(w, best, n - best);
  out.append(w, 0, best);
  return out;
}

bool is_canonical(const Word& w) { return canonical_rotation(w) == w; }

Word conjugate_word(const Word& w) {
  Word out(w.rbegin(), w.rend());
  for (auto& c : out) c = letter_flip_star(static_cast<LetterCode>(c));
  return canonical_rotation(out);
}

MonKey mono_from_words(std::vector<Word> words) {
  std::sort(words.begin(), words.end());
  MonKey key;
  std::size_t total = 0;
  for (const auto& w : words) total += w.size() + 1;
  key.reserve(total);
  for (const auto& w : words) {
    key.append(w);
    key.push_back(static_cast<char>(kWordSep));
  }
  return key;
}

std::vector<Word> mono_words(const MonKey& m) {
  std::vector<Word> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (static_cast<LetterCode>(m[i]) == kWordSep) {
      out.emplace_back(m.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

int mono_degree(const MonKey& m) {
  int words = mono_word_count(m);
  return static_cast<int>(m.size()) - words;
}

int mono_word_count(const MonKey& m) {
  return static_cast<int>(std::count(m.begin(), m.end(), static_cast<char>(kWordSep)));
}

MonKey mono_erase_word(const MonKey& m, const Word& w) {
  Word probe = w;
  probe.push_back(static_cast<char>(kWordSep));
  std::size_t start = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (static_cast<LetterCode>(m[i]) == kWordSep) {
      if (m.compare(start, i + 1 - start, probe) == 0) {
        MonKey out = m.substr(0, start);
        out.append(m, i + 1, m.size() - (i + 1));
        return out;
      }
      start = i + 1;
    }
  }
  throw std::logic_error("mono_erase_word: word not present");
}

MonKey mono_insert_word(const MonKey& m, const Word& w) {
  std::vector<Word> ws = mono_words(m);
  ws.push_back(w);
  return mono_from_words(std::move(ws));
}

MonKey mono_mul(const MonKey& a, const MonKey& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  std::vector<Word> ws = mono_words(a);
  std::vector<Word> wb = mono_words(b);
  ws.insert(ws.end(), wb.begin(), wb.end());
  return mono_from_words(std::move(ws));
}

TracePoly TracePoly::constant(Complex c) {
  TracePoly p;
  p.add_term(MonKey{}, c);
  return p;
}

TracePoly TracePoly::from_word(const Word& w, Complex c) {
  TracePoly p;
  p.add_term(mono_from_words({canonical_rotation(w)}), c);
  return p;
}

TracePoly TracePoly::from_term(const MonKey& m, Complex c) {
  TracePoly p;
  p.add_term(m, c);
  return p;
}

int TracePoly::degree() const {
  int d = 0;
  for (const auto& [m, c] : terms_) d = std::max(d, mono_degree(m));
  return d;
}

int TracePoly::max_index() const {
  int idx = 0;
  for (const auto& [m, c] : terms_)
    for (char ch : m)
      if (static_cast<LetterCode>(ch) != kWordSep)
        idx = std::max(idx, letter_index(static_cast<LetterCode>(ch)));
  return idx;
}

void TracePoly::add_term(const MonKey& m, Complex c) {
  if (c == Complex(0.0, 0.0)) return;
  auto [it, inserted] = terms_.try_emplace(m, c);
  if (!inserted) {
    it->second += c;
    if (std::abs(it->second.real()) <= kDropTol && std::abs(it->second.imag()) <= kDropTol)
      terms_.erase(it);
  }
}

TracePoly& TracePoly::operator+=(const TracePoly& o) {
  for (const auto& [m, c] : o.terms_) add_term(m, c);
  return *this;
}

TracePoly& TracePoly::operator-=(const TracePoly& o) {
  for (const auto& [m, c] : o.terms_) add_term(m, -c);
  return *this;
}

TracePoly& TracePoly::operator*=(Complex c) {
  if (c == Complex(0.0, 0.0)) {
    terms_.clear();
    return *this;
  }
  for (auto& [m, v] : terms_) v *= c;
  return *this;
}

TracePoly TracePoly::operator*(const TracePoly& o) const {
  // Contributions to each output monomial are summed in an operand-symmetric
  // order, so PQ and QP agree bit for bit.
  std::unordered_map<MonKey, std::vector<std::pair<MonKey, Complex>>> buckets;
  for (const auto& [ma, ca] : terms_)
    for (const auto& [mb, cb] : o.terms_) {
      const MonKey& lo = std::min(ma, mb);
      const MonKey& hi = std::max(ma, mb);
      buckets[mono_mul(ma, mb)].emplace_back(lo + MonKey(1, '\x00') + hi, ca * cb);
    }
  TracePoly out;
  for (auto& [m, contribs] : buckets) {
    std::sort(contribs.begin(), contribs.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    Complex acc = 0.0;
    for (const auto& [key, v] : contribs) acc += v;
    out.add_term(m, acc);
  }
  return out;
}

bool TracePoly::operator==(const TracePoly& o) const {
  if (terms_.size() != o.terms_.size()) return false;
  for (const auto& [m, c] : terms_) {
    auto it = o.terms_.find(m);
    if (it == o.terms_.end() || it->second != c) return false;
  }
  return true;
}

double TracePoly::max_coeff_distance(const TracePoly& o) const {
  double d = 0.0;
  for (const auto& [m, c] : terms_) {
    auto it = o.terms_.find(m);
    Complex oc = (it == o.terms_.end()) ? Complex(0) : it->second;
    d = std::max(d, std::abs(c - oc));
  }
  for (const auto& [m, c] : o.terms_) {
    if (terms_.find(m) == terms_.end()) d = std::max(d, std::abs(c));
  }
  return d;
}

TracePoly TracePoly::conjugate() const {
  TracePoly out;
  for (const auto& [m, c] : terms_) {
    std::vector<Word> ws = mono_words(m);
    for (auto& w : ws) w = conjugate_word(w);
    out.add_term(mono_from_words(std::move(ws)), std::conj(c));
  }
  return out;
}

Complex evaluate_word(const Word& w, const std::vector<Eigen::MatrixXcd>& matrices) {
  if (w.empty()) return 1.0;
  const auto dim = matrices.at(0).rows();
  Eigen::MatrixXcd acc;
  bool first = true;
  for (char ch : w) {
    const LetterCode c = static_cast<LetterCode>(ch);
    const int j = letter_index(c);
    if (j > static_cast<int>(matrices.size()))
      throw std::out_of_range("evaluate: letter index outside the matrix tuple");
    const Eigen::MatrixXcd& a = matrices[j - 1];
    if (a.rows() != dim || a.cols() != dim)
      throw std::invalid_argument("evaluate: matrices must be square of equal dimension");
    if (first) {
      if (letter_star(c))
        acc = a.adjoint();
      else
        acc = a;
      first = false;
    } else {
      if (letter_star(c))
        acc = acc * a.adjoint();
      else
        acc = acc * a;
    }
  }
  return acc.trace() / static_cast<double>(dim);
}

Complex TracePoly::evaluate(const std::vector<Eigen::MatrixXcd>& matrices) const {
  Complex out = 0.0;
  for (const auto& [m, c] : terms_) {
    Complex prod = c;
    std::size_t start = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (static_cast<LetterCode>(m[i]) == kWordSep) {
        prod *= evaluate_word(m.substr(start, i - start), matrices);
        start = i + 1;
      }
    }
    out += prod;
  }
  return out;
}

Complex TracePoly::evaluate_at_one() const {
  Complex out = 0.0;
  for (const auto& [m, c] : terms_) out += c;
  return out;
}

std::vector<MonKey> TracePoly::sorted_monomials() const {
  std::vector<MonKey> keys;
  keys.reserve(terms_.size());
  for (const auto& [m, c] : terms_) keys.push_back(m);
  std::sort(keys.begin(), keys.end(), [](const MonKey& a, const MonKey& b) {
    int da = mono_degree(a), db = mono_degree(b);
    if (da != db) return da < db;
    return a < b;
  });
  return keys;
}

IncrementExpansion expand_increments(const TracePoly& p, const std::vector<double>& times) {
  for (std::size_t i = 0; i + 1 < times.size(); ++i)
    if (times[i] > times[i + 1]) throw std::invalid_argument("expand_increments: times not sorted");
  if (!times.empty() && times.front() < 0.0)
    throw std::invalid_argument("expand_increments: negative time");

  IncrementExpansion out;
  out.increment_times.resize(times.size());
  for (std::size_t i = 0; i < times.size(); ++i)
    out.increment_times[i] = (i == 0) ? times[0] : times[i] - times[i - 1];

  for (const auto& [m, c] : p.terms()) {
    std::vector<Word> ws = mono_words(m);
    for (auto& w : ws) {
      Word sub;
      for (char ch : w) {
        const LetterCode lc = static_cast<LetterCode>(ch);
        const int k = letter_index(lc);
        if (letter_star(lc)) {
          for (int j = k; j >= 1; --j) sub.push_back(static_cast<char>(make_letter(j, true)));
        } else {
          for (int j = 1; j <= k; ++j) sub.push_back(static_cast<char>(make_letter(j, false)));
        }
      }
      w = canonical_rotation(sub);
    }
    out.poly.add_term(mono_from_words(std::move(ws)), c);
  }
  return out;
}

}  // namespace glfluct
