#include "glfluct/parser.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>

namespace glfluct {

namespace {

class Cursor {
 public:
  Cursor(const std::string& text, int n_indices) : text_(text), n_(n_indices) {}

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool eof() {
    skip_ws();
    return pos_ >= text_.size();
  }
  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }
  bool accept(char c) {
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c, const char* what) {
    if (!accept(c)) throw ParseError(std::string("expected '") + c + "' (" + what + ")", pos_);
  }
  std::size_t pos() const { return pos_; }

  bool starts_number() {
    char c = peek();
    return std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == 'i';
  }

  Complex parse_number() {
    skip_ws();
    std::size_t start = pos_;
    if (text_[pos_] == 'i') {  // bare imaginary unit
      ++pos_;
      return Complex(0.0, 1.0);
    }
    while (pos_ < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
      ++pos_;
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t mark = pos_;
      ++pos_;
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      } else {
        pos_ = mark;  // 'e' was not an exponent
      }
    }
    double value = 0.0;
    auto res = std::from_chars(text_.data() + start, text_.data() + pos_, value);
    if (res.ec != std::errc() || res.ptr == text_.data() + start)
      throw ParseError("malformed number", start);
    if (pos_ < text_.size() && text_[pos_] == 'i') {
      ++pos_;
      return Complex(0.0, value);
    }
    return Complex(value, 0.0);
  }

  bool accept_tr() {
    skip_ws();
    if (pos_ + 1 < text_.size() && text_[pos_] == 't' && text_[pos_ + 1] == 'r') {
      pos_ += 2;
      return true;
    }
    return false;
  }

  Word parse_word() {
    Word w;
    while (true) {
      skip_ws();
      if (pos_ >= text_.size() || text_[pos_] != 'X') break;
      ++pos_;
      std::size_t istart = pos_;
      long index = 0;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        index = index * 10 + (text_[pos_] - '0');
        ++pos_;
      }
      if (pos_ == istart) throw ParseError("expected index after 'X'", pos_);
      if (index < 1 || index > n_)
        throw ParseError("index X" + std::to_string(index) + " outside declared index set {1.." +
                             std::to_string(n_) + "}",
                         istart);
      bool star = false;
      if (pos_ < text_.size() && text_[pos_] == '*') {
        star = true;
        ++pos_;
      }
      w.push_back(static_cast<char>(make_letter(static_cast<int>(index), star)));
    }
    if (w.empty()) throw ParseError("expected at least one atom in tr(...)", pos_);
    return w;
  }

 private:
  const std::string& text_;
  int n_;
  std::size_t pos_ = 0;
};

TracePoly parse_expr(Cursor& cur);

TracePoly parse_factor(Cursor& cur) {
  double sign = 1.0;
  while (true) {
    if (cur.accept('-'))
      sign = -sign;
    else if (cur.accept('+'))
      ;
    else
      break;
  }
  TracePoly out;
  if (cur.accept_tr()) {
    cur.expect('(', "after tr");
    Word w = cur.parse_word();
    cur.expect(')', "closing tr(...)");
    long power = 1;
    if (cur.accept('^')) {
      if (!std::isdigit(static_cast<unsigned char>(cur.peek())))
        throw ParseError("expected positive integer after '^'", cur.pos());
      power = 0;
      while (std::isdigit(static_cast<unsigned char>(cur.peek()))) {
        power = power * 10 + (cur.peek() - '0');
        cur.accept(cur.peek());
      }
      if (power < 1) throw ParseError("power must be positive", cur.pos());
    }
    std::vector<Word> ws(static_cast<std::size_t>(power), canonical_rotation(w));
    out = TracePoly::from_term(mono_from_words(std::move(ws)), 1.0);
  } else if (cur.accept('(')) {
    out = parse_expr(cur);
    cur.expect(')', "closing parenthesis");
  } else if (cur.starts_number()) {
    out = TracePoly::constant(cur.parse_number());
  } else {
    throw ParseError("expected number, tr(...), or parenthesized expression", cur.pos());
  }
  return out * Complex(sign, 0.0);
}

TracePoly parse_term(Cursor& cur) {
  TracePoly out = parse_factor(cur);
  while (cur.accept('*')) out = out * parse_factor(cur);
  return out;
}

TracePoly parse_expr(Cursor& cur) {
  TracePoly out = parse_term(cur);
  while (true) {
    if (cur.accept('+'))
      out += parse_term(cur);
    else if (cur.accept('-'))
      out -= parse_term(cur);
    else
      break;
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Coefficient suitable for prefixing "*tr(...)"; parenthesized when complex.
std::string fmt_coeff(Complex c) {
  if (c.imag() == 0.0) return fmt_double(c.real());
  if (c.real() == 0.0) return fmt_double(c.imag()) + "i";
  std::string s = "(" + fmt_double(c.real());
  if (c.imag() >= 0.0)
    s += "+" + fmt_double(c.imag()) + "i)";
  else
    s += "-" + fmt_double(-c.imag()) + "i)";
  return s;
}

}  // namespace

TracePoly parse(const std::string& text, int n_indices) {
  Cursor cur(text, n_indices);
  if (cur.eof()) throw ParseError("empty expression", 0);
  TracePoly out = parse_expr(cur);
  if (!cur.eof()) throw ParseError("trailing input", cur.pos());
  return out;
}

std::string print_word(const Word& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const LetterCode c = static_cast<LetterCode>(w[i]);
    if (i) s += ' ';
    s += 'X';
    s += std::to_string(letter_index(c));
    if (letter_star(c)) s += '*';
  }
  return s;
}

std::string print_monomial(const MonKey& m) {
  if (m.empty()) return "1";
  std::vector<Word> ws = mono_words(m);
  std::string s;
  for (std::size_t i = 0; i < ws.size();) {
    std::size_t j = i;
    while (j < ws.size() && ws[j] == ws[i]) ++j;
    if (!s.empty()) s += "*";
    s += "tr(" + print_word(ws[i]) + ")";
    if (j - i > 1) s += "^" + std::to_string(j - i);
    i = j;
  }
  return s;
}

std::string print(const TracePoly& p) {
  if (p.is_zero()) return "0";
  std::string s;
  for (const MonKey& m : p.sorted_monomials()) {
    Complex c = p.terms().at(m);
    std::string piece;
    if (m.empty()) {
      piece = fmt_coeff(c);
    } else if (c == Complex(1.0, 0.0)) {
      piece = print_monomial(m);
    } else if (c == Complex(-1.0, 0.0)) {
      piece = "-" + print_monomial(m);
    } else {
      piece = fmt_coeff(c) + "*" + print_monomial(m);
    }
    if (s.empty()) {
      s = piece;
    } else if (!piece.empty() && piece[0] == '-') {
      s += " - " + piece.substr(1);
    } else {
      s += " + " + piece;
    }
  }
  return s;
}

}  // namespace glfluct
