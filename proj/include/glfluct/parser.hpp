#pragma once

#include <stdexcept>
#include <string>

#include "glfluct/trace_algebra.hpp"

namespace glfluct {

// Raised on malformed input; `position` is the 0-based offset into the text.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::size_t position)
      : std::runtime_error(msg + " at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// Grammar:
//   expr   := term (('+'|'-') term)*
//   term   := factor ('*' factor)*
//   factor := ['-'|'+'] ( number | 'tr' '(' word ')' ['^' int] | '(' expr ')' )
//   word   := atom+          atom := 'X' integer ['*']
// Numbers may carry an 'i' suffix (imaginary part); whitespace insignificant.
TracePoly parse(const std::string& text, int n_indices);

// Canonical printer: monomials sorted by (degree, key), repeated words
// collapsed to powers, shortest round-trip number formatting.  parse(print(P))
// recovers P exactly.
std::string print(const TracePoly& p);

std::string print_word(const Word& w);
std::string print_monomial(const MonKey& m);

}  // namespace glfluct
