#pragma once

#include <vector>

namespace glfluct {

// Gauss-Legendre nodes and weights on [0, 1]; computed by Newton iteration on
// the Legendre recurrence and cached per n.
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;
};

const GaussLegendre& gauss_legendre(int n);

}  // namespace glfluct
