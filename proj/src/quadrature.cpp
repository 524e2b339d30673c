#include "glfluct/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace glfluct {

namespace {

GaussLegendre compute(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n >= 1 required");
  GaussLegendre gl;
  gl.nodes.resize(static_cast<std::size_t>(n));
  gl.weights.resize(static_cast<std::size_t>(n));
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p1 = 1.0, p2 = 0.0;
      for (int k = 0; k < n; ++k) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * k + 1.0) * z * p2 - k * p3) / (k + 1);
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) < 1e-15) break;
    }
    // map [-1,1] -> [0,1]
    gl.nodes[static_cast<std::size_t>(i)] = 0.5 * (1.0 - z);
    gl.nodes[static_cast<std::size_t>(n - 1 - i)] = 0.5 * (1.0 + z);
    const double w = 1.0 / ((1.0 - z * z) * pp * pp);
    gl.weights[static_cast<std::size_t>(i)] = w;
    gl.weights[static_cast<std::size_t>(n - 1 - i)] = w;
  }
  return gl;
}

}  // namespace

const GaussLegendre& gauss_legendre(int n) {
  static std::map<int, GaussLegendre> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, compute(n)).first;
  return it->second;
}

}  // namespace glfluct
