#include "glfluct/rs_basis.hpp"

#include <cmath>

namespace glfluct {

std::vector<Eigen::MatrixXcd> hermitian_basis(int N) {
  std::vector<Eigen::MatrixXcd> out;
  out.reserve(static_cast<std::size_t>(N) * N);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < N; ++i) {
    Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(N, N);
    h(i, i) = 1.0;
    out.push_back(std::move(h));
  }
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j) {
      Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(N, N);
      h(i, j) = inv_sqrt2;
      h(j, i) = inv_sqrt2;
      out.push_back(std::move(h));
      Eigen::MatrixXcd k = Eigen::MatrixXcd::Zero(N, N);
      k(i, j) = Complex(0.0, inv_sqrt2);
      k(j, i) = Complex(0.0, -inv_sqrt2);
      out.push_back(std::move(k));
    }
  return out;
}

std::vector<Eigen::MatrixXcd> build_rs_basis(int N, RSParams rs) {
  const std::vector<Eigen::MatrixXcd> herm = hermitian_basis(N);
  std::vector<Eigen::MatrixXcd> out;
  out.reserve(2 * herm.size());
  const double cr = std::sqrt(rs.r / N);
  const double cs = std::sqrt(rs.s / N);
  for (const auto& h : herm) out.push_back(Complex(0.0, cr) * h);
  for (const auto& h : herm) out.push_back(cs * h);
  return out;
}

Eigen::MatrixXd rs_gram(const std::vector<Eigen::MatrixXcd>& xs, int N, RSParams rs) {
  const double c_plus = 0.5 * (1.0 / rs.s + 1.0 / rs.r) * N;
  const double c_minus = 0.5 * (1.0 / rs.s - 1.0 / rs.r) * N;
  const std::size_t n = xs.size();
  Eigen::MatrixXd gram(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const Complex tr_adj = (xs[i] * xs[j].adjoint()).trace();
      const Complex tr_plain = (xs[i] * xs[j]).trace();
      gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          c_plus * tr_adj.real() + c_minus * tr_plain.real();
    }
  return gram;
}

}  // namespace glfluct
