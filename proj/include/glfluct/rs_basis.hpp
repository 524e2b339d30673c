#pragma once

#include <vector>

#include <Eigen/Dense>

#include "glfluct/intertwine.hpp"

namespace glfluct {

// Orthonormal basis of the Hermitian matrices under <A,B> = Tr(AB): the N
// diagonal units, then for each i<j the pair (E_ij+E_ji)/sqrt(2) and
// i(E_ij-E_ji)/sqrt(2).
std::vector<Eigen::MatrixXcd> hermitian_basis(int N);

// Orthonormal basis of M_N for the (r,s) inner product
// <A,B> = (1/2)(1/s+1/r) N Re Tr(AB*) + (1/2)(1/s-1/r) N Re Tr(AB):
// { sqrt(r/N) i H_k } followed by { sqrt(s/N) H_k }, 2N^2 elements.
std::vector<Eigen::MatrixXcd> build_rs_basis(int N, RSParams rs);

// Gram matrix of a family under the (r,s) inner product (identity for the
// basis above, up to rounding).
Eigen::MatrixXd rs_gram(const std::vector<Eigen::MatrixXcd>& xs, int N, RSParams rs);

}  // namespace glfluct
