#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glfluct/intertwine.hpp"

namespace glfluct {

struct SigmaResult {
  Complex value = 0.0;
  enum class Method { direct, free_probability, closed_form } method = Method::direct;
  int quadrature_nodes = 0;
  double est_error = 0.0;  // |last refinement - previous refinement|
  bool converged = true;
  std::string note;  // convention notes (same-type closed forms)
};

struct SigmaOptions {
  double tol = 1e-9;       // quadrature doubling target
  int min_nodes = 16;
  int max_nodes = 512;
  double exp_tol = 1e-11;  // exponential-action relative tolerance
  std::size_t cap = 200000;
};

// sigma_T(P,Q) = 2 * Integral_0^1 [e^{tD} Gamma(e^{(1-t)D}P, e^{(1-t)D}Q)](1) dt,
// Gauss-Legendre with node doubling.
SigmaResult sigma_direct(const TracePoly& P, const TracePoly& Q, RSParams rs, const TimeVector& T,
                         const SigmaOptions& opt = {});

// Tripled index set: index j of J maps to roles b -> j, c -> n+j, d -> 2n+j.
int tripled_index(int j, int role, int n_indices);  // role 0=b, 1=c, 2=d

// Gamma-tilde(P,Q) over J^3: the carre du champ of G -> [P](B G C), [Q](B G D)
// at G = I, as an abstract polynomial in (B, C, D).
TracePoly gamma_tilde(const TracePoly& P, const TracePoly& Q, RSParams rs, const TimeVector& T,
                      Convention conv = Convention::sde_half);

// Collapse a J^3 polynomial back to J by dropping role tags (sets C = D = I's
// role structure; structural check gamma_tilde -> gamma).
TracePoly collapse_roles(const TracePoly& P, int n_indices);

// sigma via three freely independent free multiplicative Brownian motions:
// 2 * Integral_0^1 [Gamma-tilde(P,Q)](b_{tT}, c_{(1-t)T}, d_{(1-t)T}) dt, the
// free moments computed through the N = infinity semigroup on P(J^3).
SigmaResult sigma_free(const TracePoly& P, const TracePoly& Q, RSParams rs, const TimeVector& T,
                       const SigmaOptions& opt = {});

// Closed polynomial forms (single index, one-variable polynomials
// p(X) = sum_n p[n] X^n, constant entries ignored):
//   plain:     sigma_T(tr p, tr q)     prefactor (s-r)
//   mixed:     sigma_T(tr p, (tr q)*)  prefactor (r+s)
//   star_star: sigma_T((tr p)*,(tr q)*) prefactor (s-r)
// Same-type variants use the magic-formula merge sign (+nm), which differs
// from the printed P'Q' form; the result carries a note saying so.
enum class ClosedVariant { plain, mixed, star_star };
SigmaResult sigma_closed_poly(const std::vector<Complex>& p, const std::vector<Complex>& q,
                              ClosedVariant variant, RSParams rs, double T,
                              const SigmaOptions& opt = {});

// Wick pairing sum: E(X_{P_1}...X_{P_k}) limit = sum over pairings of
// products sigma_T(P_i, P_j); zero for odd k.
Complex wick_moment(const std::vector<TracePoly>& Ps, RSParams rs, const TimeVector& T,
                    const SigmaOptions& opt = {});

// Exact finite-N mixed fluctuation moment E[prod_i N([P_i] - E[P_i])] via
// 2^k semigroup expectations of sub-products.
Complex exact_fluctuation_moment(const std::vector<TracePoly>& Ps, RSParams rs,
                                 const TimeVector& T, int N, double tol = 1e-10,
                                 std::size_t cap = 200000);

// ---------------------------------------------------------------------------
// Gaussian fluctuation field

struct GaussianField {
  std::vector<TracePoly> polys;
  Eigen::MatrixXcd C;  // C_ij = sigma_T(P_i, P_j*) = E[xi_i conj(xi_j)]
  Eigen::MatrixXcd R;  // R_ij = sigma_T(P_i, P_j)  = E[xi_i xi_j]
  double min_real_embedding_eigenvalue = 0.0;
};

GaussianField build_gaussian_field(const std::vector<TracePoly>& Ps, RSParams rs,
                                   const TimeVector& T, const SigmaOptions& opt = {});

// Real 2k x 2k covariance of (Re xi, Im xi) assembled from (C, R).
Eigen::MatrixXd real_embedding(const GaussianField& field);

// JSON-shaped reports (keys: method, value_re, value_im, est_error, nodes).
std::string sigma_json(const SigmaResult& r);
std::string field_json(const GaussianField& field);

// Draw n samples of the complex Gaussian vector; PSD defect beyond psd_tol
// signals an upstream sigma inconsistency and throws.
std::vector<Eigen::VectorXcd> sample_gaussian_field(const GaussianField& field, int n,
                                                    std::uint64_t seed, double psd_tol = 1e-8);

}  // namespace glfluct
