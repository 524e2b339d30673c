#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "glfluct/covariance.hpp"
#include "glfluct/intertwine.hpp"
#include "glfluct/rng.hpp"

namespace glfluct {

struct SimConfig {
  int N = 8;
  RSParams rs;
  TimeVector T = TimeVector({1.0});
  int steps_per_unit_time = 200;
  int samples = 100;
  enum class Scheme { multiplicative_exp, euler_maruyama } scheme = Scheme::multiplicative_exp;
  std::uint64_t seed = 1;

  int n_indices() const { return T.size(); }
  void validate() const;
};

struct PathDataset {
  SimConfig config;
  // tuples[sample][j-1] = B_j(t_j)
  std::vector<std::vector<Eigen::MatrixXcd>> tuples;
  std::vector<std::string> warnings;

  PathDataset prefix(int samples) const;  // first `samples` paths
};

// GUE-type Hermitian increment scaled so E[tr(X^2)] = dt.
Eigen::MatrixXcd sample_gue(int N, double dt, Rng& rng);
// dW = sqrt(r) i X + sqrt(s) Y with independent X, Y.
Eigen::MatrixXcd sample_increment(int N, RSParams rs, double dt, Rng& rng);

PathDataset simulate_paths(const SimConfig& config);

// Common-random-number pair for the dt-halving check: the fine dataset uses
// 2x steps; the coarse one consumes pairwise sums of the same increments.
// fine_samples < 0 simulates the fine dataset at config.samples; a smaller
// count gives a cheaper coupled-shift estimate over the shared prefix.
std::pair<PathDataset, PathDataset> simulate_paths_halving(const SimConfig& config,
                                                           int fine_samples = -1);

// Flat binary persistence.  Header: magic "GLBM", u32 version, u32 N, u32 |J|,
// u64 samples, |J| doubles (times); body: per sample, per index, row-major
// complex doubles, little-endian.
void save_dataset(const PathDataset& ds, const std::string& path);
PathDataset load_dataset(const std::string& path);

// ---------------------------------------------------------------------------
// Estimation

struct MeanStat {
  std::string poly;
  Complex est = 0.0;
  double se = 0.0;       // combined (re,im) standard error, >= 0
  Complex pred = 0.0;    // finite-N heat-semigroup mean
  double z = 0.0;        // |est - pred| / se
  bool degenerate = false;  // constant polynomial: zero variance
};

struct CovStat {
  int i = 0, j = 0;
  bool pseudo = false;     // false: E[X_i conj(X_j)]; true: E[X_i X_j]
  Complex est = 0.0;
  double se = 0.0;
  Complex pred_finite = 0.0;  // exact_fluctuation_moment at the dataset's N
  Complex pred_limit = 0.0;   // sigma_T
  double z = 0.0;             // against pred_finite
};

struct FluctuationReport {
  int N = 0;
  int samples = 0;
  int batches = 0;
  std::vector<MeanStat> means;
  std::vector<CovStat> covs;
};

struct EstimateOptions {
  int batches = 20;
  bool with_predictions = true;
  double tol = 1e-9;       // sigma quadrature tolerance
  double exp_tol = 1e-10;  // semigroup tolerance
};

FluctuationReport estimate(const PathDataset& ds, const std::vector<TracePoly>& Ps,
                           const std::vector<std::string>& names, const EstimateOptions& opt = {});

// Monte Carlo estimate (with batch-means stderr) of a mixed fluctuation moment
// E[prod_i X_{P_i}]; used for the odd-moment and Wick checks.
MeanStat estimate_fluctuation_moment(const PathDataset& ds, const std::vector<TracePoly>& Ps,
                                     int batches = 20);

// ---------------------------------------------------------------------------
// Convergence-rate study (Theorem-level O(1/N) check, k = |Ps|)

struct RateStudy {
  std::vector<int> Ns;
  std::vector<double> diffs;   // |exact moment(N) - Wick limit|
  Complex limit = 0.0;
  double slope = 0.0;          // log-log least squares
  double slope_stderr = 0.0;
  bool converged = false;      // all differences below tolerance
};

RateStudy rate_study(const std::vector<int>& Ns, RSParams rs, const TimeVector& T,
                     const std::vector<TracePoly>& Ps, const SigmaOptions& opt = {},
                     double negligible = 1e-8);

// ---------------------------------------------------------------------------
// Reports

void write_report_csv(const FluctuationReport& report, std::ostream& out);
std::string report_json(const FluctuationReport& report);

}  // namespace glfluct
