#include "glfluct/matrix_lab.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "glfluct/parallel.hpp"
#include "glfluct/parser.hpp"

namespace glfluct {

void SimConfig::validate() const {
  if (N < 1) throw std::invalid_argument("SimConfig: N >= 1 required");
  if (steps_per_unit_time < 1) throw std::invalid_argument("SimConfig: steps_per_unit_time >= 1");
  if (samples < 1) throw std::invalid_argument("SimConfig: samples >= 1");
  if (T.size() < 1) throw std::invalid_argument("SimConfig: at least one index required");
  for (double t : T.t)
    if (!(t >= 0.0) || !std::isfinite(t)) throw std::invalid_argument("SimConfig: times must be finite, >= 0");
}

PathDataset PathDataset::prefix(int samples) const {
  if (samples > static_cast<int>(tuples.size()))
    throw std::invalid_argument("PathDataset::prefix: not enough samples");
  PathDataset out;
  out.config = config;
  out.config.samples = samples;
  out.tuples.assign(tuples.begin(), tuples.begin() + samples);
  return out;
}

namespace {

// Accumulates coeff * (GUE draw) into w without temporaries.
void add_scaled_gue(Eigen::MatrixXcd& w, int N, double dt, Complex coeff, Rng& rng) {
  const double diag_sd = std::sqrt(dt / N);
  const double off_sd = std::sqrt(dt / (2.0 * N));
  for (int i = 0; i < N; ++i) {
    w(i, i) += coeff * (diag_sd * rng.next_gaussian());
    for (int j = i + 1; j < N; ++j) {
      const Complex z(off_sd * rng.next_gaussian(), off_sd * rng.next_gaussian());
      w(i, j) += coeff * z;
      w(j, i) += coeff * std::conj(z);
    }
  }
}

void sample_increment_into(Eigen::MatrixXcd& w, int N, RSParams rs, double dt, Rng& rng) {
  w.setZero();
  // zero-coefficient factors draw nothing (halves the work at (1,0))
  if (rs.r != 0.0) add_scaled_gue(w, N, dt, Complex(0.0, std::sqrt(rs.r)), rng);
  if (rs.s != 0.0) add_scaled_gue(w, N, dt, Complex(std::sqrt(rs.s), 0.0), rng);
}

}  // namespace

Eigen::MatrixXcd sample_gue(int N, double dt, Rng& rng) {
  Eigen::MatrixXcd x = Eigen::MatrixXcd::Zero(N, N);
  add_scaled_gue(x, N, dt, Complex(1.0, 0.0), rng);
  return x;
}

Eigen::MatrixXcd sample_increment(int N, RSParams rs, double dt, Rng& rng) {
  Eigen::MatrixXcd w(N, N);
  sample_increment_into(w, N, rs, dt, rng);
  return w;
}

namespace {

// Workspace for the geometric step; reused across steps of one path.
struct StepWorkspace {
  Eigen::MatrixXcd a2, a3, a4, t1, t2, bnext;
  explicit StepWorkspace(int N)
      : a2(N, N), a3(N, N), a4(N, N), t1(N, N), t2(N, N), bnext(N, N) {}
};

// B <- B * exp(dW), with exp evaluated by a degree-12 Taylor polynomial in
// Paterson-Stockmeyer form (six N^3 products, no solves).  Step norms are
// ~sqrt((r+s) dt) << 1; at degree 12 the truncation error sits far below
// rounding, so skew-Hermitian increments at (1,0) map to unitary factors up
// to machine precision.  Scaling-squaring guards rare large norms.
void step_multiplicative(Eigen::MatrixXcd& B, Eigen::MatrixXcd& dW, StepWorkspace& ws) {
  const int N = static_cast<int>(dW.rows());
  // spectral norm estimate (power iteration on A^*A); the 1-norm of a dense
  // Gaussian increment overshoots by ~4x and would force spurious squarings
  double norm2 = 0.0;
  {
    Eigen::VectorXcd v = Eigen::VectorXcd::Ones(N) / std::sqrt(double(N));
    for (int it = 0; it < 6; ++it) {
      Eigen::VectorXcd w = dW.adjoint() * (dW * v);
      norm2 = std::sqrt(w.norm());
      if (norm2 == 0.0) break;
      v = w / w.norm();
    }
    norm2 *= 1.2;
  }
  int squarings = 0;
  double scale = 1.0;
  while (norm2 * scale > 0.35 && squarings < 20) {
    scale *= 0.5;
    ++squarings;
  }
  if (scale != 1.0) dW *= scale;
  const Eigen::MatrixXcd& A = dW;
  ws.a2.noalias() = A * A;
  ws.a3.noalias() = ws.a2 * A;
  ws.a4.noalias() = ws.a2 * ws.a2;
  const auto I = Eigen::MatrixXcd::Identity(N, N);
  // T12 = C0 + A4 (C1 + A4 (C2 + A4/12!)) with degree-3 chunks Ck
  ws.t1 = (1.0 / 40320.0) * I + (1.0 / 362880.0) * A + (1.0 / 3628800.0) * ws.a2 +
          (1.0 / 39916800.0) * ws.a3 + (1.0 / 479001600.0) * ws.a4;
  ws.t2.noalias() = ws.a4 * ws.t1;
  ws.t2 += (1.0 / 24.0) * I + (1.0 / 120.0) * A + (1.0 / 720.0) * ws.a2 + (1.0 / 5040.0) * ws.a3;
  ws.t1.noalias() = ws.a4 * ws.t2;
  ws.t1 += I + A + 0.5 * ws.a2 + (1.0 / 6.0) * ws.a3;
  for (int k = 0; k < squarings; ++k) {
    ws.t2.noalias() = ws.t1 * ws.t1;
    ws.t1.swap(ws.t2);
  }
  ws.bnext.noalias() = B * ws.t1;
  B.swap(ws.bnext);
}

void step_euler(Eigen::MatrixXcd& B, const Eigen::MatrixXcd& dW, RSParams rs, double dt,
                StepWorkspace& ws) {
  const int N = static_cast<int>(dW.rows());
  ws.t1 = dW;
  ws.t1.diagonal().array() += 1.0 - 0.5 * (rs.r - rs.s) * dt;
  ws.bnext.noalias() = B * ws.t1;
  B.swap(ws.bnext);
}

int steps_for(const SimConfig& c, double t) {
  if (t == 0.0) return 0;
  return std::max(1, static_cast<int>(std::ceil(c.steps_per_unit_time * t)));
}

// Simulates one (sample, component) path to its final time; increments are
// drawn from substreams keyed by (seed, sample, j, step) so that results do
// not depend on scheduling.  step_stride = 2 consumes fine increments pairwise
// (the common-random-number coarse path of the halving check).
Eigen::MatrixXcd run_path(const SimConfig& c, std::uint64_t sample, int j, int steps,
                          int step_stride, std::string* warning) {
  const double tj = c.T.at(j);
  Eigen::MatrixXcd B = Eigen::MatrixXcd::Identity(c.N, c.N);
  if (steps == 0) return B;
  const int coarse_steps = steps / step_stride;
  const double dt_fine = tj / steps;
  StepWorkspace ws(c.N);
  Eigen::MatrixXcd dW(c.N, c.N);
  for (int k = 0; k < coarse_steps; ++k) {
    dW.setZero();
    for (int sub = 0; sub < step_stride; ++sub) {
      Rng rng(c.seed, sample, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(k * step_stride + sub));
      if (c.rs.r != 0.0) add_scaled_gue(dW, c.N, dt_fine, Complex(0.0, std::sqrt(c.rs.r)), rng);
      if (c.rs.s != 0.0) add_scaled_gue(dW, c.N, dt_fine, Complex(std::sqrt(c.rs.s), 0.0), rng);
    }
    if (c.scheme == SimConfig::Scheme::multiplicative_exp)
      step_multiplicative(B, dW, ws);
    else
      step_euler(B, dW, c.rs, dt_fine * step_stride, ws);
    if (!B.allFinite())
      throw std::runtime_error("simulate_paths: non-finite entries at sample " +
                               std::to_string(sample) + ", index " + std::to_string(j) +
                               ", step " + std::to_string(k));
  }
  if (warning && c.scheme == SimConfig::Scheme::euler_maruyama) {
    const auto lu = B.partialPivLu();
    const double absdet = std::abs(lu.determinant());
    if (!(absdet > 0.0))
      *warning = "euler_maruyama: singular matrix at sample " + std::to_string(sample) +
                 ", index " + std::to_string(j);
  }
  return B;
}

PathDataset simulate_with_stride(const SimConfig& config, int fine_factor, int step_stride) {
  config.validate();
  PathDataset ds;
  ds.config = config;
  ds.tuples.resize(static_cast<std::size_t>(config.samples));
  std::vector<std::string> warnings(static_cast<std::size_t>(config.samples));
  parallel_for(static_cast<std::size_t>(config.samples), [&](std::size_t sample) {
    auto& tuple = ds.tuples[sample];
    tuple.resize(static_cast<std::size_t>(config.T.size()));
    std::string warn;
    for (int j = 1; j <= config.T.size(); ++j) {
      const int fine_steps = steps_for(config, config.T.at(j)) * fine_factor;
      tuple[static_cast<std::size_t>(j - 1)] =
          run_path(config, sample, j, fine_steps, step_stride, warn.empty() ? &warn : nullptr);

    }
    warnings[sample] = warn;
  });
  for (auto& w : warnings)
    if (!w.empty()) ds.warnings.push_back(std::move(w));
  return ds;
}

}  // namespace

PathDataset simulate_paths(const SimConfig& config) { return simulate_with_stride(config, 1, 1); }

std::pair<PathDataset, PathDataset> simulate_paths_halving(const SimConfig& config,
                                                            int fine_samples) {
  PathDataset coarse = simulate_with_stride(config, 2, 2);
  SimConfig fine_cfg = config;
  if (fine_samples > 0) fine_cfg.samples = std::min(fine_samples, config.samples);
  PathDataset fine = simulate_with_stride(fine_cfg, 2, 1);
  fine.config.steps_per_unit_time = 2 * config.steps_per_unit_time;
  return {std::move(coarse), std::move(fine)};
}

// ---------------------------------------------------------------------------
// Binary persistence

namespace {

template <class T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void get(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void save_dataset(const PathDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  out.write("GLBM", 4);
  const std::uint32_t version = 1;
  const std::uint32_t N = static_cast<std::uint32_t>(ds.config.N);
  const std::uint32_t nJ = static_cast<std::uint32_t>(ds.config.T.size());
  const std::uint64_t samples = ds.tuples.size();
  put(out, version);
  put(out, N);
  put(out, nJ);
  put(out, samples);
  for (double t : ds.config.T.t) put(out, t);
  for (const auto& tuple : ds.tuples)
    for (const auto& m : tuple)
      for (int r = 0; r < ds.config.N; ++r)
        for (int c = 0; c < ds.config.N; ++c) {
          put(out, m(r, c).real());
          put(out, m(r, c).imag());
        }
  if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

PathDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "GLBM", 4) != 0)
    throw std::runtime_error("load_dataset: bad magic in " + path);
  std::uint32_t version = 0, N = 0, nJ = 0;
  std::uint64_t samples = 0;
  get(in, version);
  if (version != 1) throw std::runtime_error("load_dataset: unsupported version");
  get(in, N);
  get(in, nJ);
  get(in, samples);
  PathDataset ds;
  ds.config.N = static_cast<int>(N);
  ds.config.samples = static_cast<int>(samples);
  std::vector<double> times(nJ);
  for (auto& t : times) get(in, t);
  ds.config.T = TimeVector(std::move(times));
  ds.tuples.resize(samples);
  for (auto& tuple : ds.tuples) {
    tuple.resize(nJ);
    for (auto& m : tuple) {
      m.resize(N, N);
      for (std::uint32_t r = 0; r < N; ++r)
        for (std::uint32_t c = 0; c < N; ++c) {
          double re = 0.0, im = 0.0;
          get(in, re);
          get(in, im);
          m(r, c) = Complex(re, im);
        }
    }
  }
  if (!in) throw std::runtime_error("load_dataset: truncated file " + path);
  return ds;
}

// ---------------------------------------------------------------------------
// Estimation

namespace {

struct BatchStat {
  Complex mean;
  double se;
};

// batch-means standard error of the mean of a complex series
BatchStat batch_stat(const std::vector<Complex>& xs, int batches) {
  const int S = static_cast<int>(xs.size());
  Complex mean = 0.0;
  for (const Complex& x : xs) mean += x;
  mean /= static_cast<double>(S);
  const int nb = std::min(batches, S);
  const int bs = S / nb;
  double var_re = 0.0, var_im = 0.0;
  int used = 0;
  for (int b = 0; b < nb; ++b) {
    const int lo = b * bs;
    const int hi = (b == nb - 1) ? S : lo + bs;
    Complex bm = 0.0;
    for (int i = lo; i < hi; ++i) bm += xs[static_cast<std::size_t>(i)];
    bm /= static_cast<double>(hi - lo);
    var_re += (bm.real() - mean.real()) * (bm.real() - mean.real());
    var_im += (bm.imag() - mean.imag()) * (bm.imag() - mean.imag());
    ++used;
  }
  if (used < 2) return {mean, 0.0};
  var_re /= (used - 1);
  var_im /= (used - 1);
  const double se = std::sqrt((var_re + var_im) / used);
  return {mean, se};
}

std::vector<std::vector<Complex>> evaluate_all(const PathDataset& ds,
                                               const std::vector<TracePoly>& Ps) {
  const std::size_t S = ds.tuples.size();
  std::vector<std::vector<Complex>> values(Ps.size(), std::vector<Complex>(S));
  parallel_for(S, [&](std::size_t s) {
    for (std::size_t i = 0; i < Ps.size(); ++i) values[i][s] = Ps[i].evaluate(ds.tuples[s]);
  });
  return values;
}

// z with the denominator floored at the predictor's own numerical precision
// (identically-constant polynomials give estimates and stderr at rounding
// level; comparing dust against dust is meaningless)
double safe_z(Complex est, Complex pred, double se, double pred_tol) {
  const double d = std::abs(est - pred);
  const double denom = std::max(se, pred_tol);
  if (denom > 0.0) return std::min(d / denom, 9e99);  // finite for JSON output
  return d < 1e-12 ? 0.0 : 9e99;
}

}  // namespace

FluctuationReport estimate(const PathDataset& ds, const std::vector<TracePoly>& Ps,
                           const std::vector<std::string>& names, const EstimateOptions& opt) {
  const int S = static_cast<int>(ds.tuples.size());
  if (S < 2) throw std::invalid_argument("estimate: at least two samples required");
  if (S < opt.batches)
    throw std::invalid_argument("estimate: fewer samples than batches");
  if (!names.empty() && names.size() != Ps.size())
    throw std::invalid_argument("estimate: names/polynomial count mismatch");
  for (const auto& p : Ps)
    if (p.max_index() > ds.config.T.size())
      throw std::invalid_argument("estimate: polynomial index outside the dataset's index set");

  FluctuationReport rep;
  rep.N = ds.config.N;
  rep.samples = S;
  rep.batches = opt.batches;

  const auto values = evaluate_all(ds, Ps);
  const double N = static_cast<double>(ds.config.N);
  const double n2 = N * N;

  HeatSemigroup hs(ds.config.rs, ds.config.T, ds.config.N);

  std::vector<Complex> means(Ps.size());
  for (std::size_t i = 0; i < Ps.size(); ++i) {
    const BatchStat st = batch_stat(values[i], opt.batches);
    means[i] = st.mean;
    MeanStat ms;
    ms.poly = names.empty() ? print(Ps[i]) : names[i];
    ms.est = st.mean;
    ms.se = st.se;
    ms.degenerate = Ps[i].degree() == 0;
    if (opt.with_predictions) {
      ms.pred = hs.expectation(Ps[i], opt.exp_tol);
      ms.z = ms.degenerate
                 ? 0.0
                 : safe_z(ms.est, ms.pred, ms.se, opt.exp_tol * (1.0 + std::abs(ms.pred)));
    }
    rep.means.push_back(std::move(ms));
  }

  const SigmaOptions sopt{opt.tol};
  std::vector<Complex> prod(static_cast<std::size_t>(S));
  for (std::size_t i = 0; i < Ps.size(); ++i) {
    for (std::size_t j = i; j < Ps.size(); ++j) {
      for (int pseudo = 0; pseudo < 2; ++pseudo) {
        for (int s = 0; s < S; ++s) {
          const Complex di = values[i][static_cast<std::size_t>(s)] - means[i];
          Complex dj = values[j][static_cast<std::size_t>(s)] - means[j];
          if (!pseudo) dj = std::conj(dj);
          prod[static_cast<std::size_t>(s)] = n2 * di * dj;
        }
        const BatchStat st = batch_stat(prod, opt.batches);
        CovStat cs;
        cs.i = static_cast<int>(i);
        cs.j = static_cast<int>(j);
        cs.pseudo = pseudo != 0;
        cs.est = st.mean * (static_cast<double>(S) / (S - 1));
        cs.se = st.se;
        if (opt.with_predictions) {
          const TracePoly second = pseudo ? Ps[j] : Ps[j].conjugate();
          cs.pred_finite = exact_fluctuation_moment({Ps[i], second}, ds.config.rs, ds.config.T,
                                                    ds.config.N, opt.exp_tol);
          cs.pred_limit = sigma_direct(Ps[i], second, ds.config.rs, ds.config.T, sopt).value;
          cs.z = safe_z(cs.est, cs.pred_finite, cs.se,
                        n2 * opt.exp_tol * (1.0 + std::abs(cs.pred_finite)));
        }
        rep.covs.push_back(std::move(cs));
      }
    }
  }
  return rep;
}

MeanStat estimate_fluctuation_moment(const PathDataset& ds, const std::vector<TracePoly>& Ps,
                                     int batches) {
  const int S = static_cast<int>(ds.tuples.size());
  if (S < batches) throw std::invalid_argument("estimate_fluctuation_moment: too few samples");
  const auto values = evaluate_all(ds, Ps);
  std::vector<Complex> means(Ps.size(), Complex(0.0, 0.0));
  for (std::size_t i = 0; i < Ps.size(); ++i) {
    for (const Complex& v : values[i]) means[i] += v;
    means[i] /= static_cast<double>(S);
  }
  const double N = static_cast<double>(ds.config.N);
  std::vector<Complex> prod(static_cast<std::size_t>(S), Complex(1.0, 0.0));
  for (int s = 0; s < S; ++s)
    for (std::size_t i = 0; i < Ps.size(); ++i)
      prod[static_cast<std::size_t>(s)] *= N * (values[i][static_cast<std::size_t>(s)] - means[i]);
  const BatchStat st = batch_stat(prod, batches);
  MeanStat ms;
  ms.poly = "moment";
  ms.est = st.mean;
  ms.se = st.se;
  return ms;
}

RateStudy rate_study(const std::vector<int>& Ns, RSParams rs, const TimeVector& T,
                     const std::vector<TracePoly>& Ps, const SigmaOptions& opt,
                     double negligible) {
  if (Ns.size() < 3) throw std::invalid_argument("rate_study: at least three N values required");
  RateStudy out;
  out.Ns = Ns;
  out.limit = wick_moment(Ps, rs, T, opt);
  for (int N : Ns)
    out.diffs.push_back(std::abs(exact_fluctuation_moment(Ps, rs, T, N, opt.exp_tol) - out.limit));

  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < Ns.size(); ++i) {
    if (out.diffs[i] > negligible) {
      lx.push_back(std::log(static_cast<double>(Ns[i])));
      ly.push_back(std::log(out.diffs[i]));
    }
  }
  if (lx.size() < 2) {
    out.converged = true;
    return out;
  }
  const double n = static_cast<double>(lx.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sx += lx[i];
    sy += ly[i];
    sxx += lx[i] * lx[i];
    sxy += lx[i] * ly[i];
  }
  const double denom = n * sxx - sx * sx;
  out.slope = (n * sxy - sx * sy) / denom;
  double ss_res = 0.0;
  const double b0 = (sy - out.slope * sx) / n;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double r = ly[i] - (b0 + out.slope * lx[i]);
    ss_res += r * r;
  }
  if (lx.size() > 2)
    out.slope_stderr = std::sqrt(ss_res / (n - 2) / (sxx - sx * sx / n));
  return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void write_report_csv(const FluctuationReport& report, std::ostream& out) {
  out << "kind,poly,i,j,pseudo,re_est,im_est,stderr,re_pred,im_pred,re_pred_limit,im_pred_limit,z\n";
  for (const auto& m : report.means)
    out << "mean," << m.poly << ",,,," << fmt(m.est.real()) << ',' << fmt(m.est.imag()) << ','
        << fmt(m.se) << ',' << fmt(m.pred.real()) << ',' << fmt(m.pred.imag()) << ",,,"
        << fmt(m.z) << '\n';
  for (const auto& c : report.covs)
    out << "cov,," << c.i << ',' << c.j << ',' << (c.pseudo ? 1 : 0) << ',' << fmt(c.est.real())
        << ',' << fmt(c.est.imag()) << ',' << fmt(c.se) << ',' << fmt(c.pred_finite.real()) << ','
        << fmt(c.pred_finite.imag()) << ',' << fmt(c.pred_limit.real()) << ','
        << fmt(c.pred_limit.imag()) << ',' << fmt(c.z) << '\n';
}

std::string report_json(const FluctuationReport& report) {
  std::ostringstream out;
  out << "{\"N\":" << report.N << ",\"samples\":" << report.samples
      << ",\"batches\":" << report.batches << ",\"means\":[";
  for (std::size_t i = 0; i < report.means.size(); ++i) {
    const auto& m = report.means[i];
    if (i) out << ',';
    out << "{\"poly\":\"" << m.poly << "\",\"re_est\":" << fmt(m.est.real())
        << ",\"im_est\":" << fmt(m.est.imag()) << ",\"stderr\":" << fmt(m.se)
        << ",\"re_pred\":" << fmt(m.pred.real()) << ",\"im_pred\":" << fmt(m.pred.imag())
        << ",\"z\":" << fmt(m.z) << "}";
  }
  out << "],\"covariances\":[";
  for (std::size_t i = 0; i < report.covs.size(); ++i) {
    const auto& c = report.covs[i];
    if (i) out << ',';
    out << "{\"i\":" << c.i << ",\"j\":" << c.j << ",\"pseudo\":" << (c.pseudo ? "true" : "false")
        << ",\"re_est\":" << fmt(c.est.real()) << ",\"im_est\":" << fmt(c.est.imag())
        << ",\"stderr\":" << fmt(c.se) << ",\"re_pred\":" << fmt(c.pred_finite.real())
        << ",\"im_pred\":" << fmt(c.pred_finite.imag())
        << ",\"re_pred_limit\":" << fmt(c.pred_limit.real())
        << ",\"im_pred_limit\":" << fmt(c.pred_limit.imag()) << ",\"z\":" << fmt(c.z) << "}";
  }
  out << "]}";
  return out.str();
}

}  // namespace glfluct
