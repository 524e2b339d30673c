// Command line front end: prediction, simulation, comparison, validation, and
// expression parsing for (r,s)-Brownian-motion trace-polynomial fluctuations.

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "glfluct/covariance.hpp"
#include "glfluct/matrix_lab.hpp"
#include "glfluct/parser.hpp"
#include "glfluct/quadrature.hpp"
#include "glfluct/rs_basis.hpp"
#include "glfluct/trace_algebra.hpp"

namespace {

using namespace glfluct;
using nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

struct RunConfig {
  double r = 1.0;
  double s = 0.0;
  int J = 1;
  std::vector<double> times;          // one per index, default 1.0
  std::vector<std::string> polys;
  int N = 64;
  std::vector<int> N_list;
  int samples = 2000;
  int steps = 200;
  std::string scheme = "multiplicative_exp";
  std::uint64_t seed = 20240601;
  int dmax = 8;
  double tol = 1e-9;
  std::string out_dir;
  std::string format = "csv";
  std::string convention = "sde";
};

std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  ordered_json j = ordered_json::parse(in);
  if (j.contains("r")) cfg.r = j["r"].get<double>();
  if (j.contains("s")) cfg.s = j["s"].get<double>();
  if (j.contains("J")) cfg.J = j["J"].get<int>();
  if (j.contains("times")) cfg.times = j["times"].get<std::vector<double>>();
  if (j.contains("polys")) cfg.polys = j["polys"].get<std::vector<std::string>>();
  if (j.contains("N")) cfg.N = j["N"].get<int>();
  if (j.contains("N_list")) cfg.N_list = j["N_list"].get<std::vector<int>>();
  if (j.contains("samples")) cfg.samples = j["samples"].get<int>();
  if (j.contains("steps_per_unit_time")) cfg.steps = j["steps_per_unit_time"].get<int>();
  if (j.contains("scheme")) cfg.scheme = j["scheme"].get<std::string>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("dmax")) cfg.dmax = j["dmax"].get<int>();
  if (j.contains("tol")) cfg.tol = j["tol"].get<double>();
  if (j.contains("out")) cfg.out_dir = j["out"].get<std::string>();
  if (j.contains("format")) cfg.format = j["format"].get<std::string>();
}

struct Parsed {
  RSParams rs;
  TimeVector T;
  std::vector<TracePoly> polys;
  std::vector<std::string> names;
  Convention conv = Convention::sde_half;
};

Parsed realize(const RunConfig& cfg, bool need_polys = true) {
  Parsed p;
  if (!(cfg.r > 0.0) || cfg.s < 0.0)
    throw std::runtime_error("require r > 0 and s >= 0 (s = 0 is the unitary boundary)");
  p.rs = RSParams{cfg.r, cfg.s};
  std::vector<double> times = cfg.times;
  if (times.empty()) times.assign(static_cast<std::size_t>(cfg.J), 1.0);
  if (static_cast<int>(times.size()) != cfg.J)
    throw std::runtime_error("need one time per index (got " + std::to_string(times.size()) +
                             " for J=" + std::to_string(cfg.J) + ")");
  p.T = TimeVector(times);
  if (need_polys && cfg.polys.empty()) throw std::runtime_error("no test functions (use --poly)");
  for (const auto& text : cfg.polys) {
    p.polys.push_back(parse(text, cfg.J));
    p.names.push_back(text);
  }
  for (const auto& poly : p.polys) {
    if (poly.degree() > cfg.dmax)
      throw std::runtime_error("polynomial degree exceeds dmax");
  }
  p.conv = cfg.convention == "full_delta" ? Convention::full_delta : Convention::sde_half;
  return p;
}

std::ofstream open_out(const RunConfig& cfg, const std::string& name) {
  std::filesystem::path dir = cfg.out_dir.empty() ? "." : cfg.out_dir;
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / name);
  if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  return out;
}

ordered_json config_meta(const RunConfig& cfg) {
  ordered_json meta;
  meta["r"] = cfg.r;
  meta["s"] = cfg.s;
  meta["J"] = cfg.J;
  meta["times"] = cfg.times.empty() ? std::vector<double>(static_cast<std::size_t>(cfg.J), 1.0) : cfg.times;
  meta["polys"] = cfg.polys;
  meta["N"] = cfg.N;
  meta["samples"] = cfg.samples;
  meta["steps_per_unit_time"] = cfg.steps;
  meta["scheme"] = cfg.scheme;
  meta["seed"] = cfg.seed;
  meta["dmax"] = cfg.dmax;
  meta["tol"] = cfg.tol;
  return meta;
}

// One-variable power-polynomial detection: P = sum_n c_n tr(X^n) (or its
// conjugate) qualifies for the closed-form route.
std::optional<std::vector<Complex>> power_coefficients(const TracePoly& p, bool conjugated) {
  std::vector<Complex> coeffs;
  for (const auto& [m, c] : p.terms()) {
    if (m.empty()) continue;  // constants drop out of sigma
    const std::vector<Word> ws = mono_words(m);
    if (ws.size() != 1) return std::nullopt;
    const Word& w = ws[0];
    for (char ch : w) {
      const LetterCode lc = static_cast<LetterCode>(ch);
      if (letter_index(lc) != 1) return std::nullopt;
      if (letter_star(lc) != conjugated) return std::nullopt;
    }
    const std::size_t n = w.size();
    if (coeffs.size() < n + 1) coeffs.resize(n + 1, Complex(0.0));
    coeffs[n] += conjugated ? std::conj(c) : c;
  }
  return coeffs;
}

int cmd_parse(const RunConfig& cfg, const std::vector<double>& expand_times) {
  if (cfg.polys.empty()) throw std::runtime_error("no test functions (use --poly)");
  for (const auto& text : cfg.polys) {
    const TracePoly p = parse(text, cfg.J);
    std::cout << "input:     " << text << "\n";
    std::cout << "canonical: " << print(p) << "\n";
    std::cout << "degree:    " << p.degree() << "\n";
    if (!expand_times.empty()) {
      const auto [q, inc] = expand_increments(p, expand_times);
      std::cout << "increment form: " << print(q) << "\n";
      std::cout << "increment times:";
      for (double t : inc) std::cout << ' ' << fmt(t);
      std::cout << "\n";
    }
  }
  return kExitOk;
}

int cmd_predict(const RunConfig& cfg, const std::vector<double>& t_grid) {
  const Parsed p = realize(cfg);
  const std::size_t k = p.polys.size();
  {
    std::vector<int> degs;
    for (const auto& poly : p.polys) degs.push_back(poly.degree());
    std::sort(degs.rbegin(), degs.rend());
    const int need = degs[0] + (degs.size() > 1 ? degs[1] : degs[0]);
    if (need > cfg.dmax)
      throw std::invalid_argument("covariance needs dmax >= sum of the two largest degrees (" +
                                  std::to_string(need) + ")");
  }
  SigmaOptions opt;
  opt.tol = cfg.tol;

  const GaussianField field = build_gaussian_field(p.polys, p.rs, p.T, opt);

  ordered_json out;
  out["config"] = config_meta(cfg);
  out["entries"] = ordered_json::array();
  bool methods_agree = true;
  std::ostringstream csv;
  csv << "i,j,kind,re_direct,im_direct,re_free,im_free,direct_free_diff,re_closed,im_closed,"
         "re_finiteN,im_finiteN\n";

  std::vector<int> Ns = cfg.N_list.empty() ? std::vector<int>{cfg.N} : cfg.N_list;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      for (int pseudo = 0; pseudo < 2; ++pseudo) {
        const TracePoly second = pseudo ? p.polys[j] : p.polys[j].conjugate();
        const SigmaResult direct = sigma_direct(p.polys[i], second, p.rs, p.T, opt);
        const SigmaResult freev = sigma_free(p.polys[i], second, p.rs, p.T, opt);
        const double diff = std::abs(direct.value - freev.value);
        methods_agree = methods_agree && diff <= 100.0 * cfg.tol;
        ordered_json e;
        e["i"] = i;
        e["j"] = j;
        e["kind"] = pseudo ? "pseudo" : "covariance";
        e["direct"] = ordered_json::parse(sigma_json(direct));
        e["free"] = ordered_json::parse(sigma_json(freev));
        e["direct_free_diff"] = diff;
        std::string closed_re = "", closed_im = "";
        if (cfg.J == 1 && p.T.at(1) > 0.0) {
          const auto pi = power_coefficients(p.polys[i], false);
          const auto qj = power_coefficients(pseudo ? p.polys[j] : p.polys[j], false);
          // mixed closed form handles sigma(tr p, (tr q)*)
          if (pi && qj) {
            SigmaResult closed;
            if (!pseudo)
              closed = sigma_closed_poly(*pi, *qj, ClosedVariant::mixed, p.rs, p.T.at(1), opt);
            else
              closed = sigma_closed_poly(*pi, *qj, ClosedVariant::plain, p.rs, p.T.at(1), opt);
            e["closed"] = ordered_json::parse(sigma_json(closed));
            methods_agree = methods_agree && std::abs(closed.value - direct.value) <= 100.0 * cfg.tol;
            closed_re = fmt(closed.value.real());
            closed_im = fmt(closed.value.imag());
          }
        }
        ordered_json finiteN = ordered_json::array();
        std::string fN_re = "", fN_im = "";
        for (int N : Ns) {
          const Complex v =
              exact_fluctuation_moment({p.polys[i], second}, p.rs, p.T, N, 1e-10);
          finiteN.push_back({{"N", N}, {"re", v.real()}, {"im", v.imag()}});
          fN_re = fmt(v.real());
          fN_im = fmt(v.imag());
        }
        e["finite_N"] = finiteN;
        out["entries"].push_back(e);
        csv << i << ',' << j << ',' << (pseudo ? "pseudo" : "covariance") << ','
            << fmt(direct.value.real()) << ',' << fmt(direct.value.imag()) << ','
            << fmt(freev.value.real()) << ',' << fmt(freev.value.imag()) << ',' << fmt(diff) << ','
            << closed_re << ',' << closed_im << ',' << fN_re << ',' << fN_im << '\n';
      }
    }
  }
  out["field"] = ordered_json::parse(field_json(field));

  if (cfg.format == "json") {
    auto f = open_out(cfg, "sigma.json");
    f << out.dump(2) << "\n";
  } else {
    auto f = open_out(cfg, "sigma.csv");
    f << csv.str();
  }

  // tidy curves for external plotting
  if (!t_grid.empty()) {
    auto f = open_out(cfg, "sigma_vs_T.csv");
    f << "T,i,re_sigma,im_sigma\n";
    for (double tval : t_grid) {
      std::vector<double> times(static_cast<std::size_t>(cfg.J), tval);
      for (std::size_t i = 0; i < k; ++i) {
        const Complex v =
            sigma_direct(p.polys[i], p.polys[i].conjugate(), p.rs, TimeVector(times), opt).value;
        f << fmt(tval) << ',' << i << ',' << fmt(v.real()) << ',' << fmt(v.imag()) << '\n';
      }
    }
  }
  if (!cfg.N_list.empty()) {
    auto f = open_out(cfg, "error_vs_N.csv");
    f << "N,i,j,kind,abs_diff_vs_limit\n";
    for (int N : cfg.N_list) {
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j)
          for (int pseudo = 0; pseudo < 2; ++pseudo) {
            const TracePoly second = pseudo ? p.polys[j] : p.polys[j].conjugate();
            const Complex limit = sigma_direct(p.polys[i], second, p.rs, p.T, opt).value;
            const Complex vN = exact_fluctuation_moment({p.polys[i], second}, p.rs, p.T, N, 1e-10);
            f << N << ',' << i << ',' << j << ',' << (pseudo ? "pseudo" : "covariance") << ','
              << fmt(std::abs(vN - limit)) << '\n';
          }
    }
  }
  std::cout << "sigma matrix written (" << k << " polynomials, methods "
            << (methods_agree ? "agree" : "DISAGREE") << ")\n";
  return methods_agree ? kExitOk : kExitNumerical;
}

int cmd_simulate(const RunConfig& cfg) {
  const Parsed p = realize(cfg);
  SimConfig sim;
  sim.N = cfg.N;
  sim.rs = p.rs;
  sim.T = p.T;
  sim.steps_per_unit_time = cfg.steps;
  sim.samples = cfg.samples;
  sim.seed = cfg.seed;
  sim.scheme = cfg.scheme == "euler_maruyama" ? SimConfig::Scheme::euler_maruyama
                                              : SimConfig::Scheme::multiplicative_exp;
  const PathDataset ds = simulate_paths(sim);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    save_dataset(ds, (std::filesystem::path(cfg.out_dir) / "paths.glbm").string());
  }
  EstimateOptions eopt;
  eopt.tol = cfg.tol;
  const FluctuationReport rep = estimate(ds, p.polys, p.names, eopt);
  if (cfg.format == "json") {
    auto f = open_out(cfg, "simulate.json");
    ordered_json out;
    out["config"] = config_meta(cfg);
    out["report"] = ordered_json::parse(report_json(rep));
    f << out.dump(2) << "\n";
  } else {
    auto f = open_out(cfg, "simulate.csv");
    write_report_csv(rep, f);
  }
  std::cout << "simulated " << cfg.samples << " paths at N=" << cfg.N << "\n";
  return kExitOk;
}

int cmd_compare(const RunConfig& cfg, bool corrupt_sigma) {
  const Parsed p = realize(cfg);
  SimConfig sim;
  sim.N = cfg.N;
  sim.rs = p.rs;
  sim.T = p.T;
  sim.steps_per_unit_time = cfg.steps;
  sim.samples = cfg.samples;
  sim.seed = cfg.seed;
  sim.scheme = cfg.scheme == "euler_maruyama" ? SimConfig::Scheme::euler_maruyama
                                              : SimConfig::Scheme::multiplicative_exp;
  const PathDataset ds = simulate_paths(sim);
  EstimateOptions eopt;
  eopt.tol = cfg.tol;
  FluctuationReport rep = estimate(ds, p.polys, p.names, eopt);

  SigmaOptions opt;
  opt.tol = cfg.tol;
  bool ok = true;
  std::string failing;

  // method agreement direct vs free on every sigma entry
  for (auto& cs : rep.covs) {
    const TracePoly second =
        cs.pseudo ? p.polys[static_cast<std::size_t>(cs.j)]
                  : p.polys[static_cast<std::size_t>(cs.j)].conjugate();
    const Complex freev =
        sigma_free(p.polys[static_cast<std::size_t>(cs.i)], second, p.rs, p.T, opt).value;
    if (corrupt_sigma) cs.pred_limit += 1.0;  // negative-control hook
    if (std::abs(freev - cs.pred_limit) > 100.0 * cfg.tol) {
      ok = false;
      failing = "sigma methods disagree at (" + std::to_string(cs.i) + "," +
                std::to_string(cs.j) + (cs.pseudo ? ",pseudo)" : ",cov)");
    }
  }
  // z gates
  for (const auto& m : rep.means)
    if (m.z > 4.0) {
      ok = false;
      failing = "mean z=" + fmt(m.z) + " for " + m.poly;
    }
  for (const auto& cs : rep.covs)
    if (cs.z > 4.0) {
      ok = false;
      failing = "cov z=" + fmt(cs.z) + " at (" + std::to_string(cs.i) + "," +
                std::to_string(cs.j) + ")";
    }
  // odd-moment (k=3) Wick check on the first polynomial
  if (!p.polys.empty() && p.polys[0].degree() > 0) {
    const MeanStat third = estimate_fluctuation_moment(ds, {p.polys[0], p.polys[0], p.polys[0]});
    const double z3 = third.se > 0.0 ? std::abs(third.est) / third.se : 0.0;
    if (z3 > 4.0) {
      ok = false;
      failing = "third moment z=" + fmt(z3);
    }
  }

  if (cfg.format == "json") {
    auto f = open_out(cfg, "compare.json");
    ordered_json out;
    out["config"] = config_meta(cfg);
    out["report"] = ordered_json::parse(report_json(rep));
    out["pass"] = ok;
    f << out.dump(2) << "\n";
  } else {
    auto f = open_out(cfg, "compare.csv");
    write_report_csv(rep, f);
  }
  if (!ok) {
    std::cerr << "compare: FAILED (" << failing << ")\n";
    return kExitNumerical;
  }
  std::cout << "compare: all gates passed\n";
  return kExitOk;
}

int cmd_validate(const RunConfig& cfg, bool quick) {
  const Convention conv = cfg.convention == "full_delta" ? Convention::full_delta : Convention::sde_half;
  bool all_ok = true;
  auto report = [&](const std::string& name, double residual, double tolerance) {
    const bool ok = residual <= tolerance;
    all_ok = all_ok && ok;
    std::cout << (ok ? "PASS  " : "FAIL  ") << name << "  residual=" << fmt(residual)
              << "  tol=" << fmt(tolerance) << "\n";
  };
  Rng rng(cfg.seed);
  const std::vector<RSParams> params = {{1.0, 0.0}, {0.5, 0.5}, {2.0, 0.3}};

  // magic formulas
  {
    double worst = 0.0;
    const std::vector<int> Ns = quick ? std::vector<int>{2, 4} : std::vector<int>{2, 3, 4, 5, 6, 7, 8};
    const int pairs = quick ? 10 : 100;
    for (RSParams rs : params) {
      for (int N : Ns) {
        const auto basis = build_rs_basis(N, rs);
        for (int trial = 0; trial < pairs; ++trial) {
          Eigen::MatrixXcd A(N, N), B(N, N);
          for (int a = 0; a < N; ++a)
            for (int b = 0; b < N; ++b) {
              A(a, b) = Complex(rng.next_gaussian(), rng.next_gaussian());
              B(a, b) = Complex(rng.next_gaussian(), rng.next_gaussian());
            }
          Complex s_plain = 0.0, s_mixed = 0.0;
          Eigen::MatrixXcd m_plain = Eigen::MatrixXcd::Zero(N, N);
          Eigen::MatrixXcd m_mixed = Eigen::MatrixXcd::Zero(N, N);
          for (const auto& xi : basis) {
            s_plain += (xi * A).trace() / double(N) * ((xi * B).trace() / double(N));
            s_mixed += (xi.adjoint() * A).trace() / double(N) * ((xi * B).trace() / double(N));
            m_plain += xi * A * xi;
            m_mixed += xi.adjoint() * A * xi;
          }
          const Complex trAB = (A * B).trace() / double(N);
          const Complex trA = A.trace() / double(N);
          worst = std::max(worst, std::abs(s_plain - (rs.s - rs.r) / (double(N) * N) * trAB));
          worst = std::max(worst, std::abs(s_mixed - (rs.s + rs.r) / (double(N) * N) * trAB));
          worst = std::max(worst,
                           (m_plain - (rs.s - rs.r) * trA * Eigen::MatrixXcd::Identity(N, N))
                               .cwiseAbs()
                               .maxCoeff());
          worst = std::max(worst,
                           (m_mixed - (rs.s + rs.r) * trA * Eigen::MatrixXcd::Identity(N, N))
                               .cwiseAbs()
                               .maxCoeff());
        }
      }
    }
    report("magic formulas", worst, 1e-12);
  }

  // intertwining oracle (this is where the unhalved convention fails)
  {
    double worst = 0.0;
    const TimeVector T({0.7, 1.3});
    const int dmax = quick ? 3 : 4;
    const FilteredBasis fb = build_basis(2, dmax);
    const std::vector<int> Ns = quick ? std::vector<int>{2, 3} : std::vector<int>{2, 3, 4};
    for (RSParams rs : params) {
      for (int N : Ns) {
        std::vector<Eigen::MatrixXcd> g;
        for (int j = 0; j < 2; ++j) {
          Eigen::MatrixXcd m(N, N);
          for (int a = 0; a < N; ++a)
            for (int b = 0; b < N; ++b) m(a, b) = 0.6 * Complex(rng.next_gaussian(), rng.next_gaussian());
          g.push_back(m);
        }
        for (std::size_t idx = 0; idx < fb.monomials.size(); idx += (quick ? 7 : 1)) {
          const TracePoly p = TracePoly::from_term(fb.monomials[idx], 1.0);
          const auto res = laplacian_parts_oracle(p, g, rs, T, conv);
          const Complex combined = res.d_part + res.l_part / Complex(double(N) * N);
          const double rel = std::abs(res.brute_half_laplacian - combined) /
                             std::max(1.0, std::abs(res.brute_half_laplacian));
          worst = std::max(worst, rel);
        }
      }
    }
    report("intertwining oracle", worst, 1e-10);
  }

  // operator laws
  {
    double worst = 0.0;
    const TimeVector T({0.9, 0.5});
    for (int trial = 0; trial < (quick ? 6 : 20); ++trial) {
      TracePoly p, q, r;
      {
        // small random polynomials over two indices
        auto rand_poly = [&](int dmax) {
          TracePoly out;
          const int terms = 1 + static_cast<int>(rng.next_u64() % 2);
          for (int t = 0; t < terms; ++t) {
            Word w;
            const int len = 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(dmax));
            for (int i = 0; i < len; ++i)
              w.push_back(static_cast<char>(
                  make_letter(1 + static_cast<int>(rng.next_u64() % 2), (rng.next_u64() & 1) != 0)));
            out.add_term(mono_from_words({canonical_rotation(w)}),
                         Complex(rng.next_unit() - 0.5, rng.next_unit() - 0.5));
          }
          return out;
        };
        p = rand_poly(3);
        q = rand_poly(3);
        r = rand_poly(2);
      }
      const RSParams rs = params[static_cast<std::size_t>(trial % 3)];
      worst = std::max(worst, (apply_D(rs, T, p * q, conv) - apply_D(rs, T, p, conv) * q -
                               p * apply_D(rs, T, q, conv))
                                  .max_coeff_distance(TracePoly{}));
      TracePoly second = apply_L(rs, T, p * q * r, conv);
      second -= apply_L(rs, T, p * q, conv) * r;
      second -= p * apply_L(rs, T, q * r, conv);
      second -= apply_L(rs, T, p * r, conv) * q;
      second += apply_L(rs, T, p, conv) * q * r;
      second += p * apply_L(rs, T, q, conv) * r;
      second += p * q * apply_L(rs, T, r, conv);
      worst = std::max(worst, second.max_coeff_distance(TracePoly{}));
      TracePoly gamma_id = gamma_op(rs, T, p, q, conv);
      gamma_id -= (apply_L(rs, T, p * q, conv) - apply_L(rs, T, p, conv) * q -
                   p * apply_L(rs, T, q, conv)) *
                  Complex(0.5);
      worst = std::max(worst, gamma_id.max_coeff_distance(TracePoly{}));
    }
    report("first/second-order laws and Gamma identity", worst, 1e-11);
  }

  // Duhamel identity on a dmax <= 4 basis (dense)
  {
    const TimeVector T({1.0});
    const RSParams rs = params[2];
    const int N = 2;
    auto fb = std::make_shared<FilteredBasis>(build_basis(1, 4));
    const OperatorMatrix opd = operator_matrix(OperatorMatrix::Kind::D, rs, T, fb, 0, conv);
    const OperatorMatrix opl = operator_matrix(OperatorMatrix::Kind::L, rs, T, fb, 0, conv);
    const Eigen::MatrixXcd& D = opd.entries;
    const Eigen::MatrixXcd& L = opl.entries;
    const double n2 = double(N) * N;
    const Eigen::MatrixXcd A = D + L / n2;
    // plain scaled Taylor keeps this check independent of the flow engine
    auto dense_exp = [](const Eigen::MatrixXcd& M) {
      const int scal = std::max(0, static_cast<int>(std::ceil(std::log2(std::max(1.0, M.cwiseAbs().rowwise().sum().maxCoeff())))) + 1);
      Eigen::MatrixXcd B = M / std::pow(2.0, scal);
      Eigen::MatrixXcd term = Eigen::MatrixXcd::Identity(M.rows(), M.cols());
      Eigen::MatrixXcd acc = term;
      for (int k = 1; k <= 40; ++k) {
        term = (term * B) / double(k);
        acc += term;
        if (term.cwiseAbs().maxCoeff() < 1e-17 * acc.cwiseAbs().maxCoeff()) break;
      }
      for (int k = 0; k < scal; ++k) acc = acc * acc;
      return acc;
    };
    const Eigen::MatrixXcd lhs = dense_exp(A) - dense_exp(D);
    const GaussLegendre& gl = gauss_legendre(48);
    Eigen::MatrixXcd integral = Eigen::MatrixXcd::Zero(lhs.rows(), lhs.cols());
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
      const double t = gl.nodes[i];
      integral += gl.weights[i] * (dense_exp(t * A) * L * dense_exp((1.0 - t) * D));
    }
    integral /= n2;
    report("Duhamel identity", (lhs - integral).cwiseAbs().maxCoeff(), 1e-9);
  }

  // three-way sigma agreement
  {
    double worst = 0.0;
    SigmaOptions opt;
    opt.tol = cfg.tol;
    const TimeVector T({1.0});
    for (int trial = 0; trial < (quick ? 4 : 12); ++trial) {
      const RSParams rs = params[static_cast<std::size_t>(trial % 3)];
      TracePoly p, q;
      auto rand_tr = [&](int maxlen) {
        Word w;
        const int len = 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(maxlen));
        for (int i = 0; i < len; ++i)
          w.push_back(static_cast<char>(make_letter(1, (rng.next_u64() & 1) != 0)));
        return TracePoly::from_word(canonical_rotation(w),
                                    Complex(rng.next_unit() - 0.5, rng.next_unit() - 0.5));
      };
      p = rand_tr(3);
      q = rand_tr(3);
      // conv deliberately not passed: sigma always uses the sde normalization
      const Complex d = sigma_direct(p, q, rs, T, opt).value;
      const Complex f = sigma_free(p, q, rs, T, opt).value;
      worst = std::max(worst, std::abs(d - f));
    }
    report("three-way sigma agreement (direct vs free)", worst, 1e-7);
    const std::vector<Complex> X = {0.0, 1.0};
    const double anchor =
        std::abs(sigma_closed_poly(X, X, ClosedVariant::mixed, RSParams{1.0, 0.0}, 1.0, opt).value -
                 (1.0 - std::exp(-1.0)));
    report("closed-form anchor 1-e^{-1}", anchor, 1e-8);
  }

  if (!all_ok) {
    std::cerr << "validate: FAILED\n";
    return kExitNumerical;
  }
  std::cout << "validate: all invariants hold\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trace-polynomial fluctuations of (r,s)-Brownian motions on GL_N"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;
  std::vector<double> expand_times;
  bool corrupt_sigma = false;
  bool quick = false;

  // Config file values fill in every field the user did not override by flag.
  std::vector<std::pair<std::string, CLI::Option*>> tracked;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    tracked.emplace_back("r", sub->add_option("--r", cfg.r, "parameter r > 0"));
    tracked.emplace_back("s", sub->add_option("--s", cfg.s, "parameter s >= 0"));
    tracked.emplace_back("J", sub->add_option("--J", cfg.J, "number of independent Brownian motions"));
    tracked.emplace_back("T", sub->add_option("--T", cfg.times, "process times, one per index")->delimiter(','));
    tracked.emplace_back("poly", sub->add_option("--poly", cfg.polys, "trace polynomial (repeatable)"));
    tracked.emplace_back("N", sub->add_option("--N", cfg.N, "matrix dimension"));
    tracked.emplace_back("N_list", sub->add_option("--N-list", cfg.N_list, "dimensions for finite-N tables")->delimiter(','));
    tracked.emplace_back("samples", sub->add_option("--samples", cfg.samples, "Monte Carlo samples"));
    tracked.emplace_back("steps", sub->add_option("--steps", cfg.steps, "steps per unit time"));
    tracked.emplace_back("scheme", sub->add_option("--scheme", cfg.scheme, "multiplicative_exp | euler_maruyama")
        ->check(CLI::IsMember({"multiplicative_exp", "euler_maruyama"})));
    tracked.emplace_back("seed", sub->add_option("--seed", cfg.seed, "RNG seed"));
    tracked.emplace_back("dmax", sub->add_option("--dmax", cfg.dmax, "degree cap"));
    tracked.emplace_back("tol", sub->add_option("--tol", cfg.tol, "quadrature tolerance"));
    tracked.emplace_back("out", sub->add_option("--out", cfg.out_dir, "output directory"));
    tracked.emplace_back("format", sub->add_option("--format", cfg.format, "csv | json")
        ->check(CLI::IsMember({"csv", "json"})));
    tracked.emplace_back("convention", sub->add_option("--convention", cfg.convention, "sde | full_delta (negative control)")
        ->check(CLI::IsMember({"sde", "full_delta"})));
  };

  CLI::App* c_parse = app.add_subcommand("parse", "parse and canonicalize expressions");
  add_common(c_parse);
  c_parse->add_option("--expand-times", expand_times,
                      "rewrite single-process multi-time polynomials over increments")
      ->delimiter(',');
  CLI::App* c_predict = app.add_subcommand("predict", "limit covariance by all methods");
  add_common(c_predict);
  std::vector<double> t_grid;
  c_predict->add_option("--T-grid", t_grid, "emit sigma_T vs T curve at these times")
      ->delimiter(',');
  CLI::App* c_simulate = app.add_subcommand("simulate", "run the matrix SDE and estimate");
  add_common(c_simulate);
  CLI::App* c_compare = app.add_subcommand("compare", "MC vs exact finite-N vs limit, with gates");
  add_common(c_compare);
  c_compare->add_flag("--corrupt-sigma", corrupt_sigma, "negative control: corrupt a prediction");
  CLI::App* c_validate = app.add_subcommand("validate", "run the invariant suite");
  add_common(c_validate);
  c_validate->add_flag("--quick", quick, "smaller sizes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) {
      RunConfig file_cfg = cfg;
      load_config_file(file_cfg, config_path);
      auto flag_given = [&](const std::string& name) {
        for (const auto& [n, o] : tracked)
          if (n == name && o->count() > 0) return true;
        return false;
      };
      if (!flag_given("r")) cfg.r = file_cfg.r;
      if (!flag_given("s")) cfg.s = file_cfg.s;
      if (!flag_given("J")) cfg.J = file_cfg.J;
      if (!flag_given("T")) cfg.times = file_cfg.times;
      if (!flag_given("poly")) cfg.polys = file_cfg.polys;
      if (!flag_given("N")) cfg.N = file_cfg.N;
      if (!flag_given("N_list")) cfg.N_list = file_cfg.N_list;
      if (!flag_given("samples")) cfg.samples = file_cfg.samples;
      if (!flag_given("steps")) cfg.steps = file_cfg.steps;
      if (!flag_given("scheme")) cfg.scheme = file_cfg.scheme;
      if (!flag_given("seed")) cfg.seed = file_cfg.seed;
      if (!flag_given("dmax")) cfg.dmax = file_cfg.dmax;
      if (!flag_given("tol")) cfg.tol = file_cfg.tol;
      if (!flag_given("out")) cfg.out_dir = file_cfg.out_dir;
      if (!flag_given("format")) cfg.format = file_cfg.format;
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (app.got_subcommand(c_parse)) return cmd_parse(cfg, expand_times);
    if (app.got_subcommand(c_predict)) return cmd_predict(cfg, t_grid);
    if (app.got_subcommand(c_simulate)) return cmd_simulate(cfg);
    if (app.got_subcommand(c_compare)) return cmd_compare(cfg, corrupt_sigma);
    if (app.got_subcommand(c_validate)) return cmd_validate(cfg, quick);
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitConfig;
}
