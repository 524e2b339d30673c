#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "glfluct/covariance.hpp"
#include "glfluct/matrix_lab.hpp"
#include "glfluct/parser.hpp"

namespace py = pybind11;
using namespace glfluct;

namespace {

TimeVector as_times(const std::vector<double>& t) { return TimeVector(t); }

py::dict sigma_to_dict(const SigmaResult& r) {
  py::dict d;
  d["value"] = r.value;
  d["method"] = r.method == SigmaResult::Method::direct
                    ? "direct"
                    : (r.method == SigmaResult::Method::free_probability ? "free" : "closed");
  d["nodes"] = r.quadrature_nodes;
  d["est_error"] = r.est_error;
  d["converged"] = r.converged;
  d["note"] = r.note;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "trace-polynomial fluctuations of (r,s)-Brownian motions on GL_N";

  py::class_<TracePoly>(m, "TracePoly")
      .def(py::init<>())
      .def_static("constant", &TracePoly::constant)
      .def("degree", &TracePoly::degree)
      .def("conjugate", &TracePoly::conjugate)
      .def("evaluate", &TracePoly::evaluate)
      .def("evaluate_at_one", &TracePoly::evaluate_at_one)
      .def("__add__", [](const TracePoly& a, const TracePoly& b) { return a + b; })
      .def("__sub__", [](const TracePoly& a, const TracePoly& b) { return a - b; })
      .def("__mul__", [](const TracePoly& a, const TracePoly& b) { return a * b; })
      .def("__rmul__", [](const TracePoly& a, Complex c) { return a * c; })
      .def("__eq__", [](const TracePoly& a, const TracePoly& b) { return a == b; })
      .def("__str__", [](const TracePoly& p) { return print(p); })
      .def("__repr__", [](const TracePoly& p) { return "TracePoly(" + print(p) + ")"; });

  m.def("parse", &parse, py::arg("text"), py::arg("n_indices"));
  m.def("to_string", &print, py::arg("poly"));
  m.def(
      "expand_increments",
      [](const TracePoly& p, const std::vector<double>& times) {
        const auto r = expand_increments(p, times);
        return py::make_tuple(r.poly, r.increment_times);
      },
      py::arg("poly"), py::arg("times"));

  m.def(
      "apply_D",
      [](double r, double s, const std::vector<double>& T, const TracePoly& p) {
        return apply_D(RSParams{r, s}, as_times(T), p);
      },
      py::arg("r"), py::arg("s"), py::arg("times"), py::arg("poly"));
  m.def(
      "apply_L",
      [](double r, double s, const std::vector<double>& T, const TracePoly& p) {
        return apply_L(RSParams{r, s}, as_times(T), p);
      },
      py::arg("r"), py::arg("s"), py::arg("times"), py::arg("poly"));
  m.def(
      "gamma",
      [](double r, double s, const std::vector<double>& T, const TracePoly& p, const TracePoly& q) {
        return gamma_op(RSParams{r, s}, as_times(T), p, q);
      },
      py::arg("r"), py::arg("s"), py::arg("times"), py::arg("p"), py::arg("q"));

  m.def(
      "heat_expectation",
      [](const TracePoly& p, double r, double s, const std::vector<double>& T, int N, double tol) {
        return heat_expectation(p, RSParams{r, s}, as_times(T), N, tol);
      },
      py::arg("poly"), py::arg("r"), py::arg("s"), py::arg("times"), py::arg("N") = 0,
      py::arg("tol") = 1e-10, "N = 0 computes the free (N = infinity) limit");

  m.def(
      "sigma_direct",
      [](const TracePoly& p, const TracePoly& q, double r, double s, const std::vector<double>& T,
         double tol) {
        SigmaOptions opt;
        opt.tol = tol;
        return sigma_to_dict(sigma_direct(p, q, RSParams{r, s}, as_times(T), opt));
      },
      py::arg("p"), py::arg("q"), py::arg("r"), py::arg("s"), py::arg("times"),
      py::arg("tol") = 1e-9);
  m.def(
      "sigma_free",
      [](const TracePoly& p, const TracePoly& q, double r, double s, const std::vector<double>& T,
         double tol) {
        SigmaOptions opt;
        opt.tol = tol;
        return sigma_to_dict(sigma_free(p, q, RSParams{r, s}, as_times(T), opt));
      },
      py::arg("p"), py::arg("q"), py::arg("r"), py::arg("s"), py::arg("times"),
      py::arg("tol") = 1e-9);
  m.def(
      "sigma_closed_poly",
      [](const std::vector<Complex>& p, const std::vector<Complex>& q, const std::string& variant,
         double r, double s, double T, double tol) {
        SigmaOptions opt;
        opt.tol = tol;
        ClosedVariant v = variant == "plain"
                              ? ClosedVariant::plain
                              : (variant == "star_star" ? ClosedVariant::star_star
                                                        : ClosedVariant::mixed);
        return sigma_to_dict(sigma_closed_poly(p, q, v, RSParams{r, s}, T, opt));
      },
      py::arg("p"), py::arg("q"), py::arg("variant"), py::arg("r"), py::arg("s"), py::arg("T"),
      py::arg("tol") = 1e-9);

  m.def(
      "wick_moment",
      [](const std::vector<TracePoly>& Ps, double r, double s, const std::vector<double>& T) {
        return wick_moment(Ps, RSParams{r, s}, as_times(T));
      },
      py::arg("polys"), py::arg("r"), py::arg("s"), py::arg("times"));
  m.def(
      "exact_fluctuation_moment",
      [](const std::vector<TracePoly>& Ps, double r, double s, const std::vector<double>& T,
         int N) { return exact_fluctuation_moment(Ps, RSParams{r, s}, as_times(T), N); },
      py::arg("polys"), py::arg("r"), py::arg("s"), py::arg("times"), py::arg("N"));

  m.def(
      "simulate_and_estimate",
      [](int N, double r, double s, const std::vector<double>& T, int steps, int samples,
         std::uint64_t seed, const std::vector<std::string>& polys, const std::string& scheme) {
        SimConfig c;
        c.N = N;
        c.rs = RSParams{r, s};
        c.T = as_times(T);
        c.steps_per_unit_time = steps;
        c.samples = samples;
        c.seed = seed;
        c.scheme = scheme == "euler_maruyama" ? SimConfig::Scheme::euler_maruyama
                                              : SimConfig::Scheme::multiplicative_exp;
        std::vector<TracePoly> ps;
        for (const auto& text : polys) ps.push_back(parse(text, c.T.size()));
        const FluctuationReport rep = estimate(simulate_paths(c), ps, polys);
        return report_json(rep);
      },
      py::arg("N"), py::arg("r"), py::arg("s"), py::arg("times"), py::arg("steps"),
      py::arg("samples"), py::arg("seed"), py::arg("polys"),
      py::arg("scheme") = "multiplicative_exp");

  m.def(
      "sample_gaussian_field",
      [](const std::vector<TracePoly>& Ps, double r, double s, const std::vector<double>& T, int n,
         std::uint64_t seed) {
        const GaussianField f = build_gaussian_field(Ps, RSParams{r, s}, as_times(T));
        return py::make_tuple(f.C, f.R, sample_gaussian_field(f, n, seed));
      },
      py::arg("polys"), py::arg("r"), py::arg("s"), py::arg("times"), py::arg("n"),
      py::arg("seed"));
}
