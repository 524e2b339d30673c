import json
import math

import pytest

import glfluct


def test_parse_roundtrip():
    p = glfluct.parse("tr(X1)^2 - 0.5*tr(X1 X1)", 1)
    assert p.degree() == 2
    back = glfluct.parse(str(p), 1)
    assert back == p


def test_parse_rejects_out_of_range_index():
    with pytest.raises(Exception):
        glfluct.parse("tr(X2)", 1)


def test_heat_expectation_unitary_mean():
    p = glfluct.parse("tr(X1)", 1)
    for n in (0, 8, 64):
        v = glfluct.heat_expectation(p, 1.0, 0.0, [1.0], N=n)
        assert abs(v - math.exp(-0.5)) < 1e-9


def test_sigma_anchors():
    x = glfluct.parse("tr(X1)", 1)
    xs = glfluct.parse("tr(X1*)", 1)
    d = glfluct.sigma_direct(x, xs, 1.0, 0.0, [1.0])
    assert abs(d["value"] - (1.0 - math.exp(-1.0))) < 1e-8
    f = glfluct.sigma_free(x, xs, 0.5, 0.5, [1.0])
    assert abs(f["value"] - (math.exp(1.0) - 1.0)) < 1e-8
    c = glfluct.sigma_closed_poly([0.0, 1.0], [0.0, 1.0], "mixed", 1.0, 0.0, 1.0)
    assert abs(c["value"] - (1.0 - math.exp(-1.0))) < 1e-8


def test_wick_and_exact_moments():
    x = glfluct.parse("tr(X1)", 1)
    xs = glfluct.parse("tr(X1*)", 1)
    assert glfluct.wick_moment([x, x, xs], 1.0, 0.0, [1.0]) == 0
    w2 = glfluct.wick_moment([x, xs], 1.0, 0.0, [1.0])
    e2 = glfluct.exact_fluctuation_moment([x, xs], 1.0, 0.0, [1.0], 64)
    assert abs(w2 - e2) < 1e-2


def test_expand_increments():
    p = glfluct.parse("tr(X2)", 2)
    q, times = glfluct.expand_increments(p, [0.5, 1.25])
    assert str(q) == "tr(X1 X2)"
    assert times == pytest.approx([0.5, 0.75])


def test_simulate_and_estimate_smoke():
    out = glfluct.simulate_and_estimate(
        N=8, r=0.5, s=0.5, times=[1.0], steps=40, samples=80, seed=7, polys=["tr(X1)"]
    )
    rep = json.loads(out)
    assert rep["N"] == 8
    assert rep["samples"] == 80
    assert len(rep["means"]) == 1
    assert rep["means"][0]["z"] < 6.0
