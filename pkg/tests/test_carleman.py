import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from transinv.carleman import (
    InequalityError,
    LogValue,
    SpaceTimeSamples,
    TrigPolynomial,
    calibrate_constant,
    calibrate_lemma4,
    lemma3_required_constant,
    log_ratio,
    random_h02_ensemble,
    resolution_limit,
    sample_spacetime,
    verify_lemma1,
    verify_lemma3,
    verify_lemma4,
    weighted_log,
    weighted_norm,
)
from transinv.fields import parse_field
from transinv.geometry import build_grid
from transinv.weights import exp_weight_constants, linear_weight


def test_logvalue_arithmetic():
    a, b = LogValue.of(3.0), LogValue.of(-1.0)
    assert (a + b).value() == pytest.approx(2.0)
    assert a.scale(2).value() == pytest.approx(6.0)
    assert log_ratio(LogValue.of(8.0), LogValue.of(2.0)) == pytest.approx(4.0)
    assert LogValue.of(0.0).value() == 0.0


def test_weighted_norm_trivial():
    g = build_grid(0, 1, 16, 1.0, n_steps=4)
    assert weighted_norm(g, np.zeros(g.size), g.cell_centers[:, 0], 3.0, "interior") == 0
    assert weighted_norm(g, np.ones(g.size), 0.0, 7.0, "interior") == pytest.approx(1.0)


def test_weighted_norm_against_adaptive_quadrature():
    exact = quad(lambda x: np.sin(np.pi * x) ** 2 * np.exp(10 * x), 0, 1, epsabs=0, epsrel=1e-13)[0]
    errs = []
    for n in (64, 256):
        g = build_grid(0, 1, n, 1.0, n_steps=2)
        x = g.cell_centers[:, 0]
        errs.append(abs(weighted_norm(g, np.sin(np.pi * x), x, 5.0, "interior") / exact - 1))
    assert errs[1] <= 1e-4
    assert errs[0] / errs[1] > 10


def test_log_and_direct_agree():
    g = build_grid([0, 0], [1, 1], 12, 1.0, n_steps=3)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(g.size)
    phi = rng.uniform(-1, 1, g.size)
    direct = weighted_norm(g, v, phi, 2.5, "interior")
    assert math.exp(weighted_norm(g, v, phi, 2.5, "interior", log=True)) == pytest.approx(direct, rel=1e-12)


def test_log_scale_survives_huge_weights():
    g = build_grid(0, 1, 32, 1.0, n_steps=2)
    x = g.cell_centers[:, 0]
    lv = weighted_log(g, np.ones(g.size), x, 5000.0, "interior")
    assert np.isfinite(lv.log) and lv.log > 700
    with pytest.raises(OverflowError, match="exponent"):
        weighted_log(g, np.ones(g.size), np.full(g.size, np.inf), 1.0, "interior")


def _case_a(n=128, T=1.5):
    g = build_grid(0, 1, n, T, n_steps=int(round(T * n)))
    H = parse_field("1", 1, vector=True)
    lw = linear_weight(g, H, parse_field("0", 1), parse_field("x", 1), T=T)
    return g, H, lw


def test_lemma1_zero_is_vacuous():
    g, H, lw = _case_a(64)
    u = SpaceTimeSamples(np.zeros((len(g.times), g.size)), np.zeros((len(g.times), len(g.faces))))
    rep = verify_lemma1(u, H, None, lw, g, [lw.s0, 2 * lw.s0])
    assert rep.passed


@pytest.mark.parametrize("part", ["i", "ii-B"])
def test_lemma1_smooth_example(part):
    g, H, lw = _case_a()
    u = sample_spacetime(lambda x, t: np.sin(np.pi * x[:, 0]) * (g.T - t) ** 2, g)
    rep = verify_lemma1(u, H, None, lw, g, [lw.s0, 2 * lw.s0, 4 * lw.s0], part=part, eps=0.0)
    assert rep.passed and rep.max_ratio < 1


def test_lemma1_informational_rows():
    g, H, lw = _case_a(64)
    u = sample_spacetime(lambda x, t: np.sin(np.pi * x[:, 0]) * (g.T - t) ** 2, g)
    rep = verify_lemma1(u, H, None, lw, g, [0.25 * lw.s0, lw.s0])
    assert rep.informational == [True, False]
    assert "max_ratio" in rep.to_dict() and "s" in rep.table()


def test_lemma1_guards():
    g, H, lw = _case_a(64)
    u = sample_spacetime(lambda x, t: np.sin(np.pi * x[:, 0]) * (1 + 0 * t), g)
    with pytest.raises(InequalityError, match="vanish"):
        verify_lemma1(u, H, None, lw, g, [1.0])
    with pytest.raises(ValueError):
        verify_lemma1(u, H, None, lw, g, [1.0], part="iii")
    stalled = dataclasses.replace(lw, beta=lw.mu)
    v = sample_spacetime(lambda x, t: np.sin(np.pi * x[:, 0]) * (g.T - t) ** 2, g)
    with pytest.raises(InequalityError, match="mu > beta"):
        verify_lemma1(v, H, None, stalled, g, [1.0])


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["i", "ii", "ii-B"]))
def test_lemma1_ratio_scale_invariant(seed, part):
    g, H, lw = _case_a(32)
    u = sample_spacetime(TrigPolynomial.random(np.random.default_rng(seed), 1, g.T), g)
    s = [lw.s0, 2 * lw.s0]
    a = verify_lemma1(u, H, None, lw, g, s, part=part)
    b = verify_lemma1(u.scaled(100.0), H, None, lw, g, s, part=part)
    np.testing.assert_allclose(a.ratios, b.ratios, rtol=1e-10)


D1 = "x1"
D2 = "x1 + 0.05*sin(pi*x1)^2*sin(pi*x2)^2"


@pytest.fixture(scope="module")
def exp_setup():
    g = build_grid([0, 0], [1, 1], 16, 3.0, n_steps=96)
    d1, d2 = parse_field(D1, 2), parse_field(D2, 2)
    ews = [exp_weight_constants(g, d, 0.5, 2.0, 0.9, 6.0, candidates=[d1, d2]) for d in (d1, d2)]
    return g, ews


def test_lemma3_calibrated_constant_carries_over(exp_setup):
    g, ews = exp_setup
    top = resolution_limit(g, 2.0, ews[0].d)
    s_values = [top / 4, top / 2, top]
    rng = np.random.default_rng(1)
    probes = [sample_spacetime(TrigPolynomial.random(rng, 2, g.T), g) for _ in range(3)]
    mode = "scaled"
    C = calibrate_constant([lemma3_required_constant(p, g, ews[0], s, mode) for p in probes for s in s_values])
    rng = np.random.default_rng(0)
    for ew in ews:
        for _ in range(3):
            u = sample_spacetime(TrigPolynomial.random(rng, 2, g.T), g)
            rep = verify_lemma3(u, g, ew, s_values, C, boundary=mode)
            assert rep.passed, (mode, ew.d.text, rep.ratios)


def test_lemma3_homogeneous_and_guarded(exp_setup):
    g, ews = exp_setup
    u = sample_spacetime(TrigPolynomial.random(np.random.default_rng(3), 2, g.T), g)
    a = lemma3_required_constant(u, g, ews[0], 1.0, "scaled")
    b = lemma3_required_constant(u.scaled(100.0), g, ews[0], 1.0, "scaled")
    assert b == pytest.approx(a, rel=1e-10)
    with pytest.raises(ValueError):
        verify_lemma3(u, g, ews[0], [1.0], 1.0, boundary="other")
    bad = SpaceTimeSamples(np.ones((len(g.times), g.size)), np.ones((len(g.times), len(g.faces))))
    with pytest.raises(InequalityError):
        verify_lemma3(bad, g, ews[0], [1.0], 1.0)


def test_calibrate_constant():
    assert calibrate_constant([0.1, 0.4, float("nan")]) == pytest.approx(0.8)
    with pytest.raises(InequalityError):
        calibrate_constant([float("inf")])


def test_lemma4():
    g = build_grid([0, 0], [1, 1], 32, 1.0, n_steps=2)
    d = parse_field("x1", 2)
    zero = parse_field("0", 2)
    assert verify_lemma4(zero, d, 1.0, [1.0], 1.0, g).passed
    probes = random_h02_ensemble(np.random.default_rng(1), 3)
    lam, s1, C, search = calibrate_lemma4(probes, d, g)
    assert search.converged and C > 0
    bump = parse_field("sin(pi*x1)^2*sin(pi*x2)^2", 2)
    rep = verify_lemma4(bump, d, lam, [s1, 2 * s1], C, g)
    assert rep.passed
    big = verify_lemma4(parse_field("100*sin(pi*x1)^2*sin(pi*x2)^2", 2), d, lam, [s1, 2 * s1], C, g)
    np.testing.assert_allclose(big.ratios, rep.ratios, rtol=1e-10)
    with pytest.raises(InequalityError, match="H0"):
        verify_lemma4(parse_field("sin(pi*x1)*sin(pi*x2)", 2), d, lam, [s1], C, g)
