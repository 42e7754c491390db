"""Acceptance criteria, one PASS/FAIL line each (see the terminal summary)."""

import time
from pathlib import Path

import numpy as np
import pytest

from transinv.carleman import calibrate_lemma4, random_h02_ensemble, verify_lemma4
from transinv.fields import constant, parse_field
from transinv.geometry import build_grid
from transinv.harness import load_config, parse_config, run
from transinv.inverse import (
    OperatorError,
    build_operator,
    reconstruct_source,
    recover_coefficient_V,
    refinement_factor,
    singular_extremes,
    stability_ratio_theorem3,
)
from transinv.transport import TransportProblem, energy_report, solve_upwind, time_derivative_trace
from transinv.weights import AdmissibleSetSpec

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_criterion_1_analytic_oracle(case_a, verdict):
    t0 = time.perf_counter()
    g, prob = case_a(n=256)
    sol = solve_upwind(prob)
    dy = time_derivative_trace(sol, faces=prob.partition.plus, scheme="staggered")[:, 0]
    th = 0.5 * (g.times[1:] + g.times[:-1])
    exact = np.sin(np.pi * (1 - th)) * (th < 1)
    trace_err = np.linalg.norm(dy - exact) / np.linalg.norm(exact)
    op = build_operator(prob)
    f = prob.f.on_cells(g)
    data = op.apply(f)
    norm_ratio = op.data_norm(data) / op.f_norm(f)
    rec = reconstruct_source(op, data, alpha=0.0, f_true=f)
    dt = time.perf_counter() - t0
    ok = trace_err <= 0.05 and 0.9 <= norm_ratio <= 1.1 and rec.rel_error <= 0.02 and dt <= 10
    verdict("1 analytic oracle", ok, f"trace err {trace_err:.3g} (<= 0.05), |Af|/|f| {norm_ratio:.4f} (in [0.9, 1.1]), reconstruction err {rec.rel_error:.3g} (<= 0.02), {dt:.1f} s (<= 10)")
    assert ok


def test_criterion_2_linear_carleman(tmp_path, verdict):
    t0 = time.perf_counter()
    cfg = load_config(CONFIGS / "case_a.ini")
    cfg.raw["carleman"].update({"part": "ii", "ensemble": "20", "eps": "0.05", "s_multipliers": "1, 2, 3"})
    rep, ok = run("carleman", cfg, tmp_path)
    dt = time.perf_counter() - t0
    lem = rep["lemma1"]
    ratios = ", ".join(f"n={r['n']}: {r['max_ratio']:.4g}" for r in lem["runs"])
    ok = lem["passed"] and lem["refinement_preserved"] and dt <= 60
    verdict("2 linear-weight Carleman (ii)", ok, f"max LHS/RHS {ratios} (<= 1.05), pass status preserved: {lem['refinement_preserved']}, {dt:.1f} s (<= 60)")
    assert ok


def test_criterion_3_energy(case_a, verdict):
    g, prob = case_a(n=256)
    r1 = energy_report(solve_upwind(prob), prob)
    cfg = load_config(CONFIGS / "flow_2d.ini")
    g2 = cfg.grid(64)
    prob2 = cfg.problem(g2, f=parse_field("sin(pi*x1)*sin(pi*x2)", 2))
    r2 = energy_report(solve_upwind(prob2), prob2)
    ok = r1.max_ratio <= 1.05 and r2.max_ratio <= 1.05
    verdict("3 energy estimate", ok, f"max ratio 1D {r1.max_ratio:.4g}, 2D {r2.max_ratio:.4g} (<= 1.05), K = {r1.K:.3g} / {r2.K:.3g}")
    assert ok


def _cond(prob, **kw):
    s = singular_extremes(build_operator(prob), **kw)
    return s.sigma_max / s.sigma_min, s


def test_criterion_4_both_sided(case_a, verdict):
    c1 = [_cond(case_a(n=n)[1])[0] for n in (128, 256)]
    cfg = load_config(CONFIGS / "diagonal_2d.ini")
    c2 = [_cond(cfg.problem(cfg.grid(n)))[0] for n in (32, 64)]
    _, healthy = _cond(case_a(n=128)[1])
    _, short = _cond(case_a(n=128, T=0.5)[1])
    f1, f2 = refinement_factor(c1), refinement_factor(c2)
    drop = healthy.sigma_min / short.sigma_min
    ok = f1 <= 2 and f2 <= 2 and drop >= 100
    verdict("4 both-sided stability", ok, f"cond 1D {c1[0]:.4g} -> {c1[1]:.4g} (x{f1:.3g}), 2D {c2[0]:.4g} -> {c2[1]:.4g} (x{f2:.3g}) (<= 2), sigma_min drop at T/2 x{drop:.3g} (>= 100)")
    assert ok


def test_criterion_5_coefficient(verdict):
    V1 = parse_field("0.3*sin(pi*x)", 1)
    errs, ratios = [], []
    for n in (128, 256):
        g = build_grid(0, 1, n, 1.5, n_steps=int(1.5 * n))
        prob = TransportProblem(g, parse_field("1", 1, vector=True), a=constant(1, 1), h=constant(1, 1))
        u1 = solve_upwind(prob.with_data(V=V1, variant="homogeneous"))
        rec = recover_coefficient_V(prob, u1.traces[:, prob.partition.plus], constant(0, 1), operator_V=V1, V1_true=V1)
        errs.append(rec.report.extra["rel_error"])
        ratios.append(rec.report.ratio)
    fac = refinement_factor(ratios)
    ok = max(errs) <= 0.05 and fac <= 2
    verdict("5 coefficient reduction", ok, f"rel error {errs[0]:.3g} / {errs[1]:.3g} (<= 0.05), ratio {ratios[0]:.4g} -> {ratios[1]:.4g} (x{fac:.3g} <= 2)")
    assert ok


D1 = "x1"
D2 = "x1 + 0.05*sin(pi*x1)^2*sin(pi*x2)^2"


def _theorem3(delta0):
    t0 = time.perf_counter()
    spec = AdmissibleSetSpec(delta0, 6.0, parse_field("x1", 2), parse_field("nu1", 2))
    reps = []
    try:
        for n in (32, 64):
            g = build_grid([0, 0], [1, 1], n, 3.0, n_steps=6 * n)
            reps.append(stability_ratio_theorem3(g, parse_field(D1, 2), parse_field(D2, 2), constant(1, 2), constant(1, 2), spec, strict=True))
    except OperatorError as exc:
        return False, f"{exc} ({time.perf_counter() - t0:.1f} s)"
    dt = time.perf_counter() - t0
    f1 = refinement_factor([r.ratio for r in reps])
    f2 = refinement_factor([r.inverse_ratio for r in reps])
    res = reps[-1].extra["identity_residual"]
    finite = all(np.isfinite(r.ratio) and np.isfinite(r.inverse_ratio) for r in reps)
    ok = finite and f1 <= 2 and f2 <= 2 and res <= 0.10 and dt <= 120
    return ok, f"ratios {reps[0].ratio:.4g} -> {reps[1].ratio:.4g} (x{f1:.3g}), inverse x{f2:.3g} (<= 2), identity residual {res:.3g} (<= 0.10), {dt:.1f} s (<= 120)"


def test_criterion_6_potential_pair(verdict):
    ok, detail = _theorem3(0.9)
    verdict("6 potential pair, delta0 = 0.9", ok, detail)
    assert ok


def test_criterion_6b_potential_pair_relaxed_floor(verdict):
    ok, detail = _theorem3(0.8)
    verdict("6b potential pair, delta0 = 0.8", ok, detail)
    assert ok


def test_criterion_7_laplacian_suite(verdict):
    g = build_grid([0, 0], [1, 1], 32, 1.0, n_steps=2)
    d = parse_field("x1", 2)
    probes = random_h02_ensemble(np.random.default_rng(1), 5)
    tests = random_h02_ensemble(np.random.default_rng(2), 10)
    lam, s1, C, search = calibrate_lemma4(probes, d, g)
    reps = [verify_lemma4(f, d, lam, [s1, 2 * s1], C, g) for f in tests]
    worst = max(r.max_ratio for r in reps)
    ok = search.converged and all(r.passed for r in reps)
    verdict("7 Laplacian estimate", ok, f"lambda {lam}, s1 {s1:.4g}, C {C:.4g}, worst test ratio {worst:.4g} (<= 1), {sum(r.passed for r in reps)}/10 pass")
    assert ok


def test_criterion_8_structural(case_a, tmp_path, verdict):
    rng = np.random.default_rng(8)
    g, prob = case_a(n=64)
    ops = [build_operator(prob), build_operator(load_config(CONFIGS / "flow_2d.ini").problem(build_grid([0, 0], [1, 1], 16, 2.0, cfl=1.0, speed=[1, 0.5])))]
    adj = max(op.adjoint_defect(rng, pairs=50) for op in ops)
    lin = max(op.linearity_defect(rng) for op in ops)
    cfg = load_config(CONFIGS / "flow_2d.ini")
    gm = cfg.grid(32)
    pm = cfg.problem(gm, V=None, f=None, h=parse_field("0.5", 2))
    sol = solve_upwind(pm)
    lo, hi = min(0.0, float(np.min(pm.a_cells()))), max(0.5, float(np.max(pm.a_cells())))
    viol = max(lo - float(np.min(sol.values)), float(np.max(sol.values)) - hi, 0.0)
    rep, _ = run("forward", load_config(CONFIGS / "conservative.ini"), tmp_path / "m")
    mass = rep["runs"][0]["mass_defect"]
    text = (CONFIGS / "case_a.ini").read_text()
    h1 = run("invert", parse_config(text), tmp_path / "a")[0]["content_sha256"]
    h2 = run("invert", parse_config(text), tmp_path / "b")[0]["content_sha256"]
    ok = adj <= 1e-10 and lin <= 1e-12 and viol <= 1e-12 and mass <= 1e-12 and h1 == h2
    verdict("8 structural gates", ok, f"adjoint {adj:.2g} (<= 1e-10), linearity {lin:.2g} (<= 1e-12), max principle {viol:.2g} (<= 1e-12), mass defect {mass:.2g} (<= 1e-12), hash equal {h1 == h2}")
    assert ok
