"""Configuration-driven experiments and the ``transinv`` command line.

Experiments are described by an INI file. Every section is optional except
``[domain]`` and ``[fields]``::

    [experiment]
    name = case-a
    seed = 0

    [domain]
    lo = 0              # one value per axis, comma separated
    hi = 1
    n = 128, 256        # resolutions (cells per axis) for refinement studies
    T = 1.5
    cfl = 1.0           # or: n_steps = 384 (scaled with n)

    [fields]
    H = 1               # vector fields as "(e1, e2)" in 2D
    V = 0
    R = 1
    a = 0
    h = 0
    f = sin(pi*x)
    variant = generic   # generic | homogeneous | conservative
    d = x1              # potential for the conservative variant

    [weights]
    psi = x             # or case = 1..4 with case_d / case_a / case_delta0 / case_i0 / case_b
    beta =              # optional override
    lambda = 2          # two-parameter weight (needs d, delta0, M)
    beta_exp = 0.5
    delta0 = 0.9
    M = 6
    g1 = x1
    g2 = nu1
    candidates = x1; x1 + 0.05*sin(pi*x1)^2*sin(pi*x2)^2

    [forward]   method, compare, path_steps, energy_tol
    [carleman]  lemmas, part, s_multipliers, ensemble, eps, probes, tests, boundary
    [inverse]   weighting, noise, alpha, max_iters, sigma_iters, gate_rel_error, gate_norm_ratio
    [stability] theorem (2 | 3 | holder), V1, V2, mode, iterations, d1, d2, strict

Reports are JSON with sorted keys. The full resolved configuration is
embedded and a sha256 over the report (timestamp excluded) is stored under
``content_sha256``; the same config and seed reproduce the same hash.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .carleman import (
    InequalityError,
    TrigPolynomial,
    calibrate_constant,
    calibrate_lemma4,
    lemma3_required_constant,
    random_h02_ensemble,
    resolution_limit,
    sample_spacetime,
    verify_lemma1,
    verify_lemma3,
    verify_lemma4,
)
from .fields import ExpressionError, ExprField, constant, parse_field
from .geometry import GridError, build_grid
from .inverse import (
    OperatorError,
    add_noise,
    build_operator,
    holder_fit,
    reconstruct_source,
    recover_coefficient_V,
    refinement_factor,
    singular_extremes,
    stability_ratio_theorem3,
)
from .transport import SolverError, TransportProblem, energy_report, solve_characteristics, solve_upwind, time_derivative_trace, write_trace_csv
from .weights import (
    AdmissibleSetSpec,
    ThresholdError,
    WeightError,
    check_admissible,
    compute_mu,
    construct_psi,
    exp_weight_constants,
    linear_weight,
    threshold_time,
)

VERBS = ("weights", "forward", "carleman", "invert", "stability")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration


def _locate(text: str, section: str, key: str) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and "=" in s and s.split("=", 1)[0].strip().lower() == key.lower():
            return i
    return None


def _floats(text) -> list[float]:
    return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _ints(text) -> list[int]:
    return [int(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


@dataclass
class ExperimentConfig:
    """Parsed configuration with field expressions resolved."""

    raw: dict
    source: str = ""
    path: str = ""
    seed: int = 0
    name: str = "experiment"
    lo: list = field(default_factory=list)
    hi: list = field(default_factory=list)
    resolutions: list = field(default_factory=list)
    T: float = 1.0
    cfl: float | None = None
    n_steps: int | None = None
    fields: dict = field(default_factory=dict)
    variant: str = "generic"

    @property
    def dim(self) -> int:
        return len(self.lo)

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})

    def has(self, name: str) -> bool:
        return name in self.raw

    def get(self, section: str, key: str, default=None, kind=str):
        sec = self.raw.get(section, {})
        if key not in sec or sec[key] == "":
            return default
        try:
            if kind is bool:
                return sec[key].lower() in ("1", "yes", "true", "on")
            return kind(sec[key])
        except ValueError as exc:
            raise self.error(section, key, f"bad value {sec[key]!r}: {exc}") from None

    def error(self, section: str, key: str, msg: str) -> ConfigError:
        line = _locate(self.source, section, key)
        where = f"{self.path or '<config>'}:{line}" if line else f"{self.path or '<config>'}"
        return ConfigError(f"{where}: [{section}] {key}: {msg}")

    def expr(self, section: str, key: str, default=None, vector=None):
        text = self.get(section, key)
        if text is None:
            return None if default is None else parse_field(default, self.dim, vector=vector)
        try:
            return parse_field(text, self.dim, vector=vector)
        except (ExpressionError, ValueError) as exc:
            raise self.error(section, key, str(exc)) from None

    def expr_list(self, section: str, key: str) -> list:
        text = self.get(section, key)
        if text is None:
            return []
        out = []
        for part in text.split(";"):
            if part.strip():
                try:
                    out.append(parse_field(part.strip(), self.dim))
                except (ExpressionError, ValueError) as exc:
                    raise self.error(section, key, str(exc)) from None
        return out

    def grid(self, n: int):
        try:
            n_steps = None
            if self.n_steps is not None:
                n_steps = int(round(self.n_steps * n / self.resolutions[0]))
            speed = None
            if n_steps is None:
                H = self.fields["H"]
                speed = np.max(np.abs(np.asarray(H.at(_probe_points(self))).reshape(-1, self.dim)), axis=0)
                speed = np.maximum(speed, 1e-12)
            return build_grid(self.lo, self.hi, [n] * self.dim, self.T, n_steps=n_steps, cfl=self.cfl, speed=speed)
        except GridError as exc:
            raise ConfigError(f"{self.path or '<config>'}: [domain]: {exc}") from None

    def problem(self, grid, **over) -> TransportProblem:
        F = {**self.fields, **over}
        variant = over.get("variant", self.variant)
        if variant == "conservative":
            if F.get("d") is None:
                raise self.error("fields", "d", "the conservative variant needs d")
            return TransportProblem.conservative(grid, F["d"], a=F.get("a"), h=F.get("h"))
        return TransportProblem(
            grid,
            F["H"],
            V=F.get("V"),
            f=None if variant == "homogeneous" else F.get("f"),
            R=F.get("R"),
            a=F.get("a"),
            h=F.get("h"),
            variant=variant,
        )

    def resolved(self) -> dict:
        return {sec: dict(sorted(vals.items())) for sec, vals in sorted(self.raw.items())}


def _probe_points(cfg: ExperimentConfig) -> np.ndarray:
    axes = [np.linspace(a, b, 9) for a, b in zip(cfg.lo, cfg.hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def parse_config(text: str, path: str = "") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=path or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"{path or '<config>'}: {exc}") from None
    raw = {s: {k: v.strip() for k, v in cp.items(s)} for s in cp.sections()}
    cfg = ExperimentConfig(raw=raw, source=text, path=path)
    for sec in ("domain", "fields"):
        if sec not in raw:
            raise ConfigError(f"{path or '<config>'}: missing section [{sec}]")
    unknown = set(raw) - {"experiment", "domain", "fields", "weights", "forward", "carleman", "inverse", "stability"}
    if unknown:
        raise ConfigError(f"{path or '<config>'}: unknown section(s) {sorted(unknown)}")
    cfg.seed = cfg.get("experiment", "seed", 0, int)
    cfg.name = cfg.get("experiment", "name", "experiment")
    try:
        cfg.lo = _floats(raw["domain"].get("lo", "0"))
        cfg.hi = _floats(raw["domain"].get("hi", "1"))
        cfg.resolutions = _ints(raw["domain"].get("n", "64"))
    except ValueError as exc:
        raise cfg.error("domain", "n", str(exc)) from None
    if len(cfg.lo) != len(cfg.hi) or cfg.dim not in (1, 2):
        raise cfg.error("domain", "lo", "lo and hi must have the same length, 1 or 2")
    if not cfg.resolutions:
        raise cfg.error("domain", "n", "no resolution given")
    T = cfg.get("domain", "T", None, float)
    if T is None or not T > 0:
        raise cfg.error("domain", "T", "T must be given and positive")
    cfg.T = T
    cfg.n_steps = cfg.get("domain", "n_steps", None, int)
    cfg.cfl = cfg.get("domain", "cfl", 1.0 if cfg.n_steps is None else None, float)
    cfg.variant = cfg.get("fields", "variant", "generic")
    if cfg.variant not in ("generic", "homogeneous", "conservative"):
        raise cfg.error("fields", "variant", f"unknown variant {cfg.variant!r}")
    d = cfg.expr("fields", "d")
    if cfg.variant == "conservative":
        if d is None:
            raise cfg.error("fields", "d", "the conservative variant needs d")
        H = d.gradient()
    else:
        H = cfg.expr("fields", "H", vector=True)
        if H is None:
            raise cfg.error("fields", "H", "H is required")
        if H.dim != cfg.dim or len(H.exprs) != cfg.dim:
            raise cfg.error("fields", "H", f"H needs {cfg.dim} component(s)")
    cfg.fields = {
        "H": H,
        "V": cfg.expr("fields", "V"),
        "R": cfg.expr("fields", "R"),
        "a": cfg.expr("fields", "a"),
        "h": cfg.expr("fields", "h"),
        "f": cfg.expr("fields", "f"),
        "d": d,
    }
    for verb in ("weights", "carleman", "inverse", "stability", "forward"):
        for key in raw.get(verb, {}):
            if key in ("psi", "case_d", "d1", "d2", "V1", "V2", "g1", "g2"):
                cfg.expr(verb, key)
            elif key == "candidates":
                cfg.expr_list(verb, key)
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, str(p))


# --------------------------------------------------------------------------
# reports


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, ExprField):
        return obj.text
    return obj


def content_hash(report: dict) -> str:
    body = {k: v for k, v in report.items() if k not in ("timestamp", "content_sha256")}
    blob = json.dumps(_clean(body), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def finalize(report: dict, cfg: ExperimentConfig) -> dict:
    report = _clean({**report, "config": cfg.resolved(), "seed": cfg.seed, "version": __version__})
    report["content_sha256"] = content_hash(report)
    report["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    return report


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    return path


def write_table(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = sorted({k for r in rows for k in r})
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: _clean(r.get(k)) for k in keys})
    return path


class Console:
    def __init__(self, quiet: bool = False, stream=None):
        self.quiet = quiet
        self.stream = stream or sys.stdout

    def __call__(self, *parts):
        if not self.quiet:
            print(*parts, file=self.stream)


# --------------------------------------------------------------------------
# weights


def _psi(cfg: ExperimentConfig, grid):
    psi = cfg.expr("weights", "psi")
    if psi is not None:
        return psi, None
    case = cfg.get("weights", "case", None, int)
    if case is None:
        return None, None
    a = cfg.get("weights", "case_a")
    res = construct_psi(
        case,
        grid,
        cfg.fields["H"],
        d=cfg.get("weights", "case_d"),
        a=_floats(a) if a else None,
        delta0=cfg.get("weights", "case_delta0", None, float),
        i0=cfg.get("weights", "case_i0", None, int),
        b=cfg.get("weights", "case_b", None, float),
    )
    return res.psi, res


def _linear_weight(cfg: ExperimentConfig, grid):
    psi, res = _psi(cfg, grid)
    if psi is None:
        return None, res
    return linear_weight(grid, cfg.fields["H"], cfg.fields["V"], psi, beta=cfg.get("weights", "beta", None, float)), res


def _exp_weights(cfg: ExperimentConfig, grid):
    lam = cfg.get("weights", "lambda", None, float)
    if lam is None:
        return []
    cands = cfg.expr_list("weights", "candidates")
    d = cfg.fields["d"] or (cands[0] if cands else None)
    if d is None:
        raise cfg.error("weights", "candidates", "the two-parameter weight needs d or candidates")
    pool = cands or [d]
    beta = cfg.get("weights", "beta_exp", None, float)
    delta0 = cfg.get("weights", "delta0", None, float)
    M = cfg.get("weights", "M", None, float)
    if beta is None or delta0 is None or M is None:
        raise cfg.error("weights", "lambda", "two-parameter weight needs beta_exp, delta0 and M")
    return [exp_weight_constants(grid, c, beta, lam, delta0, M, candidates=pool) for c in pool]


def _admissible_spec(cfg: ExperimentConfig):
    g1, g2 = cfg.expr("weights", "g1"), cfg.expr("weights", "g2")
    delta0, M = cfg.get("weights", "delta0", None, float), cfg.get("weights", "M", None, float)
    if None in (g1, g2, delta0, M):
        return None
    return AdmissibleSetSpec(delta0, M, g1, g2)


def cmd_weights(cfg: ExperimentConfig, out: Path, say: Console) -> tuple[dict, bool]:
    grid = cfg.grid(cfg.resolutions[0])
    report: dict = {"verb": "weights", "grid": grid.describe()}
    ok = True
    psi, res = _psi(cfg, grid)
    if res is not None:
        report["psi_construction"] = res.to_dict()
        if not res.ok:
            say(f"case {res.case} rejected: {res.message}")
            for k, v in res.checks.items():
                say(f"  {k:>28} = {v:.6g}" if isinstance(v, float) else f"  {k:>28} = {v}")
            return report, False
    if psi is not None:
        mu = compute_mu(grid, cfg.fields["H"], psi)
        report["mu"] = mu
        if not mu > 0:
            say(f"mu = {mu:.6g} <= 0: no admissible psi")
            return report, False
        t_min = threshold_time(grid, cfg.fields["H"], psi)
        report["T_min"] = t_min
        if not cfg.T > t_min:
            say(f"T = {cfg.T} does not exceed the threshold; minimal T = {t_min:.6g}")
            report["threshold_ok"] = False
            return report, False
        report["threshold_ok"] = True
        try:
            lw, _ = _linear_weight(cfg, grid)
        except (WeightError, ThresholdError) as exc:
            say(f"linear weight rejected: {exc}")
            report["error"] = str(exc)
            return report, False
        report["linear_weight"] = lw.to_dict()
        report["levels_hold"] = lw.levels_hold(grid)
        ok &= bool(report["levels_hold"])
        c = lw.constants
        rows = [
            ("mu", lw.mu), ("beta", lw.beta), ("M0", c.M0), ("M0 (product form)", c.M0_printed),
            ("s0", lw.s0), ("s0 (formula)", c.s0_formula), ("T_min", t_min), ("r0", lw.r0),
            ("r1", lw.r1), ("delta1", lw.delta1), ("r*", lw.r_star),
        ]
        for k, v in rows:
            say(f"{k:>20} = {v:.6g}")
    spec = _admissible_spec(cfg)
    try:
        ews = _exp_weights(cfg, grid)
    except (WeightError, ThresholdError) as exc:
        say(f"two-parameter weight rejected: {exc}")
        report["error"] = str(exc)
        return report, False
    if ews:
        report["exp_weights"] = []
        for ew in ews:
            entry = {**ew.to_dict(), "checks": ew.checks(grid)}
            if spec is not None:
                adm = check_admissible(grid, ew.d, spec)
                entry["admissibility"] = adm.to_dict()
                ok &= adm.admissible
                say(f"d = {ew.d.text}: admissible={adm.admissible} min|grad d|={adm.min_grad:.4g} (>= {spec.delta0}) C2={adm.c2:.4g} (<= {spec.M})")
            ok &= bool(entry["checks"]["J_bound_holds"])
            say(f"d = {ew.d.text}: lambda={ew.lam} r0={ew.r0:.4g} mu0={ew.mu0:.4g} delta1={ew.delta1:.4g}")
            report["exp_weights"].append(entry)
    report["passed"] = bool(ok)
    return report, bool(ok)


# --------------------------------------------------------------------------
# forward


def cmd_forward(cfg: ExperimentConfig, out: Path, say: Console) -> tuple[dict, bool]:
    method = cfg.get("forward", "method", "upwind")
    compare = cfg.get("forward", "compare", None)
    energy_tol = cfg.get("forward", "energy_tol", 1.05, float)
    runs, ok = [], True
    for n in cfg.resolutions:
        grid = cfg.grid(n)
        prob = cfg.problem(grid)
        try:
            sol = solve_characteristics(prob, cfg.get("forward", "path_steps", 8, int)) if method == "characteristics" else solve_upwind(prob)
        except SolverError as exc:
            raise ConfigError(str(exc)) from None
        entry: dict = {"n": n, "grid": grid.describe(), "method": method}
        if prob.variant != "conservative":
            en = energy_report(sol, prob)
            entry["energy"] = en.to_dict()
            entry["energy_passed"] = en.passed(energy_tol)
            ok &= entry["energy_passed"]
        if sol.mass_log is not None:
            defect = float(np.max(sol.mass_log["relative_defect"]))
            entry["mass_defect"] = defect
            entry["mass_passed"] = defect <= 1e-12
            ok &= entry["mass_passed"]
        if prob.variant != "conservative" and prob.V is None and prob.f is None:
            bounds = [float(np.min(np.r_[prob.a_cells(), 0 if prob.h is None else prob.h.on_faces(grid)])), float(np.max(np.r_[prob.a_cells(), 0 if prob.h is None else prob.h.on_faces(grid)]))]
            viol = max(bounds[0] - float(np.min(sol.values)), float(np.max(sol.values)) - bounds[1], 0.0)
            entry["max_principle_violation"] = viol
            ok &= viol <= 1e-12
        if compare == "characteristics" and method != "characteristics":
            ref = solve_characteristics(prob)
            num = np.linalg.norm(sol.outflow_trace - ref.outflow_trace)
            den = np.linalg.norm(ref.outflow_trace)
            entry["trace_rel_diff_vs_characteristics"] = float(num / den) if den > 0 else float(num)
        dy = time_derivative_trace(sol, scheme="staggered")
        entry["outflow_derivative_norm"] = float(np.linalg.norm(dy))
        write_trace_csv(sol, out / f"forward_trace_n{n}.csv", derivative=True)
        runs.append(entry)
        say(f"n={n}: " + ", ".join(f"{k}={v:.4g}" for k, v in entry.items() if isinstance(v, float)))
    return {"verb": "forward", "runs": runs, "passed": bool(ok)}, bool(ok)


# --------------------------------------------------------------------------
# carleman


def _lemma1(cfg, out, say, seed):
    part = cfg.get("carleman", "part", "ii")
    mults = _floats(cfg.get("carleman", "s_multipliers", "1, 2, 3"))
    n_ens = cfg.get("carleman", "ensemble", 20, int)
    eps = cfg.get("carleman", "eps", 0.05, float)
    degree = cfg.get("carleman", "degree", 4, int)
    runs, rows = [], []
    for n in cfg.resolutions:
        grid = cfg.grid(n)
        lw, _ = _linear_weight(cfg, grid)
        if lw is None:
            raise cfg.error("weights", "psi", "lemma 1 needs psi or case")
        s_values = [m * lw.s0 for m in mults]
        rng = np.random.default_rng(seed)
        members = []
        for k in range(n_ens):
            u = sample_spacetime(TrigPolynomial.random(rng, grid.dim, grid.T, degree=degree), grid)
            rep = verify_lemma1(u, cfg.fields["H"], cfg.fields["V"], lw, grid, s_values, part=part, eps=eps)
            members.append({"member": k, "passed": rep.passed, "max_ratio": rep.max_ratio, "ratios": rep.ratios, "nonincreasing": rep.nonincreasing})
            for s, r, info in zip(rep.s_values, rep.ratios, rep.informational):
                rows.append({"n": n, "member": k, "s": s, "ratio": r, "informational": info})
        passed = all(m["passed"] for m in members)
        runs.append({"n": n, "s_values": s_values, "passed": passed, "max_ratio": max(m["max_ratio"] for m in members), "members": members, "weight": lw.to_dict()})
        say(f"lemma 1 ({part}) n={n}: max ratio {runs[-1]['max_ratio']:.4g} -> {'PASS' if passed else 'FAIL'}")
    write_table(rows, out / "carleman_lemma1.csv")
    status = [r["passed"] for r in runs]
    return {"part": part, "eps": eps, "runs": runs, "passed": all(status), "refinement_preserved": len(set(status)) == 1}


def _lemma3(cfg, out, say, seed):
    eps = cfg.get("carleman", "eps", 0.05, float)
    mode = cfg.get("carleman", "boundary", "unit")
    n_probe = cfg.get("carleman", "probes", 5, int)
    n_test = cfg.get("carleman", "tests", 10, int)
    runs = []
    for n in cfg.resolutions:
        grid = cfg.grid(n)
        ews = _exp_weights(cfg, grid)
        if not ews:
            raise cfg.error("weights", "lambda", "lemma 3 needs the two-parameter weight")
        s_top = min(resolution_limit(grid, ew.lam, ew.d) for ew in ews)
        s_values = [s_top / 4, s_top / 2, s_top]
        rng = np.random.default_rng(seed + 1)
        probes = [sample_spacetime(TrigPolynomial.random(rng, grid.dim, grid.T), grid) for _ in range(n_probe)]
        req = [lemma3_required_constant(p, grid, ews[0], s, mode) for p in probes for s in s_values]
        C = calibrate_constant(req)
        rng = np.random.default_rng(seed)
        tests = [sample_spacetime(TrigPolynomial.random(rng, grid.dim, grid.T), grid) for _ in range(n_test)]
        per_d = []
        for ew in ews:
            reps = [verify_lemma3(u, grid, ew, s_values, C, eps=eps, boundary=mode) for u in tests]
            per_d.append({"d": ew.d.text, "passed": all(r.passed for r in reps), "max_ratio": max(r.max_ratio for r in reps)})
        passed = all(p["passed"] for p in per_d)
        runs.append({"n": n, "C": C, "boundary": mode, "s_values": s_values, "required_max": max(req), "per_d": per_d, "passed": passed})
        say(f"lemma 3 n={n}: C={C:.4g} ({mode} boundary) " + ", ".join(f"{p['d']}: {p['max_ratio']:.3g}" for p in per_d) + f" -> {'PASS' if passed else 'FAIL'}")
    return {"runs": runs, "passed": all(r["passed"] for r in runs)}


def _lemma4(cfg, out, say, seed):
    d = cfg.fields["d"] or cfg.expr("weights", "d4", "x1")
    n_probe = cfg.get("carleman", "probes", 5, int)
    n_test = cfg.get("carleman", "tests", 10, int)
    runs = []
    for n in cfg.resolutions:
        grid = cfg.grid(n)
        probes = random_h02_ensemble(np.random.default_rng(seed + 1), n_probe, grid.dim)
        tests = random_h02_ensemble(np.random.default_rng(seed + 2), n_test, grid.dim)
        lam, s1, C, search = calibrate_lemma4(probes, d, grid)
        reps = []
        for f in tests:
            try:
                reps.append(verify_lemma4(f, d, lam, [s1, 2 * s1], C, grid))
            except InequalityError as exc:
                raise ConfigError(str(exc)) from None
        passed = all(r.passed for r in reps) and search.converged
        runs.append({"n": n, "lambda": lam, "s1": s1, "C": C, "search": search.history, "search_converged": search.converged, "max_ratio": max(r.max_ratio for r in reps), "passed": passed})
        say(f"lemma 4 n={n}: lambda={lam} s1={s1:.4g} C={C:.4g} max ratio {runs[-1]['max_ratio']:.4g} -> {'PASS' if passed else 'FAIL'}")
    return {"runs": runs, "passed": all(r["passed"] for r in runs)}


def cmd_carleman(cfg: ExperimentConfig, out: Path, say: Console) -> tuple[dict, bool]:
    lemmas = _ints(cfg.get("carleman", "lemmas", "1"))
    report: dict = {"verb": "carleman"}
    ok = True
    for lem in lemmas:
        fn = {1: _lemma1, 3: _lemma3, 4: _lemma4}.get(lem)
        if fn is None:
            raise cfg.error("carleman", "lemmas", f"unknown lemma {lem}")
        res = fn(cfg, out, say, cfg.seed)
        report[f"lemma{lem}"] = res
        ok &= res["passed"]
    report["passed"] = bool(ok)
    return report, bool(ok)


# --------------------------------------------------------------------------
# inverse


def cmd_invert(cfg: ExperimentConfig, out: Path, say: Console) -> tuple[dict, bool]:
    weighting = cfg.get("inverse", "weighting", "flux")
    noise = _floats(cfg.get("inverse", "noise", "0"))
    alpha = cfg.get("inverse", "alpha", "auto")
    alpha = alpha if alpha == "auto" else float(alpha)
    max_iters = cfg.get("inverse", "max_iters", 500, int)
    sig_iters = cfg.get("inverse", "sigma_iters", 200, int)
    gate_err = cfg.get("inverse", "gate_rel_error", 0.02, float)
    gate_norm = _floats(cfg.get("inverse", "gate_norm_ratio", "")) or None
    f_true = cfg.fields["f"]
    if f_true is None:
        raise cfg.error("fields", "f", "invert needs the true source f")
    runs, ok = [], True
    for n in cfg.resolutions:
        grid = cfg.grid(n)
        prob = cfg.problem(grid, a=None, h=None)
        psi, _ = _psi(cfg, grid)
        t_min = threshold_time(grid, cfg.fields["H"], psi) if psi is not None else None
        above = t_min is None or cfg.T > t_min
        try:
            op = build_operator(prob, weighting=weighting)
        except OperatorError as exc:
            raise ConfigError(str(exc)) from None
        rng = np.random.default_rng(cfg.seed)
        sig = singular_extremes(op, rng=rng, iters=sig_iters)
        fc = np.asarray(f_true.on_cells(grid), float)
        data = op.apply(fc)
        norm_ratio = op.data_norm(data) / op.f_norm(fc)
        entry: dict = {"n": n, "T_min": t_min, "above_threshold": above, "sigma": sig.to_dict(), "norm_ratio": norm_ratio, "reconstructions": []}
        for lvl in noise:
            noisy, nn = add_noise(op, data, lvl, np.random.default_rng(cfg.seed + 7)) if lvl > 0 else (data, 0.0)
            a = alpha if lvl > 0 else (0.0 if alpha == "auto" else alpha)
            rec = reconstruct_source(op, noisy, alpha=a, noise_level=nn if lvl > 0 else None, max_iters=max_iters, f_true=fc, sigma=sig)
            entry["reconstructions"].append({"noise": lvl, **rec.to_dict()})
        noiseless = [r for r in entry["reconstructions"] if r["noise"] == 0]
        if above:
            if noiseless:
                entry["gate_rel_error"] = noiseless[0]["rel_error"] <= gate_err
                ok &= entry["gate_rel_error"]
            if gate_norm:
                entry["gate_norm_ratio"] = gate_norm[0] <= norm_ratio <= gate_norm[1]
                ok &= entry["gate_norm_ratio"]
        else:
            entry["note"] = f"T below the threshold {t_min:.4g}: sigma_min = {sig.sigma_min:.3g}"
        runs.append(entry)
        say(f"n={n}: sigma in [{sig.sigma_min:.4g}, {sig.sigma_max:.4g}], |Af|/|f|={norm_ratio:.4g}, " + ", ".join(f"noise {r['noise']}: err {r['rel_error']:.3g}" for r in entry["reconstructions"]))
    ratios = [r["sigma"]["ratio"] for r in runs]
    report = {"verb": "invert", "runs": runs, "condition_refinement_factor": refinement_factor(ratios)}
    if len(runs) > 1 and all(r["above_threshold"] for r in runs):
        report["refinement_stable"] = report["condition_refinement_factor"] <= 2.0
        ok &= report["refinement_stable"]
    if len(noise) > 2:
        last = runs[-1]["reconstructions"]
        pts = [(r["noise"], r["rel_error"]) for r in last if r["noise"] > 0]
        report["holder_fit"] = holder_fit([p[0] for p in pts], [p[1] for p in pts])
    report["passed"] = bool(ok)
    return report, bool(ok)


# --------------------------------------------------------------------------
# stability


def _theorem2(cfg, out, say):
    V1 = cfg.expr("stability", "V1")
    V2 = cfg.expr("stability", "V2", "0")
    if V1 is None:
        raise cfg.error("stability", "V1", "theorem 2 needs V1")
    mode = cfg.get("stability", "mode", "exact")
    iters = cfg.get("stability", "iterations", 8, int)
    gate_err = cfg.get("stability", "gate_rel_error", 0.05, float)
    runs = []
    for n in cfg.resolutions:
        grid = cfg.grid(n)
        prob = cfg.problem(grid, V=None, f=None, R=None, variant="homogeneous")
        u1 = solve_upwind(prob.with_data(V=V1))
        plus = prob.partition.plus
        try:
            rec = recover_coefficient_V(
                prob.with_data(variant="generic"),
                u1.traces[:, plus],
                V2,
                operator_V=V1 if mode == "exact" else None,
                iterations=0 if mode == "exact" else iters,
                V1_true=V1,
            )
        except OperatorError as exc:
            raise ConfigError(str(exc)) from None
        d = rec.report.to_dict()
        runs.append({"n": n, **d})
        say(f"theorem 2 n={n} ({mode}): rel error {d['rel_error']:.4g}, ratio {d['ratio']:.4g}")
    ratios = [r["ratio"] for r in runs]
    fac = refinement_factor(ratios)
    passed = all(r["rel_error"] <= gate_err for r in runs) and fac <= 2.0
    return {"mode": mode, "runs": runs, "refinement_factor": fac, "passed": passed}


def _theorem3(cfg, out, say):
    d1, d2 = cfg.expr("stability", "d1"), cfg.expr("stability", "d2")
    spec = _admissible_spec(cfg)
    if d1 is None or d2 is None:
        raise cfg.error("stability", "d1", "theorem 3 needs d1 and d2")
    if spec is None:
        raise cfg.error("weights", "delta0", "theorem 3 needs delta0, M, g1 and g2")
    strict = cfg.get("stability", "strict", True, bool)
    gate_id = cfg.get("stability", "gate_identity", 0.10, float)
    a = cfg.fields["a"] or constant(1.0, cfg.dim)
    h = cfg.fields["h"] or constant(1.0, cfg.dim)
    runs = []
    for n in cfg.resolutions:
        grid = cfg.grid(n)
        try:
            rep = stability_ratio_theorem3(grid, d1, d2, a, h, spec, strict=strict)
        except OperatorError as exc:
            say(f"theorem 3 n={n}: gate failed: {exc}")
            return {"runs": runs, "passed": False, "error": str(exc)}
        d = rep.to_dict()
        runs.append({"n": n, **d})
        if rep.degenerate:
            say(f"theorem 3 n={n}: degenerate pair (d1 = d2), ratio undefined")
        else:
            say(f"theorem 3 n={n}: ratio {rep.ratio:.4g}, inverse {rep.inverse_ratio:.4g}, identity residual {d['identity_residual']:.3g}")
    if all(r["degenerate"] for r in runs):
        return {"runs": runs, "degenerate": True, "passed": True}
    f1 = refinement_factor([r["ratio"] for r in runs])
    f2 = refinement_factor([r["inverse_ratio"] for r in runs])
    passed = f1 <= 2.0 and f2 <= 2.0 and runs[-1]["identity_residual"] <= gate_id and all(r["time_ok"] for r in runs)
    if strict:
        passed &= all(all(r["admissible"]) for r in runs)
    return {"runs": runs, "refinement_factor": f1, "inverse_refinement_factor": f2, "passed": bool(passed)}


def cmd_stability(cfg: ExperimentConfig, out: Path, say: Console) -> tuple[dict, bool]:
    theorem = cfg.get("stability", "theorem", "2")
    if theorem == "2":
        res = _theorem2(cfg, out, say)
    elif theorem == "3":
        res = _theorem3(cfg, out, say)
    elif theorem == "holder":
        rep, ok = cmd_invert(cfg, out, say)
        res = {"holder_fit": rep.get("holder_fit"), "runs": rep["runs"], "passed": ok}
    else:
        raise cfg.error("stability", "theorem", f"unknown theorem {theorem!r}")
    write_table([{k: v for k, v in r.items() if not isinstance(v, (dict, list))} for r in res.get("runs", [])], out / f"stability_{theorem}.csv")
    return {"verb": "stability", "theorem": theorem, **res}, bool(res["passed"])


# --------------------------------------------------------------------------
# CLI

COMMANDS = {"weights": cmd_weights, "forward": cmd_forward, "carleman": cmd_carleman, "invert": cmd_invert, "stability": cmd_stability}


def run(verb: str, cfg: ExperimentConfig, out, quiet: bool = True) -> tuple[dict, bool]:
    """Run one verb and write ``<out>/<verb>.json``; returns the final report and pass flag."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    say = Console(quiet)
    report, ok = COMMANDS[verb](cfg, out, say)
    report = finalize(report, cfg)
    write_report(report, out / f"{verb}.json")
    return report, ok


def apply_overrides(cfg: ExperimentConfig, seed=None, refine: int = 0) -> ExperimentConfig:
    if seed is not None:
        cfg.seed = seed
        cfg.raw.setdefault("experiment", {})["seed"] = str(seed)
    if refine:
        base = cfg.resolutions[-1]
        cfg.resolutions = cfg.resolutions + [base * 2**k for k in range(1, refine + 1)]
        cfg.raw["domain"]["n"] = ", ".join(map(str, cfg.resolutions))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="transinv", description="Transport inverse-problem experiments.")
    p.add_argument("verb", choices=VERBS + ("all",))
    p.add_argument("--config", required=True, help="INI experiment file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--refine", type=int, default=0, help="append k doublings of the finest resolution")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args.seed, args.refine)
        verbs = [v for v in VERBS if v in ("weights", "forward") or cfg.has(v)] if args.verb == "all" else [args.verb]
        ok = True
        for verb in verbs:
            report, passed = run(verb, cfg, args.out, quiet=args.quiet)
            ok &= passed
            if not args.quiet:
                print(f"{verb}: {'PASS' if passed else 'FAIL'}  sha256={report['content_sha256'][:16]}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ExpressionError, WeightError, ThresholdError, OperatorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
