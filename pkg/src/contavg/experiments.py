"""Configuration-driven experiments E1-E4.

Each ``run_*`` takes an :class:`ExperimentConfig` and returns an
:class:`ExperimentResult`: a table of per-cell rows (sorted by key), an
optional log-linear fit, and a list of named pass/fail checks whose
thresholds come from the config.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .engine import AveragingState, BlowUpError, run_to
from .ftseries import FourierTaylorSeries, TruncationPolicy, VectorFieldFT, weighted_norm
from .melnikov import area_paper
from .normal_form import normal_form_reduce
from .pendulum import PendulumParams
from .splitting import BelowFloor, LOBE_COLUMNS, lobe_row, measure_lobe

SCHEMA_VERSION = 1
EXPERIMENTS = ("E1_remainder_decay", "E2_smoothing", "E3_splitting", "E4_multifreq_scaling")


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


# --- configuration ----------------------------------------------------------

DEFAULT_GRIDS = {
    "E1_remainder_decay": dict(eps=[0.05, 0.0666667, 0.1, 0.2], B=0.01, c_target=0.8, K=1, N=16,
                               rho=0.5, ds=0.01, method="rk4", eps_ref=0.1),
    "E2_smoothing": dict(K=32, N=2, p=2.0, s0=0.1, eps=0.1, rho=1.0, ds=None, method="rk4",
                         envelope_rate=None),
    "E3_splitting": dict(eps=[0.15, 0.2, 0.25, 0.3], B=[0.01], t0=0.0, n_points=200, n_steps=64),
    "E4_multifreq_scaling": dict(eps=[0.04, 0.05, 0.0667, 0.1, 0.15], omega=[1.0, 1.6180339887498949],
                                 K=8, N=4, rho=0.5, q=0.5, c_target=0.8, ds=None,
                                 method="lawson"),
}

DEFAULT_THRESHOLDS = {
    "E1_remainder_decay": dict(alpha_rel_tol=0.15, min_reduction=1e3),
    "E2_smoothing": dict(envelope_factor=2.0),
    "E3_splitting": dict(rel_err_max=0.25, rel_err_monotone=True, slope_rel_tol=0.10,
                         f0=2.0, f0_rel_tol=0.20, c1_max=3.0),
    "E4_multifreq_scaling": dict(exponent_range=[0.4, 0.6], r2_min=0.98),
}

EPS_RANGES = {
    "E1_remainder_decay": (0.0, 1.0),
    "E2_smoothing": (0.0, 1.0),
    "E3_splitting": (0.15 - 1e-12, 0.3 + 1e-12),
    "E4_multifreq_scaling": (0.0, 1.0),
}


@dataclass
class ExperimentConfig:
    experiment: str
    grid: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    output_dir: str = "results"
    workers: int = 1
    seed: int = 0
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported version {self.schema_version}")
        self.grid = _merge("grid", DEFAULT_GRIDS[self.experiment], self.grid)
        self.thresholds = _merge("thresholds", DEFAULT_THRESHOLDS[self.experiment], self.thresholds)
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers", "must be a positive integer")
        self._validate()

    def _validate(self):
        g = self.grid
        for key in ("eps", "B"):
            if key in g and isinstance(DEFAULT_GRIDS[self.experiment][key], list):
                vals = g[key]
                if not isinstance(vals, list) or not vals:
                    raise ConfigError(f"grid.{key}", "must be a nonempty list")
                if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals):
                    raise ConfigError(f"grid.{key}", "entries must be finite numbers")
        lo, hi = EPS_RANGES[self.experiment]
        eps = g["eps"] if isinstance(g["eps"], list) else [g["eps"]]
        if not all(lo < e < hi or (lo <= e <= hi and self.experiment == "E3_splitting")
                   for e in eps):
            raise ConfigError("grid.eps", f"values must lie in ({lo:g}, {hi:g})")
        if self.experiment == "E1_remainder_decay":
            if len(g["eps"]) < 4:
                raise ConfigError("grid.eps", "E1 needs at least 4 values")
            if not 0 <= g["c_target"] < math.pi / 2:
                raise ConfigError("grid.c_target", "must lie in [0, pi/2)")
        if self.experiment == "E2_smoothing" and g["K"] < 1:
            raise ConfigError("grid.K", "must be >= 1")
        if self.experiment == "E3_splitting":
            if any(b < 0 or b > 0.02 for b in g["B"]):
                raise ConfigError("grid.B", "values must lie in [0, 0.02]")
        for key in ("K", "N", "n_points", "n_steps"):
            if key in g and g[key] is not None and (not isinstance(g[key], int) or g[key] < 0):
                raise ConfigError(f"grid.{key}", "must be a nonnegative integer")
        if g.get("method", "rk4") not in ("rk4", "lawson"):
            raise ConfigError("grid.method", "must be 'rk4' or 'lawson'")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        known = {"experiment", "grid", "thresholds", "output", "workers", "seed", "schema_version"}
        for key in d:
            if key not in known:
                raise ConfigError(key, "unknown key")
        if "experiment" not in d:
            raise ConfigError("experiment", "missing")
        out = d.get("output", {})
        if not isinstance(out, dict) or set(out) - {"dir"}:
            raise ConfigError("output", "must be an object with an optional 'dir'")
        for key in ("grid", "thresholds"):
            if not isinstance(d.get(key, {}), dict):
                raise ConfigError(key, "must be an object")
        return cls(d["experiment"], dict(d.get("grid", {})), dict(d.get("thresholds", {})),
                   out.get("dir", "results"), d.get("workers", 1), d.get("seed", 0),
                   d.get("schema_version", SCHEMA_VERSION))

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON ({exc.msg} at line {exc.lineno})") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "experiment": self.experiment,
                "grid": self.grid, "thresholds": self.thresholds,
                "output": {"dir": self.output_dir}, "workers": self.workers, "seed": self.seed}


def _merge(section, defaults, given):
    for key in given:
        if key not in defaults:
            raise ConfigError(f"{section}.{key}", "unknown key")
    out = dict(defaults)
    out.update(given)
    return out


def worker_count(config: ExperimentConfig) -> int:
    env = os.environ.get("CONTAVG_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError("CONTAVG_THREADS", f"not an integer: {env!r}") from None
        if n < 1:
            raise ConfigError("CONTAVG_THREADS", "must be >= 1")
        return n
    return config.workers


def _pmap(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


# --- fits -------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    """OLS fit of ``log(y) = a + b x``."""

    a: float
    b: float
    se_a: float
    se_b: float
    r2: float
    n: int


def fit_log_linear(x, y) -> FitResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 4:
        raise ValueError(f"a fit needs at least 4 points, got {x.size}")
    if np.any(y <= 0):
        raise ValueError("log-linear fit needs positive data")
    r = stats.linregress(x, np.log(y))
    return FitResult(float(r.intercept), float(r.slope), float(r.intercept_stderr),
                     float(r.stderr), float(r.rvalue ** 2), int(x.size))


# --- results ----------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class ExperimentResult:
    experiment: str
    columns: list
    rows: list
    fit: FitResult | None = None
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_csv(self) -> str:
        return rows_to_csv(self.columns, self.rows)

    def summary(self) -> str:
        lines = [f"{self.experiment}"]
        if self.fit is not None:
            f = self.fit
            lines.append(f"  fit log(y) = a + b x: a = {f.a:.6g} +- {f.se_a:.2g}, "
                         f"b = {f.b:.6g} +- {f.se_b:.2g}, R^2 = {f.r2:.6f}, n = {f.n}")
        for c in self.checks:
            lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def write_result(result: ExperimentResult, out_dir) -> list:
    os.makedirs(out_dir, exist_ok=True)
    stem = result.experiment.split("_")[0].lower()
    paths = [os.path.join(out_dir, f"{stem}.csv")]
    with open(paths[0], "w", newline="") as fh:
        fh.write(result.to_csv())
    if result.fit is not None:
        paths.append(os.path.join(out_dir, f"{stem}_fit.csv"))
        f = result.fit
        cols = ["a", "b", "se_a", "se_b", "r2", "n"]
        with open(paths[1], "w", newline="") as fh:
            fh.write(rows_to_csv(cols, [dict(zip(cols, [f.a, f.b, f.se_a, f.se_b, f.r2, f.n]))]))
    paths.append(os.path.join(out_dir, f"{stem}_checks.csv"))
    cols = ["check", "passed", "detail"]
    with open(paths[-1], "w", newline="") as fh:
        fh.write(rows_to_csv(cols, [dict(check=c.name, passed=c.passed, detail=c.detail)
                                    for c in result.checks]))
    return paths


# --- E1: remainder decay ----------------------------------------------------

def _e1_cell(args):
    eps, g = args
    pol = TruncationPolicy(K=g["K"], N=g["N"], rho=g["rho"])
    p = PendulumParams(eps, g["B"])
    start = normal_form_reduce(p, 0.0, pol).remainder
    row = dict(eps=float(eps), s=g["c_target"] / eps, remainder_initial=start)
    try:
        nf = normal_form_reduce(p, g["c_target"], pol, ds=g["ds"], method=g["method"])
    except BlowUpError as exc:
        row.update(s=exc.state.s, remainder=float("nan"), reduction=float("nan"), status="blowup")
        return row
    row.update(remainder=nf.remainder, reduction=start / nf.remainder if nf.remainder > 0 else
               float("inf"), status="ok")
    return row


def run_e1(config: ExperimentConfig) -> ExperimentResult:
    g, th = config.grid, config.thresholds
    rows = sorted(_pmap(_e1_cell, [(float(e), g) for e in g["eps"]], worker_count(config)),
                  key=lambda r: r["eps"])
    cols = ["eps", "s", "remainder_initial", "remainder", "reduction", "status"]
    res = ExperimentResult(config.experiment, cols, rows)
    ok = [r for r in rows if r["status"] == "ok"]
    if len(ok) < 4:
        res.checks.append(Check("fit", False, f"only {len(ok)} cells without blow-up"))
        return res
    fit = fit_log_linear([1 / r["eps"] for r in ok], [r["remainder"] for r in ok])
    res.fit = fit
    c = g["c_target"]
    alpha = -fit.b
    if c > 0:
        rel = abs(alpha - c) / c
        res.checks.append(Check("decay_rate", rel <= th["alpha_rel_tol"],
                                f"alpha = {alpha:.5f} vs c_target = {c} (rel {rel:.3f}, "
                                f"tol {th['alpha_rel_tol']})"))
    else:
        res.checks.append(Check("decay_rate", abs(alpha) <= 1e-8,
                                f"alpha = {alpha:.3g} with c_target = 0"))
    ref = [r for r in ok if abs(r["eps"] - g["eps_ref"]) < 1e-9]
    if ref and c > 0:
        red = ref[0]["reduction"]
        res.checks.append(Check("reduction_at_eps_ref", red >= th["min_reduction"],
                                f"remainder(s=0)/remainder(s_end) = {red:.4g} at eps = "
                                f"{g['eps_ref']} (min {th['min_reduction']:g})"))
    return res


# --- E2: smoothing of rough data ----------------------------------------------

def e2_field(K: int, N: int, p: float, eps: float) -> VectorFieldFT:
    """Scalar field ``eps (z^2/2 + sum_{k>=1} k^{-p} (1 + z) cos(kt))``.

    Mode k >= 1 is ``k^{-p} (1 + z) / 2``; the Fourier series is only
    continuous in t for p = 2.
    """
    terms = {(0, (2,)): 0.5} if N >= 2 else {}
    for k in range(1, K + 1):
        terms[(k, (0,))] = 0.5 * k ** -p
        if N >= 1:
            terms[(k, (1,))] = 0.5 * k ** -p
    return VectorFieldFT([FourierTaylorSeries.from_terms(1, K, N, terms)]) * eps


def run_e2(config: ExperimentConfig) -> ExperimentResult:
    g, th = config.grid, config.thresholds
    K, N, s0 = g["K"], g["N"], g["s0"]
    rate = 0.9 * s0 if g["envelope_rate"] is None else g["envelope_rate"]
    u = e2_field(K, N, g["p"], g["eps"])
    pol = TruncationPolicy(K=K, N=N, rho=g["rho"])
    st = AveragingState(0.0, g["eps"], u, "nonautonomous", pol)
    out, rep = run_to(st, s0, g["ds"], method=g["method"])
    ks = np.arange(1, K + 1)
    norm0 = np.array([weighted_norm(u.mode(k), pol) for k in ks]) / 2
    norm = np.array([weighted_norm(out.field.mode(k), pol) for k in ks]) / 2
    shape = ks ** -g["p"] * np.exp(-rate * ks)
    C = th["envelope_factor"] * norm[0] / shape[0] if norm[0] > 0 else 0.0
    env = C * shape
    rows = [dict(k=int(k), norm_initial=float(a), norm_final=float(b), envelope=float(e),
                 under=bool(b <= e)) for k, a, b, e in zip(ks, norm0, norm, env)]
    res = ExperimentResult(config.experiment, ["k", "norm_initial", "norm_final", "envelope",
                                               "under"], rows)
    bad = [r["k"] for r in rows if not r["under"]]
    res.checks.append(Check("envelope", not bad,
                            f"all {K} modes under {th['envelope_factor']:g} * ratio_1 * "
                            f"k^-{g['p']:g} e^(-{rate:g} k)" if not bad else
                            f"modes above envelope: {bad}"))
    return res


# --- E3: separatrix splitting -------------------------------------------------

def _e3_cell(args):
    eps, B, g = args
    rec = measure_lobe(PendulumParams(eps, B), g["t0"], g["n_points"], g["n_steps"])
    row = lobe_row(rec)
    row["status"] = "below_floor" if isinstance(rec, BelowFloor) else "ok"
    return row


def run_e3(config: ExperimentConfig) -> ExperimentResult:
    g, th = config.grid, config.thresholds
    cells = [(float(e), float(b), g) for b in g["B"] for e in g["eps"]]
    rows = sorted(_pmap(_e3_cell, cells, worker_count(config)), key=lambda r: (r["B"], r["eps"]))
    res = ExperimentResult(config.experiment, LOBE_COLUMNS + ["status"], rows)
    ok = [r for r in rows if r["status"] == "ok"]
    for r in rows:
        if r["status"] != "ok":
            res.notes.append(f"eps = {r['eps']}, B = {r['B']}: below floor, excluded")
    if not ok:
        res.checks.append(Check("cells", False, "no measurable cell"))
        return res
    worst = max(r["rel_err_melnikov"] for r in ok)
    res.checks.append(Check("rel_err_melnikov", worst <= th["rel_err_max"],
                            f"max |A - A_mel| / A_mel = {worst:.3e} (max {th['rel_err_max']})"))
    c1 = max(r["rel_err_melnikov"] / r["eps"] for r in ok)
    res.checks.append(Check("c1", c1 <= th["c1_max"], f"C1 = max rel_err / eps = {c1:.3e} "
                                                      f"(max {th['c1_max']})"))
    if th["rel_err_monotone"]:
        for B in sorted({r["B"] for r in ok}):
            seq = [r for r in ok if r["B"] == B]
            errs = [r["rel_err_melnikov"] for r in seq]
            dec = all(a > b for a, b in zip(errs, errs[1:]))
            listing = ", ".join(f"{r['eps']:g}: {r['rel_err_melnikov']:.3e}" for r in seq)
            res.checks.append(Check(f"rel_err_decreasing_in_eps[B={B:g}]", dec,
                                    f"rel_err by eps {{{listing}}}"))
    if len(ok) >= 4:
        fit = fit_log_linear([1 / r["eps"] for r in ok],
                             [r["area_measured"] * r["eps"] / (8 * math.pi * r["B"]) for r in ok])
        res.fit = fit
        target = -math.pi / 2
        rel = abs(fit.b - target) / abs(target)
        res.checks.append(Check("exponent_slope", rel <= th["slope_rel_tol"],
                                f"slope = {fit.b:.5f} vs -pi/2 (rel {rel:.4f}, "
                                f"tol {th['slope_rel_tol']})"))
        f0 = math.exp(fit.a)
        rel = abs(f0 - th["f0"]) / th["f0"]
        res.checks.append(Check("prefactor_f0", rel <= th["f0_rel_tol"],
                                f"f(0) = {f0:.5f} vs {th['f0']} (rel {rel:.4f}, "
                                f"tol {th['f0_rel_tol']})"))
    else:
        res.checks.append(Check("fit", False, f"only {len(ok)} measurable cells"))
    return res


# --- dispatch -------------------------------------------------------------------

def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    if config.experiment == "E1_remainder_decay":
        return run_e1(config)
    if config.experiment == "E2_smoothing":
        return run_e2(config)
    if config.experiment == "E3_splitting":
        return run_e3(config)
    from .multifreq import run_e4
    return run_e4(config)
