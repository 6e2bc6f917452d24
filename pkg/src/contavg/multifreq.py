"""Averaging with several fast phases (optional experiment E4).

Fields ``u(z, phi) = sum_k u^k(z) e^{i<k, phi>}`` with ``phi' = omega`` and
modes in the box ``|k_j| <= K``. The averaging flow is the direct
generalisation of the single-phase one with

    xi u = sum_k i sign<k, omega> u^k e^{i<k, phi>},

which gives ``u_s = -|<k, omega>| u^k - [xi u, u]^k`` mode by mode. This form
of ``xi`` is an extrapolation from the single-phase case (a natural
generalisation, not a formula taken from the theory) and E4 output says so.
For one phase with omega = 1 it reduces to the single-phase flow.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .engine import BlowUpError
from .experiments import Check, ExperimentResult, fit_log_linear, worker_count, _pmap
from .ftseries import ContractError, get_basis

GOLDEN = (1 + math.sqrt(5)) / 2
EXTRAPOLATION_NOTE = ("multi-frequency xi = i sign<k, omega> is a generalisation of the "
                      "single-phase operator, not a formula from the theory")


@lru_cache(maxsize=None)
def mode_lattice(n: int, K: int):
    """Modes of the box ``|k_j| <= K`` and the pair tables of the truncated convolution."""
    modes = np.array(list(itertools.product(range(-K, K + 1), repeat=n)), dtype=np.int64)
    index = {tuple(k): i for i, k in enumerate(modes)}
    i1, i2, tgt = [], [], []
    for a, ka in enumerate(modes):
        s = ka[None, :] + modes
        ok = np.all(np.abs(s) <= K, axis=1)
        for b in np.nonzero(ok)[0]:
            i1.append(a)
            i2.append(b)
            tgt.append(index[tuple(s[b])])
    return modes, index, np.array(i1), np.array(i2), np.array(tgt)


@dataclass(frozen=True)
class MultiFreqSystem:
    """Mode lattice, Taylor basis and frequency vector of a multi-phase field."""

    m: int
    N: int
    K: int
    omega: tuple

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise ContractError("omega must be a nonempty vector")
        modes = mode_lattice(w.size, self.K)[0]
        dots = modes @ w
        if np.any(np.abs(dots[np.any(modes != 0, axis=1)]) < 1e-12):
            raise ContractError("omega is resonant inside the mode box")

    @property
    def n(self):
        return len(self.omega)

    @property
    def basis(self):
        return get_basis(self.m, self.N)

    @property
    def modes(self):
        return mode_lattice(self.n, self.K)[0]

    @property
    def freq(self):
        return self.modes @ np.asarray(self.omega, dtype=float)

    @property
    def zero_index(self):
        return mode_lattice(self.n, self.K)[1][(0,) * self.n]

    def zeros(self):
        return np.zeros((self.m, len(self.modes), self.basis.size), dtype=complex)

    def mul(self, a, b):
        """Truncated product of arrays (..., n_modes, M), broadcast over leading axes."""
        _, _, i1, i2, tgt = mode_lattice(self.n, self.K)
        bas = self.basis
        lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        A = np.broadcast_to(a, lead + a.shape[-2:])
        B = np.broadcast_to(b, lead + b.shape[-2:])
        X = A[..., i1, :][..., bas.pair_i] * B[..., i2, :][..., bas.pair_j]
        nm, M = a.shape[-2], bas.size
        idx = (tgt[:, None] * M + bas.pair_tgt[None, :]).ravel()
        nb = int(np.prod(lead)) if lead else 1
        X = X.reshape(nb, -1)
        offs = (np.arange(nb)[:, None] * nm * M + idx[None, :]).ravel()
        re = np.bincount(offs, weights=X.real.ravel(), minlength=nb * nm * M)
        im = np.bincount(offs, weights=X.imag.ravel(), minlength=nb * nm * M)
        return (re + 1j * im).reshape(lead + (nm, M))

    def diff(self, a, var):
        src, dst, fac = self.basis.deriv[var]
        out = np.zeros_like(a)
        out[..., dst] = a[..., src] * fac
        return out

    def commutator(self, u1, u2):
        m = self.m
        d2 = np.stack([self.diff(u2, j) for j in range(m)])
        d1 = np.stack([self.diff(u1, j) for j in range(m)])
        return self.mul(u1[:, None], d2).sum(axis=0) - self.mul(u2[:, None], d1).sum(axis=0)

    def xi(self, a):
        return a * (1j * np.sign(self.freq))[:, None]

    def nonlinear(self, a):
        return -self.commutator(self.xi(a), a)

    def rhs(self, a):
        return -np.abs(self.freq)[:, None] * a + self.nonlinear(a)

    def oscillating_norm(self, a, rho):
        w = float(rho) ** self.basis.degree.astype(float)
        osc = np.abs(a) * w
        osc[:, self.zero_index] = 0.0
        return float(osc.sum())

    def reality_defect(self, a):
        """max |u^{-k} - conj(u^k)|."""
        idx = mode_lattice(self.n, self.K)[1]
        neg = np.array([idx[tuple(-k)] for k in self.modes])
        return float(np.max(np.abs(a[:, neg] - np.conj(a))))


def lawson_step(sys: MultiFreqSystem, a, ds):
    """RK4 on ``e^{|<k,omega>| s} u``: the linear decay is integrated exactly."""
    r = np.abs(sys.freq)[:, None]
    e_half, e_full = np.exp(-r * ds / 2), np.exp(-r * ds)
    N = sys.nonlinear
    k1 = N(a)
    k2 = N(e_half * (a + ds / 2 * k1))
    k3 = N(e_half * a + ds / 2 * k2)
    k4 = N(e_full * a + ds * e_half * k3)
    return e_full * a + ds / 6 * (e_full * k1 + 2 * e_half * (k2 + k3) + k4)


def rk4_step(sys, a, ds):
    f = sys.rhs
    k1 = f(a)
    k2 = f(a + ds / 2 * k1)
    k3 = f(a + ds / 2 * k2)
    k4 = f(a + ds * k3)
    return a + ds / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def run_multifreq(sys: MultiFreqSystem, a, s_target, ds=0.05, method="lawson",
                  blowup_factor=1e6):
    if s_target < 0:
        raise ContractError("s_target must be >= 0")
    n = max(1, int(math.ceil(s_target / ds - 1e-12))) if s_target > 0 else 0
    h = s_target / n if n else 0.0
    stepper = lawson_step if method == "lawson" else rk4_step
    bound = blowup_factor * max(float(np.max(np.abs(a))), 1e-300)
    for i in range(n):
        new = stepper(sys, a, h)
        if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > bound:
            raise BlowUpError(f"multi-frequency flow diverged at s = {(i + 1) * h:.4g}", a)
        a = new
    return a


def benchmark_field(sys: MultiFreqSystem, eps: float, q: float = 0.5):
    """Scalar (m = 1) field ``eps (z^2/2 + sum_{k != 0} e^{-q|k|_1} (1 + z)/2 e^{i<k,phi>})``."""
    if sys.m != 1:
        raise ContractError("benchmark field is scalar")
    a = sys.zeros()
    b = sys.basis
    a[0, sys.zero_index, b.index[(2,)]] = 0.5 if sys.N >= 2 else 0.0
    wk = np.exp(-q * np.abs(sys.modes).sum(axis=1))
    wk[sys.zero_index] = 0.0
    a[0, :, b.index[(0,)]] = 0.5 * wk
    if sys.N >= 1:
        a[0, :, b.index[(1,)]] = 0.5 * wk
    return eps * a


def diophantine_constant(omega, K, norm=1):
    """min over the box of ``|<k, omega>| * ||k||`` (gamma = 1)."""
    modes = mode_lattice(len(omega), K)[0]
    nz = np.any(modes != 0, axis=1)
    kn = np.linalg.norm(modes[nz], ord=norm, axis=1)
    return float(np.min(np.abs(modes[nz] @ np.asarray(omega)) * kn))


def qbar_prediction(gamma0, alpha, q, gamma=1.0):
    """``(1 + 1/gamma) (gamma gamma0 alpha q^gamma)^{1/(gamma+1)}``."""
    return (1 + 1 / gamma) * (gamma * gamma0 * alpha * q ** gamma) ** (1 / (gamma + 1))


def _e4_cell(args):
    eps, g = args
    sys = MultiFreqSystem(1, g["N"], g["K"], tuple(g["omega"]))
    a0 = benchmark_field(sys, eps, g.get("q", 0.5))
    start = sys.oscillating_norm(a0, g["rho"]) / eps
    s = g["c_target"] / eps
    ds = g["ds"] or 0.05
    try:
        a = run_multifreq(sys, a0, s, ds, g["method"])
    except BlowUpError:
        return dict(eps=eps, s=s, remainder_initial=start, remainder=float("nan"),
                    status="blowup")
    return dict(eps=eps, s=s, remainder_initial=start,
                remainder=sys.oscillating_norm(a, g["rho"]) / eps, status="ok")


def run_e4(config) -> ExperimentResult:
    g, th = config.grid, config.thresholds
    rows = sorted(_pmap(_e4_cell, [(float(e), g) for e in g["eps"]], worker_count(config)),
                  key=lambda r: r["eps"])
    res = ExperimentResult(config.experiment, ["eps", "s", "remainder_initial", "remainder",
                                               "status"], rows)
    res.notes.append(EXTRAPOLATION_NOTE)
    ok = [r for r in rows if r["status"] == "ok"]
    if len(ok) < 4:
        res.checks.append(Check("fit", False, f"only {len(ok)} cells without blow-up"))
        return res
    eps = np.array([r["eps"] for r in ok])
    R = np.array([r["remainder"] for r in ok])
    R0 = np.array([r["remainder_initial"] for r in ok])
    # exponent of eps: -log(R / R0) = qbar eps^(-beta) + ...
    expo = fit_log_linear(np.log(1 / eps), -np.log(R / R0))
    lin = fit_log_linear(eps ** -0.5, R)
    res.fit = lin
    lo, hi = th["exponent_range"]
    res.checks.append(Check("eps_exponent", lo <= expo.b <= hi,
                            f"beta = {expo.b:.4f} +- {expo.se_b:.2g} in [{lo}, {hi}]"))
    res.checks.append(Check("linearity_in_eps^-1/2", lin.r2 >= th["r2_min"],
                            f"R^2 = {lin.r2:.5f} (min {th['r2_min']})"))
    if len(g["omega"]) == 2:
        g0 = diophantine_constant(g["omega"], g["K"])
        pred = qbar_prediction(g0, g["c_target"], g.get("q", 0.5))
        res.notes.append(f"fitted qbar = {-lin.b:.4f}; formula with gamma0 = {g0:.4f}, "
                         f"alpha = {g['c_target']}, q = {g.get('q', 0.5)}: {pred:.4f}")
    return res
