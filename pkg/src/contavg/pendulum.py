"""The rapidly forced pendulum

    H(x, y, t) = eps * (y^2/2 + (1 + 2B cos t) cos x)

its Fourier-Taylor Hamiltonian, the unperturbed separatrix, and the
time-2pi Poincare map.

The map is computed with a fixed-step symmetric composition of the
drift-kick splitting ``A: (x, t) += (h eps y, h)``,
``B: y += h eps (1 + 2B cos t) sin x``, raised to order 8 by triple jumps.
Every stage is an exact symplectic map of the extended phase space, so the
Poincare map is area preserving and reversible under ``(x, y, t) -> (x, -y, -t)``
to roundoff, and it is a smooth function of the initial point (finite
differences and complex steps are meaningful).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .ftseries import ContractError, FourierTaylorSeries, HamiltonianFT, cos_series


class EscapeError(RuntimeError):
    pass


class NewtonError(RuntimeError):
    pass


@dataclass(frozen=True)
class PendulumParams:
    eps: float
    B: float = 0.0

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ContractError(f"eps must lie in (0, 1), got {self.eps}")
        if not self.B >= 0:
            raise ContractError(f"B must be >= 0, got {self.B}")


def pendulum_hamiltonian(eps: float, B: float, K: int = 1, N: int = 16) -> HamiltonianFT:
    """Taylor expansion about the saddle (0, 0) of the forced pendulum Hamiltonian."""
    y = FourierTaylorSeries.variable(2, K, N, 1)
    h0 = y * y * 0.5 + cos_series(2, K, N, 0)
    # 2B cos t cos x = B cos x (e^{it} + e^{-it})
    h1 = cos_series(2, K, N, 0, k=1, scale=B)
    return HamiltonianFT((h0 + h1) * eps)


# --- unperturbed separatrix in the slow time tau = eps t ---------------------

def separatrix(tau):
    """Upper separatrix of ``y^2/2 + cos x = 1``: (4 arctan e^tau, 2 / cosh tau)."""
    tau = np.asarray(tau, dtype=float)
    return 4.0 * np.arctan(np.exp(tau)), 2.0 / np.cosh(tau)


@dataclass(frozen=True)
class SeparatrixOrbit:
    """Upper separatrix through (pi, 2) at tau = 0, as a callable of tau."""

    def __call__(self, tau):
        return separatrix(tau)

    def energy(self, tau):
        return energy(*separatrix(tau))


def energy(x, y):
    return 0.5 * np.asarray(y) ** 2 + np.cos(x)


# --- composition integrator -------------------------------------------------

@lru_cache(maxsize=None)
def composition_weights(order: int = 8) -> tuple:
    """Strang-step weights of the triple-jump composition of even ``order``."""
    if order < 2 or order % 2:
        raise ContractError("order must be even and >= 2")
    w = [1.0]
    for n in range(2, order, 2):
        x1 = 1.0 / (2.0 - 2.0 ** (1.0 / (n + 1)))
        x0 = 1.0 - 2.0 * x1
        w = [x1 * a for a in w] + [x0 * a for a in w] + [x1 * a for a in w]
    return tuple(w)


@lru_cache(maxsize=None)
def _drift_kick(order: int):
    """Drift and kick coefficients with adjacent half drifts merged."""
    w = composition_weights(order)
    drifts = [w[0] / 2]
    kicks = []
    for i, a in enumerate(w):
        kicks.append(a)
        nxt = w[i + 1] / 2 if i + 1 < len(w) else 0.0
        drifts.append(a / 2 + nxt)
    return tuple(drifts), tuple(kicks)


DEFAULT_ORDER = 8
DEFAULT_STEPS = 64


@lru_cache(maxsize=256)
def _schedule(eps: float, B: float, t0: float, t1: float, n: int, order: int):
    """Per-stage drift and kick multipliers over ``n`` steps from t0 to t1.

    The trailing half drift of a step is merged with the leading one of the
    next, so the schedule is ``(drift_i, kick_i)`` pairs plus a final drift.
    """
    h = (t1 - t0) / n
    d, k = _drift_kick(order)
    d, k = np.array(d), np.array(k)
    # times at which the kicks act, relative to the step start
    tk = np.cumsum(d[:-1]) * h
    drifts, kicks = [], []
    carry = 0.0
    for i in range(n):
        ti = t0 + i * h
        dd = d[:-1].copy()
        dd[0] += carry
        drifts.append(dd)
        kicks.append(k * (1.0 + 2.0 * B * np.cos(ti + tk)))
        carry = d[-1]
    drifts = np.concatenate(drifts) * h * eps
    kicks = np.concatenate(kicks) * h * eps
    return tuple(drifts), tuple(kicks), carry * h * eps


def flow(params: PendulumParams, x, y, t0: float, t1: float, n_steps: int | None = None,
         order: int = DEFAULT_ORDER):
    """Advance (x, y) from time t0 to t1 with ``n_steps`` steps per period.

    Arrays are advanced elementwise; complex inputs are carried through
    (used for complex-step derivatives).
    """
    n = DEFAULT_STEPS if n_steps is None else int(n_steps)
    n = max(1, int(math.ceil(n * abs(t1 - t0) / (2 * math.pi) - 1e-9)))
    drifts, kicks, last = _schedule(float(params.eps), float(params.B), float(t0), float(t1),
                                    n, order)
    x = np.array(x, copy=True)
    y = np.array(y, copy=True)
    if x.dtype.kind != "c":
        x = x.astype(float)
        y = y.astype(float)
    tmp = np.empty_like(x)
    for a, b in zip(drifts, kicks):
        np.multiply(y, a, out=tmp)
        x += tmp
        np.sin(x, out=tmp)
        tmp *= b
        y += tmp
    x += last * y
    return x, y


def poincare_map(params: PendulumParams, state, t0: float = 0.0, *, inverse: bool = False,
                 n_steps: int | None = None, escape: float = 10.0):
    """Time-2pi map (or its inverse) of the section ``t = t0``.

    ``state`` has shape (2, ...). Raises :class:`EscapeError` if any
    image has ``|y| > escape``.
    """
    z = np.asarray(state)
    if not np.all(np.isfinite(z)):
        raise ContractError("non-finite state")
    t1 = t0 - 2 * math.pi if inverse else t0 + 2 * math.pi
    x, y = flow(params, z[0], z[1], t0, t1, n_steps)
    if np.any(np.abs(y) > escape):
        raise EscapeError(f"|y| exceeded {escape}")
    return np.stack([x, y])


def iterate_map(params, state, n: int, t0: float = 0.0, *, inverse=False, n_steps=None):
    z = np.asarray(state)
    for _ in range(n):
        z = poincare_map(params, z, t0, inverse=inverse, n_steps=n_steps, escape=np.inf)
    return z


def map_jacobian(params, point, t0: float = 0.0, *, inverse=False, method="complex",
                 h: float | None = None, n_steps=None):
    """Jacobian of the Poincare map at ``point``.

    ``method='complex'`` uses complex steps (exact to roundoff),
    ``'central'`` a fourth-order central difference.
    """
    p = np.asarray(point, dtype=float)
    J = np.empty((2, 2))
    if method == "complex":
        h = 1e-30 if h is None else h
        pts = np.array([[p[0] + 1j * h, p[0]], [p[1], p[1] + 1j * h]])
        out = poincare_map(params, pts, t0, inverse=inverse, n_steps=n_steps, escape=np.inf)
        return out.imag / h
    if method != "central":
        raise ContractError(f"unknown method {method!r}")
    h = 1e-3 if h is None else h
    offs = np.array([-2, -1, 1, 2]) * h
    wts = np.array([1, -8, 8, -1]) / (12 * h)
    for j in range(2):
        pts = np.repeat(p[:, None], 4, axis=1)
        pts[j] += offs
        out = poincare_map(params, pts, t0, inverse=inverse, n_steps=n_steps, escape=np.inf)
        J[:, j] = out @ wts
    return J


@dataclass(frozen=True)
class FixedPoint:
    point: np.ndarray
    lam_u: float
    lam_s: float
    v_u: np.ndarray
    v_s: np.ndarray
    residual: float


def hyperbolic_fixed_point(params: PendulumParams, t0: float = 0.0, *, guess=(0.0, 0.0),
                           tol: float = 1e-12, max_iter: int = 50, n_steps=None) -> FixedPoint:
    """Newton iteration on ``P(z) - z`` from ``guess``, plus eigen-data of DP.

    Eigenvectors are normalised with a positive x-component.
    """
    if params.B > 0.2:
        raise ContractError("hyperbolic_fixed_point requires B <= 0.2")
    z = np.asarray(guess, dtype=float)
    for _ in range(max_iter):
        F = poincare_map(params, z, t0, n_steps=n_steps) - z
        res = float(np.max(np.abs(F)))
        if res <= tol:
            break
        J = map_jacobian(params, z, t0, n_steps=n_steps) - np.eye(2)
        z = z - np.linalg.solve(J, F)
    else:
        raise NewtonError(f"no convergence in {max_iter} iterations (residual {res:.3e})")
    J = map_jacobian(params, z, t0, n_steps=n_steps)
    lam, vec = np.linalg.eig(J)
    if np.any(np.abs(lam.imag) > 0) or not (abs(lam[0]) != 1):
        raise NewtonError("fixed point is not hyperbolic")
    lam = lam.real
    vec = vec.real
    iu, is_ = (0, 1) if abs(lam[0]) > abs(lam[1]) else (1, 0)
    vu = vec[:, iu] / np.linalg.norm(vec[:, iu])
    vs = vec[:, is_] / np.linalg.norm(vec[:, is_])
    vu = vu if vu[0] > 0 else -vu
    vs = vs if vs[0] > 0 else -vs
    return FixedPoint(z, float(lam[iu]), float(lam[is_]), vu, vs, res)
