"""Independent ground truth for the averaging engine.

Closed-form solutions of the linearized mode equations

    w^k_s = -|k| w^k + i eps sign(k) L_{v0} w^k

for benchmark families whose unperturbed flow ``g`` of ``dz/dt = v0(z)`` is
known in closed form at complex times. For a scalar function (a Hamiltonian)
the Lie derivative is the transport ``v0 . grad`` and the solution is the
composition ``e^{-|k|s} v^k o g^zeta`` with ``zeta = i eps sign(k) s``. For a
vector field the Lie derivative is the commutator ``[v0, w]`` and the
solution is the pull-back ``e^{-|k|s} (Dg^zeta)^{-1} v^k o g^zeta``.

Also: an adaptive 8th-order integrator and the brute-force conjugacy check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .engine import AveragingState, run_to
from .ftseries import (
    ContractError, FourierTaylorSeries, TruncationPolicy, VectorFieldFT, eval_mode_array, evaluate,
    get_basis, linear_field,
)


class SingularFlowError(ArithmeticError):
    pass


class IntegrationError(RuntimeError):
    pass


class EscapeError(IntegrationError):
    """Trajectory left the validity box."""


KINDS = ("linear", "riccati", "zero")


@dataclass(frozen=True)
class BenchmarkFamily:
    """Unperturbed field ``v0`` with a closed-form flow plus polynomial
    perturbation modes.

    ``kind='linear'``: ``v0(z) = A z``; ``'riccati'``: ``v0(z) = z^2`` (m=1);
    ``'zero'``: ``v0 = 0``. ``perturbation`` is an unscaled field whose modes
    k >= 1 are used; its mode 0 is ignored.
    """

    kind: str
    perturbation: VectorFieldFT
    A: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown benchmark kind {self.kind!r}")
        if self.kind == "linear":
            A = np.asarray(self.A, dtype=float)
            if A.shape != (self.m, self.m):
                raise ContractError("linear family needs an m x m matrix A")
            object.__setattr__(self, "A", A)
        if self.kind == "riccati" and self.m != 1:
            raise ContractError("riccati family is scalar (m=1)")

    @property
    def m(self):
        return self.perturbation.m

    def base_field(self, K, N) -> VectorFieldFT:
        m = self.m
        if self.kind == "linear":
            return linear_field(K, N, self.A)
        if self.kind == "riccati":
            z = FourierTaylorSeries.variable(1, K, N, 0)
            return VectorFieldFT([z * z])
        return VectorFieldFT.zero(m, K, N)

    def field(self, eps: float) -> VectorFieldFT:
        """Engine input ``eps * (v0 + sum_k v^k e^{ikt})``."""
        p = self.perturbation
        return (self.base_field(p.K, p.N) + p.oscillating()) * eps

    def flow(self, zeta: complex, z):
        z = np.asarray(z, dtype=complex)
        if self.kind == "linear":
            return expm(self.A * zeta) @ z
        if self.kind == "riccati":
            den = 1.0 - zeta * z
            if np.any(den == 0):
                raise SingularFlowError("riccati flow reached its pole")
            return z / den
        return z

    def flow_jacobian(self, zeta: complex, z):
        z = np.asarray(z, dtype=complex)
        if self.kind == "linear":
            return expm(self.A * zeta)
        if self.kind == "riccati":
            return np.array([[1.0 / (1.0 - zeta * z[0]) ** 2]])
        return np.eye(self.m, dtype=complex)


def singularity_bound(family: BenchmarkFamily, z, eps: float, k: int = 1) -> float:
    """Supremum of s >= 0 for which ``g^{i eps sign(k) s}(z)`` stays finite."""
    if family.kind != "riccati" or k == 0 or eps == 0:
        return math.inf
    z0 = complex(np.ravel(z)[0])
    if z0 == 0:
        return math.inf
    # 1 - i eps sign(k) s z = 0
    s = -1j / (eps * np.sign(k) * z0)
    if abs(s.imag) <= 1e-12 * abs(s) and s.real > 0:
        return float(s.real)
    return math.inf


def explicit_solution(family: BenchmarkFamily, k: int, eps: float, s: float, z,
                      transport: str = "vector"):
    """Mode ``k`` of the linearized solution at ``(s, z)`` in unscaled units.

    ``transport='vector'`` transports a vector field (pull-back),
    ``transport='function'`` a scalar function (composition); the engine's
    vector-field mode matches the former, its Hamiltonian mode the latter.
    Multiply by ``eps`` to compare with an engine run on ``family.field(eps)``.
    """
    z = np.asarray(z)
    p = family.perturbation
    if k == 0:
        return eval_mode_array(family.base_field(p.K, p.N).array, p.basis, 0, z)
    if s >= singularity_bound(family, z, eps, k):
        raise SingularFlowError(f"s={s} is beyond the singularity of g at z={z}")
    zeta = 1j * eps * np.sign(k) * s
    gz = family.flow(zeta, z)
    w = eval_mode_array(p.array, p.basis, k, gz)
    if transport == "vector":
        w = np.linalg.solve(family.flow_jacobian(zeta, z), w)
    elif transport != "function":
        raise ContractError(f"unknown transport {transport!r}")
    return math.exp(-abs(k) * s) * w


# ---------------------------------------------------------------------------

def ode_integrate(f, z0, t0: float, t1: float, tol: float = 1e-13, *, box: float = math.inf,
                  check: bool = False):
    """Integrate ``dz/dt = f(t, z)`` with the DOP853 embedded pair.

    ``check=True`` repeats the solve at ``tol / 100`` and raises
    :class:`IntegrationError` when the two results differ by more than
    ``100 * tol`` times the trajectory scale.
    """
    if tol <= 0:
        raise ContractError("tol must be positive")
    z0 = np.asarray(z0)
    dtype = complex if np.iscomplexobj(z0) else float
    z0 = z0.astype(dtype)
    if t1 == t0:
        return z0.copy()
    scale = max(1.0, float(np.max(np.abs(z0))))
    events = None
    if math.isfinite(box):
        def escape(t, z):
            return box - np.max(np.abs(z))
        escape.terminal = True
        events = [escape]
    sol = solve_ivp(f, (t0, t1), z0, method="DOP853", rtol=tol, atol=tol * scale,
                    events=events)
    if sol.status == 1:
        raise EscapeError(f"trajectory left |z| < {box} at t={sol.t[-1]:.6g}")
    if sol.status != 0:
        raise IntegrationError(sol.message)
    z1 = sol.y[:, -1]
    if check:
        ref = ode_integrate(f, z0, t0, t1, tol / 100, box=box)
        err = np.max(np.abs(ref - z1))
        if err > 100 * tol * max(scale, float(np.max(np.abs(ref)))):
            raise IntegrationError(f"step-refinement check failed: discrepancy {err:.3e}")
    return z1


def field_rhs(u: VectorFieldFT):
    """``f(t, z)`` for :func:`ode_integrate` from a real Fourier-Taylor field."""
    return lambda t, z: evaluate(u, z, t)


@dataclass(frozen=True)
class ConjugacyProbe:
    points: np.ndarray
    T: float
    tol: float = 1e-12
    box: float = 1e3

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if np.any(np.abs(pts) >= self.box):
            raise ContractError("probe points must lie inside the validity box")
        object.__setattr__(self, "points", pts)


def conjugacy_check(original: VectorFieldFT, transformed: VectorFieldFT, change,
                    probe: ConjugacyProbe) -> float:
    """max_i |Z(T) - change(z(T), T)| where z solves the original system
    from ``z_i`` and Z solves the transformed one from ``change(z_i, 0)``."""
    f_old, f_new = field_rhs(original), field_rhs(transformed)
    worst = 0.0
    for z in probe.points:
        zT = ode_integrate(f_old, z, 0.0, probe.T, probe.tol, box=probe.box)
        Z0 = np.asarray(change(z, 0.0))
        ZT = ode_integrate(f_new, Z0, 0.0, probe.T, probe.tol, box=probe.box)
        worst = max(worst, float(np.max(np.abs(ZT - np.asarray(change(zT, probe.T))))))
    return worst


# --- shared benchmark set-ups -------------------------------------------------

DEFAULT_A = np.array([[0.3, 1.0], [1.0, -0.2]])


def linear_benchmark(seed: int, K: int = 3, N: int = 2, A=DEFAULT_A, degree: int | None = None,
                     quad_scale: float = 0.0) -> BenchmarkFamily:
    """Linear family with random complex perturbation modes ``1 <= k <= K``.

    Modes carry terms of degree 1..``degree`` (default N) with weight ``1/k``;
    ``quad_scale`` scales the terms of degree >= 2.
    """
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    rng = np.random.default_rng(seed)
    b = get_basis(m, N)
    deg = N if degree is None else degree
    arr = np.zeros((m, K + 1, b.size), dtype=complex)
    for k in range(1, K + 1):
        c = rng.normal(size=(m, b.size)) + 1j * rng.normal(size=(m, b.size))
        w = np.where(b.degree == 1, 1.0, quad_scale)
        w = np.where((b.degree == 0) | (b.degree > deg), 0.0, w)
        arr[:, k] = c * w / k
    return BenchmarkFamily("linear", VectorFieldFT(array=arr, N=N), A)


def engine_vs_oracle(family: BenchmarkFamily, eps: float, s: float, points, *, ds: float = 0.01,
                     method: str = "lawson") -> float:
    """Largest relative deviation over modes k >= 1 between a linearized engine
    run and the closed form, evaluated at ``points`` of shape (m, n)."""
    p = family.perturbation
    st = AveragingState(0.0, eps, family.field(eps), "linearized", TruncationPolicy(p.K, p.N))
    out, _ = run_to(st, s, ds, method=method)
    worst = 0.0
    for k in range(1, p.K + 1):
        ex = explicit_solution(family, k, eps, s, points) * eps
        en = eval_mode_array(out.array, p.basis, k, points)
        scale = np.max(np.abs(ex))
        if scale > 0:
            worst = max(worst, float(np.max(np.abs(ex - en)) / scale))
    return worst
