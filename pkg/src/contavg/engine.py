"""Integration of the continuous-averaging flow in the auxiliary parameter s.

Vector-field mode evolves ``u`` by

* ``nonautonomous``: ``u_s = (xi u)_t - [xi u, u]``
* ``autonomous``:    ``u_s = -[xi u, u]``
* ``linearized``:    ``u^k_s = -|k| u^k + i sign(k) [u^0, u^k]`` (no mode coupling)

Hamiltonian mode evolves ``H`` with ``u = J grad H``; since
``J grad {f, g} = -[J grad f, J grad g]`` the same flows read
``H_s = (xi H)_t + {xi H, H}`` and ``H^k_s = -|k| H^k - i sign(k) {H^0, H^k}``.

The small parameter is carried inside the coefficients (``u = eps * v``), so
the eps factors of the mode equations come out of the brackets.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ftseries import (
    ContractError, HamiltonianFT, FourierTaylorSeries, TruncationPolicy, VectorFieldFT,
    commutator_arrays, ddt_array, degree_from_size, diff_array, enforce_reality, eval_array,
    get_basis, poisson_arrays, weighted_norm, weighted_norm_array, xi_array,
)

VARIANTS = ("autonomous", "nonautonomous", "linearized")
METHODS = ("rk4", "lawson")


class BlowUpError(RuntimeError):
    """The weighted norm exceeded the configured bound; ``state`` is the last
    finite state reached."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


class OutOfDomainError(RuntimeError):
    pass


@dataclass(frozen=True)
class AveragingState:
    s: float
    eps: float
    field: VectorFieldFT | HamiltonianFT
    variant: str = "nonautonomous"
    policy: TruncationPolicy | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        if self.s < 0:
            raise ContractError("s must be >= 0")
        if self.eps < 0:
            raise ContractError("eps must be >= 0")
        if not isinstance(self.field, (VectorFieldFT, HamiltonianFT)):
            raise ContractError("field must be a VectorFieldFT or HamiltonianFT")
        if self.policy is None:
            object.__setattr__(self, "policy", TruncationPolicy(K=max(self.field.K, 1),
                                                                N=max(self.field.N, 1)))
        elif (self.policy.K, self.policy.N) != (self.field.K, self.field.N):
            raise ContractError("policy (K, N) must match the field truncation")

    @property
    def hamiltonian(self) -> bool:
        return isinstance(self.field, HamiltonianFT)

    @property
    def array(self) -> np.ndarray:
        return self.field.coeffs if self.hamiltonian else self.field.array

    @property
    def basis(self):
        return self.field.h.basis if self.hamiltonian else self.field.basis

    def with_array(self, a: np.ndarray, s: float) -> "AveragingState":
        if self.hamiltonian:
            f = HamiltonianFT(FourierTaylorSeries(2, self.field.K, self.field.N, a))
        else:
            f = VectorFieldFT(array=a, N=self.field.N)
        return replace(self, field=f, s=s)


@dataclass
class RunReport:
    """Per-step diagnostics of a run.

    ``mode_norms[i, k]`` is the weighted norm of the single mode ``u^k``
    (not counting its mirror ``u^{-k}``) after step ``i``. Row 0 is the
    initial state.
    """

    s: list = field(default_factory=list)
    ds: list = field(default_factory=list)
    mode_norms: list = field(default_factory=list)
    dropped_mass: list = field(default_factory=list)
    snapshots: list | None = None

    def append(self, s, ds, norms, dropped):
        self.s.append(float(s))
        self.ds.append(float(ds))
        self.mode_norms.append(np.asarray(norms, dtype=float))
        self.dropped_mass.append(float(dropped))

    def to_csv(self, path):
        """Columns ``s, k, weighted_mode_norm, dropped_mass``; one row per (step, k)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "k", "weighted_mode_norm", "dropped_mass"])
            for s, norms, dm in zip(self.s, self.mode_norms, self.dropped_mass):
                for k, v in enumerate(norms):
                    w.writerow([repr(s), k, repr(float(v)), repr(dm)])


def default_ds(K: int) -> float:
    """RK4 stability for the -|k| u^k term needs ds*K below ~2.7."""
    return min(0.01, 0.1 / K)


def stop_parameter(alpha: float, eps: float) -> float:
    """Averaging length ``s = alpha / eps``."""
    if eps <= 0:
        raise ContractError("eps must be positive")
    return alpha / eps


# ---------------------------------------------------------------------------

def _bracket(f, g, basis, hamiltonian):
    """Vector commutator [f, g], or the Poisson bracket {f, g} in Hamiltonian mode."""
    if hamiltonian:
        return poisson_arrays(f, g, basis)
    return commutator_arrays(f, g, basis)


def rhs_array(a: np.ndarray, basis, variant: str, hamiltonian: bool) -> np.ndarray:
    K = a.shape[-2] - 1
    if variant == "linearized":
        mean = np.zeros_like(a)
        mean[..., 0, :] = a[..., 0, :]
        if hamiltonian:
            br = -poisson_arrays(mean, a, basis)
        else:
            br = commutator_arrays(mean, a, basis)
        out = 1j * br - np.arange(K + 1)[:, None] * a
        out[..., 0, :] = 0.0
        return out
    f = xi_array(a)
    br = _bracket(f, a, basis, hamiltonian)
    # Hamiltonian: H_s = (xi H)_t + {xi H, H}; vector: u_s = (xi u)_t - [xi u, u]
    out = br if hamiltonian else -br
    if variant == "nonautonomous":
        out = out + ddt_array(f)
    return out


def rhs(state: AveragingState, blowup_bound: float | None = None):
    """Exact truncated right-hand side ``du/ds`` (same type as ``state.field``)."""
    if blowup_bound is not None:
        n = weighted_norm(state.field, state.policy)
        if n > blowup_bound:
            raise BlowUpError(f"weighted norm {n:.3e} exceeds bound {blowup_bound:.3e}", state)
    out = rhs_array(state.array, state.basis, state.variant, state.hamiltonian)
    return state.with_array(out, state.s).field


def _linear_rate(state: AveragingState) -> np.ndarray:
    K = state.field.K
    if state.variant == "autonomous":
        return np.zeros(K + 1)
    return np.arange(K + 1, dtype=float)


def _step_array(a, ds, basis, variant, hamiltonian, method, rate):
    f = lambda x: rhs_array(x, basis, variant, hamiltonian)
    if method == "rk4":
        k1 = f(a)
        k2 = f(a + 0.5 * ds * k1)
        k3 = f(a + 0.5 * ds * k2)
        k4 = f(a + ds * k3)
        return a + ds / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), k1
    # Lawson (integrating-factor) RK4 with L = -|k|; N(u) = rhs(u) + |k| u
    E1 = np.exp(-rate * ds)[:, None]
    Eh = np.exp(-rate * ds / 2)[:, None]
    n = lambda x: f(x) + rate[:, None] * x
    k1 = n(a)
    k2 = n(Eh * (a + 0.5 * ds * k1))
    k3 = n(Eh * a + 0.5 * ds * k2)
    k4 = n(E1 * a + ds * Eh * k3)
    new = E1 * a + ds / 6.0 * (E1 * k1 + 2 * Eh * (k2 + k3) + k4)
    return new, k1 - rate[:, None] * a


def step(state: AveragingState, ds: float, method: str = "rk4") -> AveragingState:
    """One explicit step of size ``ds`` (classical RK4 or Lawson RK4)."""
    if ds < 0:
        raise ContractError("ds must be >= 0")
    if ds == 0:
        return state
    if method not in METHODS:
        raise ContractError(f"unknown method {method!r}")
    new, _ = _step_array(state.array, ds, state.basis, state.variant, state.hamiltonian,
                         method, _linear_rate(state))
    if not np.all(np.isfinite(new)):
        raise BlowUpError("non-finite coefficients", state)
    return state.with_array(enforce_reality(new), state.s + ds)


def run_to(state: AveragingState, s_target: float, ds: float | None = None, *,
           method: str = "rk4", blowup_factor: float = 1e6, record: bool = False):
    """Integrate to ``s_target``; returns ``(state, RunReport)``.

    The step is shrunk uniformly so that the grid lands on ``s_target``.
    With ``record=True`` the report keeps ``(s, xi u, xi u_s)`` on the grid
    for :func:`transported_change`.

    Raises :class:`BlowUpError` (carrying the last finite state) when the
    weighted norm exceeds ``blowup_factor`` times its initial value.
    """
    if s_target < state.s:
        raise ContractError(f"s_target {s_target} < current s {state.s}")
    if method not in METHODS:
        raise ContractError(f"unknown method {method!r}")
    ds = default_ds(state.field.K) if ds is None else float(ds)
    if ds <= 0:
        raise ContractError("ds must be positive")
    span = s_target - state.s
    nsteps = int(math.ceil(span / ds - 1e-9)) if span > 0 else 0
    h = span / nsteps if nsteps else 0.0

    pol = state.policy
    basis = state.basis
    ham = state.hamiltonian
    rate = _linear_rate(state)
    norm0 = weighted_norm(state.field, pol)
    bound = blowup_factor * norm0 if norm0 > 0 else math.inf
    report = RunReport(snapshots=[] if record else None)
    a = state.array
    report.append(state.s, 0.0, weighted_norm_array(a, basis, pol.rho, pol.q, per_mode=True), 0.0)
    s = state.s
    current = state
    for i in range(nsteps):
        new, deriv = _step_array(a, h, basis, state.variant, ham, method, rate)
        if record:
            report.snapshots.append((s, xi_array(a), xi_array(deriv)))
        s_new = state.s + (i + 1) * h
        if not np.all(np.isfinite(new)):
            raise BlowUpError(f"non-finite coefficients at s={s_new:.6g}", current)
        new = enforce_reality(new)
        dropped = 0.0
        if pol.drop_eps > 0:
            small = (np.abs(new) < pol.drop_eps) & (new != 0)
            dropped = float(np.abs(new[small]).sum())
            new[small] = 0.0
        norms = weighted_norm_array(new, basis, pol.rho, pol.q, per_mode=True)
        total = norms[0] + 2 * norms[1:].sum()
        if not total <= bound:
            raise BlowUpError(
                f"weighted norm {total:.3e} exceeds {bound:.3e} at s={s_new:.6g}", current)
        a = new
        s = s_new
        current = state.with_array(a, s)
        report.append(s, h, norms, dropped)
    if record:
        deriv = rhs_array(a, basis, state.variant, ham)
        report.snapshots.append((s, xi_array(a), xi_array(deriv)))
    return current, report


def remainder_norm(state: AveragingState, policy: TruncationPolicy | None = None) -> float:
    """Weighted norm of the t-dependent part (field minus its mode-0 projection)."""
    pol = policy or state.policy
    return weighted_norm(state.field.oscillating(), pol)


# ---------------------------------------------------------------------------
# the coordinate change dZ/ds = xi u(Z, t, s)

def _snapshot_fields(snapshots, hamiltonian):
    """Recorded (s, xi u, xi u_s) as vector-field arrays."""
    if not hamiltonian:
        return snapshots
    out = []
    for s, f, df in snapshots:
        basis = get_basis(2, degree_from_size(2, f.shape[-1]))
        to_field = lambda h: np.stack([diff_array(h, basis, 1), -diff_array(h, basis, 0)])
        out.append((s, to_field(f), to_field(df)))
    return out


def transported_change(report: RunReport, z0, t: float, *, box: float = 1e3,
                       hamiltonian: bool = False, N: int | None = None):
    """Image ``Z(z0, s_final)`` of the flow ``dZ/ds = xi u(Z, t, s)`` at fixed t.

    ``report`` must come from ``run_to(..., record=True)``. Between grid points
    ``xi u`` is the cubic Hermite interpolant of the recorded values and
    s-derivatives; the ODE is integrated by RK4 on the recorded grid.
    """
    snaps = report.snapshots
    if snaps is None:
        raise ContractError("run was not recorded (use record=True)")
    snaps = _snapshot_fields(snaps, hamiltonian)
    z = np.array(z0, dtype=float if np.isrealobj(z0) else complex)
    if len(snaps) < 2:
        return z
    m = snaps[0][1].shape[0]
    basis = get_basis(m, N if N is not None else degree_from_size(m, snaps[0][1].shape[-1]))

    def ev(a, p):
        return eval_array(a, basis, p, t)

    for (s0, f0, d0), (s1, f1, d1) in zip(snaps[:-1], snaps[1:]):
        h = s1 - s0
        fm = 0.5 * (f0 + f1) + h / 8.0 * (d0 - d1)
        k1 = ev(f0, z)
        k2 = ev(fm, z + 0.5 * h * k1)
        k3 = ev(fm, z + 0.5 * h * k2)
        k4 = ev(f1, z + h * k3)
        z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.abs(z) < box):
            raise OutOfDomainError(f"change left the box |Z| < {box} at s={s1:.6g}")
    return z

