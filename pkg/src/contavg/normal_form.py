"""Exponentially accurate averaging of the forced pendulum.

Running the Hamiltonian averaging flow to ``s = c / eps`` turns

    eps (y^2/2 + (1 + 2B cos t) cos x)

into ``eps (H0 + eps H1 + R(t))`` with ``R`` of size ``O(e^{-c/eps})``.
The expansion is about the saddle (0, 0); the majorant weight ``rho`` of the
policy sets the polydisk on which the remainder is measured.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .engine import AveragingState, BlowUpError, RunReport, remainder_norm, run_to
from .ftseries import ContractError, FourierTaylorSeries, HamiltonianFT, TruncationPolicy, cos_series
from .pendulum import PendulumParams, pendulum_hamiltonian


@dataclass(frozen=True)
class NormalForm:
    """``H0`` (unperturbed pendulum), ``H1`` (the O(eps) mean correction) and the
    remainder bound ``||H_osc|| / eps`` at the parameter ``s`` reached."""

    H0: HamiltonianFT
    H1: HamiltonianFT
    remainder: float
    s: float
    eps: float
    report: RunReport
    state: AveragingState


def pendulum_h0(K: int, N: int) -> HamiltonianFT:
    y = FourierTaylorSeries.variable(2, K, N, 1)
    return HamiltonianFT(y * y * 0.5 + cos_series(2, K, N, 0))


def normal_form_reduce(params: PendulumParams, c_target: float,
                       policy: TruncationPolicy | None = None, *, ds: float | None = None,
                       method: str = "rk4") -> NormalForm:
    """Average to ``s = c_target / eps`` and split the mean part as ``H0 + eps H1``.

    Raises :class:`BlowUpError` (carrying the state at the ``s`` reached) if
    the truncated flow diverges.
    """
    if not 0 <= c_target < math.pi / 2:
        raise ContractError("c_target must lie in [0, pi/2)")
    policy = policy or TruncationPolicy(K=1, N=16, rho=0.5)
    eps = params.eps
    H = pendulum_hamiltonian(eps, params.B, policy.K, policy.N)
    st = AveragingState(0.0, eps, H, "nonautonomous", policy)
    out, rep = run_to(st, c_target / eps, ds, method=method)
    h0 = pendulum_h0(policy.K, policy.N)
    mean = out.field.mean() * (1.0 / eps)
    H1 = (mean - h0) * (1.0 / eps)
    return NormalForm(h0, H1, remainder_norm(out) / eps, out.s, eps, rep, out)


__all__ = ["NormalForm", "normal_form_reduce", "pendulum_h0", "BlowUpError"]
