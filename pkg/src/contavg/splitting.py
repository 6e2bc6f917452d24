"""Stable and unstable manifolds of the forced pendulum's saddle, their
homoclinic intersections and the lobe area between them.

Manifold points are generated as ``P^j(p + sigma v)`` for seeds ``sigma`` in
one fundamental domain ``[delta, lambda delta)`` along the eigenvector ``v``.
Each point remembers ``(j, sigma)``, so a point of the manifold with a
prescribed x-coordinate can be recomputed to full precision by Newton's method
in ``log sigma`` (derivatives by complex step). Splines of the polylines only
serve to locate brackets; the reported homoclinic points and the lobe area
use these recomputed points.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .ftseries import ContractError
from .melnikov import area_paper, melnikov_lobe
from .pendulum import FixedPoint, PendulumParams, hyperbolic_fixed_point, poincare_map

TWO_PI = 2 * math.pi
# splittings whose largest |Y_u - Y_s| in the window is below this are not measurable
DELTA_FLOOR = 1e-11


class SeedingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ManifoldSegment:
    """Ordered polyline of one branch of W^u or W^s on the section ``t = t0``.

    ``level[i]`` and ``sigma[i]`` record that ``points[:, i] = P^{+-level}(p + sigma v)``.
    """

    branch: str
    points: np.ndarray
    section_phase: float
    params: PendulumParams
    fixed: FixedPoint
    side: int
    level: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    delta: float = 0.0
    n_steps: int | None = None

    @property
    def direction(self) -> np.ndarray:
        v = self.fixed.v_u if self.branch == "unstable" else self.fixed.v_s
        return self.side * v

    @property
    def stretch(self) -> float:
        lam = self.fixed.lam_u if self.branch == "unstable" else 1.0 / self.fixed.lam_s
        return abs(lam)

    def seed(self, sigma):
        sigma = np.asarray(sigma)
        return self.fixed.point[:, None] + self.direction[:, None] * sigma[None, :]

    def evolve(self, sigma, j):
        """``P^{+-j}(seed(sigma))``; ``j`` may be an array (one level per point)."""
        sigma = np.atleast_1d(sigma)
        j = np.broadcast_to(np.asarray(j, dtype=int), sigma.shape)
        z = self.seed(sigma)
        out = np.empty_like(z)
        done = j == 0
        out[:, done] = z[:, done]
        for level in range(1, int(j.max(initial=0)) + 1):
            z = poincare_map(self.params, z, self.section_phase,
                             inverse=self.branch == "stable", n_steps=self.n_steps,
                             escape=np.inf)
            hit = j == level
            out[:, hit] = z[:, hit]
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["branch", "t0", "j", "sigma", "x", "y"])
            for j, s, (x, y) in zip(self.level, self.sigma, self.points.T):
                w.writerow([self.branch, repr(self.section_phase), int(j), repr(float(s)),
                            repr(float(x)), repr(float(y))])


def _choose_delta(params, fp, v, t0, inverse, tol=1e-13, delta=1e-6, floor=1e-10, n_steps=None):
    """Largest delta (by halving) whose seed is mapped onto the eigenline to ``tol``."""
    while delta >= floor:
        q = poincare_map(params, fp.point + delta * v, t0, inverse=inverse, n_steps=n_steps)
        d = q - fp.point
        off = abs(d[0] * v[1] - d[1] * v[0])
        if off <= tol:
            return delta
        delta /= 2
    raise SeedingError("seed offset from the eigenline stays above tolerance")


def manifold_segment(params: PendulumParams, branch: str, t0: float = 0.0, n_points: int = 200,
                     fundamental_len: int | None = None, *, side: int | None = None,
                     reach: float | None = None, fixed: FixedPoint | None = None,
                     n_steps: int | None = None) -> ManifoldSegment:
    """Grow one branch from the saddle at the origin.

    ``n_points`` seeds per fundamental domain; ``fundamental_len`` is the
    number of map iterates (fundamental domains) beyond the seed domain. If it
    is None the segment is grown until ``|x - x_fp|`` exceeds ``reach``
    (default: past the far end of the primary lobes).
    ``side = +1`` follows ``+v`` (x increasing away from the saddle); the
    default picks the upper-half-plane branch (``+v_u``, ``-v_s``).
    """
    if branch not in ("stable", "unstable"):
        raise ContractError(f"branch must be 'stable' or 'unstable', got {branch!r}")
    if n_points < 2:
        raise ContractError("n_points must be >= 2")
    fp = fixed or hyperbolic_fixed_point(params, t0, n_steps=n_steps)
    if side is None:
        side = 1 if branch == "unstable" else -1
    inverse = branch == "stable"
    v = side * (fp.v_u if branch == "unstable" else fp.v_s)
    lam = abs(fp.lam_u) if branch == "unstable" else abs(1.0 / fp.lam_s)
    delta = _choose_delta(params, fp, v, t0, inverse, n_steps=n_steps)
    if reach is None:
        reach = math.pi + 2.6 * math.pi * params.eps + 0.2
    sig = delta * lam ** (np.arange(n_points) / n_points)
    z = fp.point[:, None] + v[:, None] * sig[None, :]
    pts, lev = [z], [np.zeros(n_points, dtype=int)]
    j = 0
    while True:
        if fundamental_len is not None and j >= fundamental_len:
            break
        if fundamental_len is None and np.max(np.abs(z[0] - fp.point[0])) >= reach:
            break
        if j > 200:
            raise SeedingError("segment failed to reach the requested extent")
        z = poincare_map(params, z, t0, inverse=inverse, n_steps=n_steps, escape=np.inf)
        j += 1
        pts.append(z)
        lev.append(np.full(n_points, j))
    return ManifoldSegment(branch, np.concatenate(pts, axis=1), float(t0), params, fp, side,
                           np.concatenate(lev), np.tile(sig, len(pts)), delta, n_steps)


def manifold_y_at(seg: ManifoldSegment, x, shift: float = 0.0, iters: int = 8):
    """Points of ``seg`` (shifted by ``shift`` in x) with prescribed abscissae.

    Newton in ``u = log sigma`` within the fundamental domain that brackets
    each target; derivatives by complex step. Returns ``y`` values.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    px = seg.points[0] + shift
    sgn = 1.0 if px[-1] > px[0] else -1.0
    order = sgn * px
    if np.any(np.diff(order) <= 0):
        raise ContractError("segment is not a graph over x")
    idx = np.searchsorted(order, sgn * x) - 1
    if np.any(idx < 0) or np.any(idx >= px.size - 1):
        raise ContractError("target abscissa outside the segment")
    ja, jb = seg.level[idx], seg.level[idx + 1]
    ua = np.log(seg.sigma[idx])
    ub = np.log(seg.sigma[idx + 1]) + (jb - ja) * math.log(seg.stretch)
    # start from linear interpolation in x
    w = (x - px[idx]) / (px[idx + 1] - px[idx])
    u = ua + w * (ub - ua)
    h = 1e-20
    for _ in range(iters):
        z = seg.evolve(np.exp(u + 1j * h), ja)
        fx = z[0].real + shift - x
        u = np.clip(u - fx / (z[0].imag / h), ua - 1.0, ub + 1.0)
        if np.max(np.abs(fx)) < 1e-14:
            break
    return seg.evolve(np.exp(u), ja)[1]


@dataclass(frozen=True)
class LobeRecord:
    eps: float
    B: float
    area_measured: float
    area_melnikov: float
    area_paper: float
    homoclinic_points: tuple
    section_phase: float = 0.0

    @property
    def rel_err_melnikov(self) -> float:
        return abs(self.area_measured - self.area_melnikov) / self.area_melnikov

    @property
    def ratio_to_paper(self) -> float:
        return self.area_measured / self.area_paper


@dataclass(frozen=True)
class BelowFloor:
    """No measurable splitting: the manifolds agree to within the floor."""

    eps: float
    B: float
    max_gap: float
    section_phase: float = 0.0
    below_floor: bool = True


def _stable_shift(stable: ManifoldSegment, unstable: ManifoldSegment) -> float:
    # a left-going stable branch of the saddle at 0 is the branch of 2pi seen from the left
    if np.mean(stable.points[0]) < unstable.fixed.point[0]:
        return TWO_PI
    return 0.0


def homoclinic_and_lobe(params: PendulumParams, stable_seg: ManifoldSegment,
                        unstable_seg: ManifoldSegment, *, window: float | None = None,
                        n_grid: int = 2000, n_gauss: int = 48, tol: float = 1e-12):
    """Lobe between the two adjacent homoclinic points nearest ``x = pi``.

    Returns a :class:`LobeRecord`, or :class:`BelowFloor` when the gap
    between the manifolds never exceeds the measurable floor.
    """
    shift = _stable_shift(stable_seg, unstable_seg)
    if window is None:
        window = 1.25 * TWO_PI * params.eps
    lo, hi = math.pi - window, math.pi + window
    xu, yu = unstable_seg.points
    xs, ys = stable_seg.points[0] + shift, stable_seg.points[1]
    if xu.max() < hi or xs.min() > lo:
        raise ContractError("segments do not cover the homoclinic window")
    ou, os_ = np.argsort(xu), np.argsort(xs)
    su = CubicSpline(xu[ou], yu[ou])
    ss = CubicSpline(xs[os_], ys[os_])
    grid = np.linspace(lo, hi, n_grid)
    gap = su(grid) - ss(grid)
    if np.max(np.abs(gap)) < DELTA_FLOOR:
        return BelowFloor(params.eps, params.B, float(np.max(np.abs(gap))), stable_seg.section_phase)
    sc = np.nonzero(np.sign(gap[:-1]) * np.sign(gap[1:]) < 0)[0]
    roots = [brentq(lambda x: su(x) - ss(x), grid[i], grid[i + 1], xtol=1e-14) for i in sc]
    if len(roots) < 2:
        return BelowFloor(params.eps, params.B, float(np.max(np.abs(gap))), stable_seg.section_phase)
    roots = np.array(roots)

    def exact_gap(x):
        return manifold_y_at(unstable_seg, x) - manifold_y_at(stable_seg, x, shift)

    # Newton on the exact gap, slope from the splines
    for _ in range(6):
        g = exact_gap(roots)
        roots = roots - g / (su(roots, 1) - ss(roots, 1))
        if np.max(np.abs(g)) <= tol:
            break
    mids = 0.5 * (roots[:-1] + roots[1:])
    i = int(np.argmin(np.abs(mids - math.pi)))
    a, b = roots[i], roots[i + 1]
    nodes, weights = np.polynomial.legendre.leggauss(n_gauss)
    xq = 0.5 * (b - a) * nodes + 0.5 * (a + b)
    area = abs(0.5 * (b - a) * np.sum(weights * exact_gap(xq)))
    ya = float(manifold_y_at(unstable_seg, a)[0])
    yb = float(manifold_y_at(unstable_seg, b)[0])
    mel = melnikov_lobe(params)
    return LobeRecord(params.eps, params.B, float(area), mel.area, area_paper(params.eps, params.B),
                      ((float(a), ya), (float(b), yb)), stable_seg.section_phase)


def measure_lobe(params: PendulumParams, t0: float = 0.0, n_points: int = 200,
                 n_steps: int | None = None):
    """Full pipeline for one (eps, B) cell on the section ``t = t0``."""
    fp = hyperbolic_fixed_point(params, t0, n_steps=n_steps)
    un = manifold_segment(params, "unstable", t0, n_points, fixed=fp, n_steps=n_steps)
    st = manifold_segment(params, "stable", t0, n_points, fixed=fp, n_steps=n_steps)
    return homoclinic_and_lobe(params, st, un)


LOBE_COLUMNS = ["eps", "B", "area_measured", "area_melnikov", "area_paper", "rel_err_melnikov",
                "ratio_to_paper"]


def lobe_row(rec) -> dict:
    if isinstance(rec, BelowFloor):
        return {"eps": rec.eps, "B": rec.B, "area_measured": float("nan"),
                "area_melnikov": melnikov_lobe(PendulumParams(rec.eps, rec.B)).area,
                "area_paper": area_paper(rec.eps, rec.B), "rel_err_melnikov": float("nan"),
                "ratio_to_paper": float("nan")}
    return {"eps": rec.eps, "B": rec.B, "area_measured": rec.area_measured,
            "area_melnikov": rec.area_melnikov, "area_paper": rec.area_paper,
            "rel_err_melnikov": rec.rel_err_melnikov, "ratio_to_paper": rec.ratio_to_paper}
