"""Truncated Fourier-Taylor series and vector fields.

A scalar series is

    u(z, t) = sum_{|k| <= K} sum_{|a| <= N} c[k, a] z^a e^{ikt}

in ``m`` phase variables ``z``. Only modes ``k >= 0`` are stored; modes
``k < 0`` are the complex conjugates, so every series is real on real
``(z, t)`` by construction. Taylor monomials are kept in graded order, which
makes truncation to a lower degree a prefix slice.

Sign conventions (pinned by tests):

* vector commutator ``[u1, u2] = D(u2) u1 - D(u1) u2``;
* Poisson bracket ``{f, g} = f_x g_y - f_y g_x``;
* Hamiltonian field ``J grad h = (h_y, -h_x)``;
* hence ``J grad {h1, h2} = -[J grad h1, J grad h2]``.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class ContractError(ValueError):
    """Operands violate a precondition (shape, truncation, dimension)."""


class NormOverflowWarning(RuntimeWarning):
    """A weighted norm saturated at the largest finite float."""


@dataclass(frozen=True)
class TruncationPolicy:
    """Truncation and norm weights.

    K, N are the Fourier and Taylor cutoffs. Coefficients with modulus
    below ``drop_eps`` are zeroed by :func:`truncate`. ``rho`` is the Taylor
    weight (polydisk radius) and ``q`` the Fourier weight (strip half-width).
    """

    K: int
    N: int
    drop_eps: float = 0.0
    rho: float = 1.0
    q: float = 0.0

    def __post_init__(self):
        if self.K < 1 or self.N < 1:
            raise ContractError(f"need K >= 1 and N >= 1, got K={self.K}, N={self.N}")
        if not self.drop_eps >= 0:
            raise ContractError("drop_eps must be >= 0")
        if not self.rho > 0:
            raise ContractError("rho must be > 0")
        if not self.q >= 0:
            raise ContractError("q must be >= 0")


class Basis:
    """Graded monomial basis in ``m`` variables up to degree ``N`` with
    precomputed product and derivative tables."""

    def __init__(self, m: int, N: int):
        self.m = m
        self.N = N
        exps = []
        for d in range(N + 1):
            # graded, lexicographically descending inside a degree
            for e in itertools.product(range(d, -1, -1), repeat=m):
                if sum(e) == d:
                    exps.append(e)
        self.exponents = np.array(exps, dtype=np.int64).reshape(len(exps), m)
        self.size = len(exps)
        self.degree = self.exponents.sum(axis=1)
        self.index = {e: i for i, e in enumerate(exps)}
        # size of the prefix holding degrees <= d
        self.prefix = np.searchsorted(self.degree, np.arange(N + 1), side="right")

        pi, pj, tgt = [], [], []
        for i, ei in enumerate(exps):
            for j, ej in enumerate(exps):
                if self.degree[i] + self.degree[j] <= N:
                    pi.append(i)
                    pj.append(j)
                    tgt.append(self.index[tuple(a + b for a, b in zip(ei, ej))])
        self.pair_i = np.array(pi, dtype=np.int64)
        self.pair_j = np.array(pj, dtype=np.int64)
        self.pair_tgt = np.array(tgt, dtype=np.int64)

        # d/dz_v: monomial src (exponent e_v >= 1) -> tgt with factor e_v
        self.deriv = []
        for v in range(m):
            src, dst, fac = [], [], []
            for i, e in enumerate(exps):
                if e[v] >= 1:
                    f = list(e)
                    f[v] -= 1
                    src.append(i)
                    dst.append(self.index[tuple(f)])
                    fac.append(e[v])
            self.deriv.append((np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                               np.array(fac, dtype=float)))


@lru_cache(maxsize=None)
def get_basis(m: int, N: int) -> Basis:
    return Basis(m, N)


@lru_cache(maxsize=None)
def _mode_pairs(K: int):
    """Index pairs (i1, i2) into the full range -K..K with 0 <= k1 + k2 <= K."""
    ks = np.arange(-K, K + 1)
    k1, k2 = np.meshgrid(ks, ks, indexing="ij")
    ok = (k1 + k2 >= 0) & (k1 + k2 <= K)
    return (k1[ok] + K).astype(np.int64), (k2[ok] + K).astype(np.int64), (k1 + k2)[ok].astype(np.int64)


# ---------------------------------------------------------------------------
# raw-array kernels; arrays have shape (..., K+1, M) with mode 0 real

def full_spectrum(a: np.ndarray) -> np.ndarray:
    """Modes -K..K along axis -2 from the stored half spectrum."""
    neg = np.conj(a[..., :0:-1, :])
    return np.concatenate([neg, a], axis=-2)


def enforce_reality(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a[..., 0, :] = a[..., 0, :].real
    return a


def mul_arrays(a: np.ndarray, b: np.ndarray, basis: Basis) -> np.ndarray:
    """Truncated product of two half-spectrum arrays (broadcast over leading axes)."""
    K = a.shape[-2] - 1
    M = basis.size
    lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    A = full_spectrum(np.broadcast_to(a, lead + a.shape[-2:]))
    B = full_spectrum(np.broadcast_to(b, lead + b.shape[-2:]))
    i1, i2, kt = _mode_pairs(K)
    X = A[..., i1, :][..., basis.pair_i] * B[..., i2, :][..., basis.pair_j]
    idx = (kt[:, None] * M + basis.pair_tgt[None, :]).ravel()
    nb = int(np.prod(lead)) if lead else 1
    X = X.reshape(nb, -1)
    size = (K + 1) * M
    offs = (np.arange(nb)[:, None] * size + idx[None, :]).ravel()
    re = np.bincount(offs, weights=X.real.ravel(), minlength=nb * size)
    im = np.bincount(offs, weights=X.imag.ravel(), minlength=nb * size)
    out = (re + 1j * im).reshape(lead + (K + 1, M))
    out[..., 0, :] = out[..., 0, :].real
    return out


def diff_array(a: np.ndarray, basis: Basis, var: int) -> np.ndarray:
    src, dst, fac = basis.deriv[var]
    out = np.zeros_like(a)
    out[..., dst] = a[..., src] * fac
    return out


def xi_array(a: np.ndarray) -> np.ndarray:
    out = 1j * a
    out[..., 0, :] = 0.0
    return out


def ddt_array(a: np.ndarray) -> np.ndarray:
    K = a.shape[-2] - 1
    return a * (1j * np.arange(K + 1))[:, None]


def commutator_arrays(u1: np.ndarray, u2: np.ndarray, basis: Basis) -> np.ndarray:
    """[u1, u2]_i = sum_j u1_j d_j u2_i - u2_j d_j u1_i for arrays (m, K+1, M)."""
    m = basis.m
    d2 = np.stack([diff_array(u2, basis, j) for j in range(m)])  # (j, i, K+1, M)
    d1 = np.stack([diff_array(u1, basis, j) for j in range(m)])
    left = mul_arrays(u1[:, None], d2, basis).sum(axis=0)
    right = mul_arrays(u2[:, None], d1, basis).sum(axis=0)
    return left - right


def poisson_arrays(f: np.ndarray, g: np.ndarray, basis: Basis) -> np.ndarray:
    fx, fy = diff_array(f, basis, 0), diff_array(f, basis, 1)
    gx, gy = diff_array(g, basis, 0), diff_array(g, basis, 1)
    prods = mul_arrays(np.stack([fx, fy]), np.stack([gy, gx]), basis)
    return prods[0] - prods[1]


def weighted_norm_array(a: np.ndarray, basis: Basis, rho: float, q: float, per_mode=False):
    """sum |c| rho^|a| e^{q|k|} over modes -K..K (k and -k both counted)."""
    K = a.shape[-2] - 1
    with np.errstate(over="ignore"):
        wk = np.exp(q * np.arange(K + 1))
        wt = float(rho) ** basis.degree.astype(float)
        mode = (np.abs(a) * wt).sum(axis=-1)
        while mode.ndim > 1:
            mode = mode.sum(axis=0)
        mode = mode * wk
    if per_mode:
        return mode
    total = float(mode[0] + 2.0 * mode[1:].sum())
    if not math.isfinite(total):
        warnings.warn("weighted norm overflow; saturated", NormOverflowWarning, stacklevel=2)
        return float(np.finfo(float).max)
    return total


def _monomials(z: np.ndarray, basis: Basis) -> np.ndarray:
    """Values of every basis monomial at point(s) z with shape (m, ...)."""
    z = np.asarray(z)
    pw = np.ones((basis.N + 1,) + z.shape, dtype=np.result_type(z, float))
    for p in range(1, basis.N + 1):
        pw[p] = pw[p - 1] * z
    vals = np.ones((basis.size,) + z.shape[1:], dtype=pw.dtype)
    for v in range(basis.m):
        vals = vals * pw[basis.exponents[:, v], v]
    return vals


def eval_array(a: np.ndarray, basis: Basis, z, t) -> np.ndarray:
    """Evaluate a half-spectrum array (..., K+1, M) at z (shape (m, ...)) and time t."""
    z = np.asarray(z)
    t = np.asarray(t, dtype=float)
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(t))):
        raise ContractError("non-finite evaluation point")
    if z.shape[0] != basis.m:
        raise ContractError(f"point has {z.shape[0]} coordinates, series has m={basis.m}")
    pts = z.shape[1:]
    lead = a.ndim - 2
    K = a.shape[-2] - 1
    mono = _monomials(z, basis)
    modes = np.moveaxis(np.tensordot(a, mono, axes=([-1], [0])), lead, 0)  # (K+1, ..., pts)
    ph = np.exp(1j * np.multiply.outer(np.arange(1, K + 1), np.broadcast_to(t, pts)))
    ph = ph.reshape((K,) + (1,) * lead + pts)
    if not np.iscomplexobj(z):
        return modes[0].real + 2.0 * (modes[1:] * ph).real.sum(axis=0)
    # complex z: mode -k carries conj coefficients, not the conj value
    neg = np.moveaxis(np.tensordot(np.conj(a), mono, axes=([-1], [0])), lead, 0)
    return modes[0] + (modes[1:] * ph).sum(axis=0) + (neg[1:] * np.conj(ph)).sum(axis=0)


def eval_mode_array(a: np.ndarray, basis: Basis, k: int, z) -> np.ndarray:
    """Value of the Fourier coefficient of index k (any sign) at z."""
    K = a.shape[-2] - 1
    if abs(k) > K:
        return np.zeros(a.shape[:-2] + np.asarray(z).shape[1:], dtype=complex)
    c = np.take(a, abs(k), axis=a.ndim - 2)
    if k < 0:
        c = np.conj(c)
    return np.tensordot(c, _monomials(np.asarray(z), basis), axes=([-1], [0]))


# ---------------------------------------------------------------------------
# value types

class FourierTaylorSeries:
    """Scalar truncated Fourier-Taylor series.

    Parameters
    ----------
    m : int
        Number of phase variables.
    K, N : int
        Fourier and Taylor cutoffs.
    coeffs : array_like, optional
        Half-spectrum coefficient array of shape ``(K+1, M)`` with ``M`` the
        size of the graded basis. Mode 0 is projected onto its real part.
    """

    __array_priority__ = 100

    def __init__(self, m: int, K: int, N: int, coeffs=None):
        if m < 1 or K < 0 or N < 0:
            raise ContractError("invalid truncation parameters")
        self.m, self.K, self.N = int(m), int(K), int(N)
        self.basis = get_basis(self.m, self.N)
        shape = (self.K + 1, self.basis.size)
        if coeffs is None:
            c = np.zeros(shape, dtype=complex)
        else:
            c = np.asarray(coeffs, dtype=complex)
            if c.shape != shape:
                raise ContractError(f"coefficient shape {c.shape} != {shape}")
            if not np.all(np.isfinite(c)):
                raise ContractError("non-finite coefficients")
        c = enforce_reality(c)
        c.setflags(write=False)
        self._c = c

    # construction helpers
    @classmethod
    def from_terms(cls, m, K, N, terms):
        """Build from ``{(k, alpha): c}``; entries with k < 0 are conjugated
        onto k > 0 and must agree with any explicit positive entry."""
        s = cls(m, K, N)
        c = np.zeros_like(s._c)
        seen = {}
        for (k, alpha), val in terms.items():
            alpha = tuple(alpha)
            if abs(k) > K or sum(alpha) > N:
                continue
            key = (abs(k), s.basis.index[alpha])
            v = complex(val) if k >= 0 else complex(np.conj(val))
            if key in seen and not np.isclose(seen[key], v, rtol=1e-14, atol=0):
                raise ContractError(f"mode {k} of {alpha} is not the conjugate of mode {-k}")
            seen[key] = v
            c[key] = v
        if np.any(c[0].imag != 0):
            raise ContractError("mode-0 coefficients must be real")
        return cls(m, K, N, c)

    @classmethod
    def constant(cls, m, K, N, value: float):
        return cls.from_terms(m, K, N, {(0, (0,) * m): float(value)})

    @classmethod
    def variable(cls, m, K, N, j: int):
        alpha = [0] * m
        alpha[j] = 1
        return cls.from_terms(m, K, N, {(0, tuple(alpha)): 1.0})

    @classmethod
    def from_univariate(cls, m, K, N, var: int, taylor, k: int = 0):
        """Series ``sum_n taylor[n] z_var^n`` placed on Fourier mode k (k >= 0)."""
        terms = {}
        for n, val in enumerate(taylor):
            if n > N:
                break
            alpha = [0] * m
            alpha[var] = n
            terms[(k, tuple(alpha))] = val
        return cls.from_terms(m, K, N, terms)

    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    def coeff(self, k: int, alpha) -> complex:
        if abs(k) > self.K or sum(alpha) > self.N:
            return 0j
        v = self._c[abs(k), self.basis.index[tuple(alpha)]]
        return complex(np.conj(v)) if k < 0 else complex(v)

    def _like(self, c):
        return FourierTaylorSeries(self.m, self.K, self.N, c)

    def _check(self, other):
        if not isinstance(other, FourierTaylorSeries):
            raise ContractError(f"expected FourierTaylorSeries, got {type(other).__name__}")
        if (self.m, self.K, self.N) != (other.m, other.K, other.N):
            raise ContractError(
                f"truncation mismatch {(self.m, self.K, self.N)} vs {(other.m, other.K, other.N)}")

    # arithmetic
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return self + FourierTaylorSeries.constant(self.m, self.K, self.N, other)
        self._check(other)
        return self._like(self._c + other._c)

    __radd__ = __add__

    def __neg__(self):
        return self._like(-self._c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self._like(self._c * float(other))
        self._check(other)
        return self._like(mul_arrays(self._c, other._c, self.basis))

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        return self._like(self._c / float(other))

    def __eq__(self, other):
        return (isinstance(other, FourierTaylorSeries)
                and (self.m, self.K, self.N) == (other.m, other.K, other.N)
                and np.array_equal(self._c, other._c))

    def __repr__(self):
        nz = int(np.count_nonzero(self._c))
        return f"FourierTaylorSeries(m={self.m}, K={self.K}, N={self.N}, nonzero={nz})"

    def diff(self, var: int) -> "FourierTaylorSeries":
        return self._like(diff_array(self._c, self.basis, var))

    def mode(self, k: int) -> "FourierTaylorSeries":
        """Projection onto Fourier modes +-k."""
        c = np.zeros_like(self._c)
        c[abs(k)] = self._c[abs(k)]
        return self._like(c)

    def mean(self) -> "FourierTaylorSeries":
        return self.mode(0)

    def oscillating(self) -> "FourierTaylorSeries":
        return self - self.mean()

    def __call__(self, z, t=0.0):
        return evaluate(self, z, t)

    def to_json(self) -> str:
        return series_to_json(self)


class VectorFieldFT:
    """m-component vector field whose components share (m, K, N).

    Stored as one array of shape ``(m, K+1, M)``.
    """

    def __init__(self, components=None, *, m=None, K=None, N=None, array=None):
        if array is not None:
            a = np.asarray(array, dtype=complex)
            m, K1, M = a.shape
            K = K1 - 1
            N = int(N) if N is not None else degree_from_size(m, M)
            self.m, self.K, self.N = int(m), int(K), int(N)
            self.basis = get_basis(self.m, self.N)
            if M != self.basis.size or a.shape[0] != self.m:
                raise ContractError("array shape does not match (m, K, N)")
            if not np.all(np.isfinite(a)):
                raise ContractError("non-finite coefficients")
        else:
            comps = list(components)
            if not comps:
                raise ContractError("empty vector field")
            first = comps[0]
            for c in comps:
                first._check(c)
            if len(comps) != first.m:
                raise ContractError(f"{len(comps)} components for phase dimension {first.m}")
            self.m, self.K, self.N = first.m, first.K, first.N
            self.basis = first.basis
            a = np.stack([c.coeffs for c in comps])
        a = enforce_reality(a)
        a.setflags(write=False)
        self._a = a

    @classmethod
    def zero(cls, m, K, N):
        return cls(array=np.zeros((m, K + 1, get_basis(m, N).size)), N=N)

    @property
    def array(self) -> np.ndarray:
        return self._a

    @property
    def components(self):
        return tuple(FourierTaylorSeries(self.m, self.K, self.N, self._a[i]) for i in range(self.m))

    def __getitem__(self, i):
        return FourierTaylorSeries(self.m, self.K, self.N, self._a[i])

    def _like(self, a):
        return VectorFieldFT(array=a, N=self.N)

    def _check(self, other):
        if not isinstance(other, VectorFieldFT):
            raise ContractError(f"expected VectorFieldFT, got {type(other).__name__}")
        if (self.m, self.K, self.N) != (other.m, other.K, other.N):
            raise ContractError(
                f"truncation mismatch {(self.m, self.K, self.N)} vs {(other.m, other.K, other.N)}")

    def __add__(self, other):
        self._check(other)
        return self._like(self._a + other._a)

    def __sub__(self, other):
        self._check(other)
        return self._like(self._a - other._a)

    def __neg__(self):
        return self._like(-self._a)

    def __mul__(self, other):
        return self._like(self._a * float(other))

    __rmul__ = __mul__

    def __eq__(self, other):
        return (isinstance(other, VectorFieldFT)
                and (self.m, self.K, self.N) == (other.m, other.K, other.N)
                and np.array_equal(self._a, other._a))

    def __repr__(self):
        return f"VectorFieldFT(m={self.m}, K={self.K}, N={self.N})"

    def mean(self):
        a = np.zeros_like(self._a)
        a[:, 0] = self._a[:, 0]
        return self._like(a)

    def oscillating(self):
        return self - self.mean()

    def mode(self, k: int):
        a = np.zeros_like(self._a)
        a[:, abs(k)] = self._a[:, abs(k)]
        return self._like(a)

    def divergence(self) -> FourierTaylorSeries:
        d = sum(diff_array(self._a[j], self.basis, j) for j in range(self.m))
        return FourierTaylorSeries(self.m, self.K, self.N, d)

    def __call__(self, z, t=0.0):
        return evaluate(self, z, t)


def degree_from_size(m, M):
    N = 0
    while math.comb(N + m, m) < M:
        N += 1
    if math.comb(N + m, m) != M:
        raise ContractError(f"{M} is not a graded basis size for m={m}")
    return N


class HamiltonianFT:
    """Scalar Hamiltonian on one canonical pair (x, y); wraps an m=2 series."""

    def __init__(self, h: FourierTaylorSeries):
        if not isinstance(h, FourierTaylorSeries) or h.m != 2:
            raise ContractError("HamiltonianFT needs an m=2 FourierTaylorSeries")
        self.h = h

    @property
    def K(self):
        return self.h.K

    @property
    def N(self):
        return self.h.N

    @property
    def m(self):
        return 2

    @property
    def coeffs(self):
        return self.h.coeffs

    def __add__(self, other):
        return HamiltonianFT(self.h + _ham(other).h)

    def __sub__(self, other):
        return HamiltonianFT(self.h - _ham(other).h)

    def __neg__(self):
        return HamiltonianFT(-self.h)

    def __mul__(self, other: float):
        return HamiltonianFT(self.h * float(other))

    __rmul__ = __mul__

    def __eq__(self, other):
        return isinstance(other, HamiltonianFT) and self.h == other.h

    def __repr__(self):
        return f"HamiltonianFT(K={self.K}, N={self.N})"

    def mean(self):
        return HamiltonianFT(self.h.mean())

    def oscillating(self):
        return HamiltonianFT(self.h.oscillating())

    def mode(self, k):
        return HamiltonianFT(self.h.mode(k))

    def field(self) -> VectorFieldFT:
        return hamiltonian_to_field(self)

    def __call__(self, z, t=0.0):
        return evaluate(self.h, z, t)


def _ham(h):
    if isinstance(h, HamiltonianFT):
        return h
    if isinstance(h, FourierTaylorSeries):
        return HamiltonianFT(h)
    raise ContractError(f"expected a Hamiltonian, got {type(h).__name__}")


# ---------------------------------------------------------------------------
# operations

def commutator(u1: VectorFieldFT, u2: VectorFieldFT) -> VectorFieldFT:
    """``[u1, u2] = D(u2) u1 - D(u1) u2``, truncated to (K, N)."""
    if not isinstance(u1, VectorFieldFT):
        raise ContractError("commutator needs VectorFieldFT operands")
    u1._check(u2)
    return VectorFieldFT(array=commutator_arrays(u1.array, u2.array, u1.basis), N=u1.N)


def poisson_bracket(h1, h2) -> HamiltonianFT:
    """``{h1, h2} = h1_x h2_y - h1_y h2_x``."""
    a, b = _ham(h1), _ham(h2)
    a.h._check(b.h)
    c = poisson_arrays(a.coeffs, b.coeffs, a.h.basis)
    return HamiltonianFT(FourierTaylorSeries(2, a.K, a.N, c))


def hamiltonian_to_field(h) -> VectorFieldFT:
    """``J grad h = (dh/dy, -dh/dx)``."""
    h = _ham(h)
    b = h.h.basis
    a = np.stack([diff_array(h.coeffs, b, 1), -diff_array(h.coeffs, b, 0)])
    return VectorFieldFT(array=a, N=h.N)


def _map_coeffs(u, fn):
    if isinstance(u, FourierTaylorSeries):
        return FourierTaylorSeries(u.m, u.K, u.N, fn(u.coeffs))
    if isinstance(u, VectorFieldFT):
        return VectorFieldFT(array=fn(u.array), N=u.N)
    if isinstance(u, HamiltonianFT):
        return HamiltonianFT(_map_coeffs(u.h, fn))
    raise ContractError(f"unsupported operand {type(u).__name__}")


def hilbert_xi(u):
    """Multiply mode k by ``i sign(k)``."""
    return _map_coeffs(u, xi_array)


def d_dt(u):
    """Multiply mode k by ``ik``."""
    return _map_coeffs(u, ddt_array)


def _coeff_array(u):
    if isinstance(u, VectorFieldFT):
        return u.array, u.basis
    if isinstance(u, HamiltonianFT):
        return u.coeffs, u.h.basis
    if isinstance(u, FourierTaylorSeries):
        return u.coeffs, u.basis
    raise ContractError(f"unsupported operand {type(u).__name__}")


def weighted_norm(u, policy: TruncationPolicy) -> float:
    """``sum |c| rho^|alpha| e^{q|k|}`` over all stored and mirrored modes.

    Saturates at the largest float (with :class:`NormOverflowWarning`) when
    ``e^{qK}`` overflows.
    """
    a, basis = _coeff_array(u)
    return weighted_norm_array(a, basis, policy.rho, policy.q)


def evaluate(u, z, t=0.0):
    """Value at phase point ``z`` (real or complex, leading axis m) and time ``t``."""
    a, basis = _coeff_array(u)
    return eval_array(a, basis, np.asarray(z), t)


def truncate(u, policy: TruncationPolicy):
    """Restrict to ``|k| <= policy.K``, ``|alpha| <= policy.N`` and zero
    coefficients with modulus below ``policy.drop_eps``."""
    return truncate_with_mass(u, policy)[0]


def truncate_with_mass(u, policy: TruncationPolicy):
    a, basis = _coeff_array(u)
    K, N = policy.K, policy.N
    m = basis.m
    nb = get_basis(m, N)
    out = np.zeros(a.shape[:-2] + (K + 1, nb.size), dtype=complex)
    kk = min(K, a.shape[-2] - 1)
    mm = min(nb.size, basis.size)
    out[..., :kk + 1, :mm] = a[..., :kk + 1, :mm]
    dropped = 0.0
    if policy.drop_eps > 0:
        small = (np.abs(out) < policy.drop_eps) & (out != 0)
        dropped = float(np.abs(out[small]).sum())
        out[small] = 0.0
    if isinstance(u, FourierTaylorSeries):
        res = FourierTaylorSeries(m, K, N, out)
    elif isinstance(u, VectorFieldFT):
        res = VectorFieldFT(array=out, N=N)
    else:
        res = HamiltonianFT(FourierTaylorSeries(2, K, N, out))
    return res, dropped


# ---------------------------------------------------------------------------
# serialization

def series_to_json(s: FourierTaylorSeries) -> str:
    """``{m, K, N, coeffs: [[k, [alpha...], re, im], ...]}`` with k >= 0 only."""
    rows = []
    for k in range(s.K + 1):
        for i in np.flatnonzero(s.coeffs[k]):
            c = s.coeffs[k, i]
            rows.append([k, [int(e) for e in s.basis.exponents[i]], float(c.real), float(c.imag)])
    return json.dumps({"m": s.m, "K": s.K, "N": s.N, "coeffs": rows})


def series_from_json(text: str) -> FourierTaylorSeries:
    d = json.loads(text)
    m, K, N = int(d["m"]), int(d["K"]), int(d["N"])
    s = FourierTaylorSeries(m, K, N)
    c = np.zeros_like(s.coeffs)
    for k, alpha, re, im in d["coeffs"]:
        if k < 0 or k > K or len(alpha) != m or sum(alpha) > N:
            raise ContractError(f"bad coefficient entry {[k, alpha]}")
        c[k, s.basis.index[tuple(alpha)]] = complex(re, im)
    return FourierTaylorSeries(m, K, N, c)


# ---------------------------------------------------------------------------
# common building blocks

def cos_series(m, K, N, var: int = 0, k: int = 0, scale: float = 1.0) -> FourierTaylorSeries:
    """Taylor polynomial of ``scale * cos(z_var)`` on Fourier mode k."""
    taylor = [0.0] * (N + 1)
    for n in range(0, N + 1, 2):
        taylor[n] = scale * (-1) ** (n // 2) / math.factorial(n)
    return FourierTaylorSeries.from_univariate(m, K, N, var, taylor, k)


def sin_series(m, K, N, var: int = 0, k: int = 0, scale: float = 1.0) -> FourierTaylorSeries:
    taylor = [0.0] * (N + 1)
    for n in range(1, N + 1, 2):
        taylor[n] = scale * (-1) ** (n // 2) / math.factorial(n)
    return FourierTaylorSeries.from_univariate(m, K, N, var, taylor, k)


def linear_field(K, N, matrix, k: int = 0) -> VectorFieldFT:
    """Field ``z -> matrix z`` on Fourier mode k (complex matrix allowed for k > 0)."""
    A = np.asarray(matrix, dtype=complex)
    m = A.shape[0]
    basis = get_basis(m, N)
    a = np.zeros((m, K + 1, basis.size), dtype=complex)
    for i in range(m):
        for j in range(m):
            alpha = [0] * m
            alpha[j] = 1
            a[i, k, basis.index[tuple(alpha)]] = A[i, j]
    if k == 0 and np.any(A.imag != 0):
        raise ContractError("mode-0 matrix must be real")
    return VectorFieldFT(array=a, N=N)
