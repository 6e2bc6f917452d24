import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import convolve2d

from contavg.engine import (
    AveragingState, BlowUpError, RunReport, default_ds, remainder_norm, rhs, run_to, step,
    stop_parameter, transported_change,
)
from contavg.ftseries import (
    ContractError, FourierTaylorSeries, HamiltonianFT, TruncationPolicy, VectorFieldFT,
    commutator, cos_series, get_basis, hamiltonian_to_field, weighted_norm,
)
from contavg.pendulum import pendulum_hamiltonian
from conftest import random_field, random_series

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def state(field, variant="nonautonomous", eps=0.1, **pol):
    K, N = field.K, field.N
    return AveragingState(0.0, eps, field, variant, TruncationPolicy(K=K, N=N, **pol))


# --- an independent implementation of the mode equations, m = 2 ------------

def dense(vec, basis, N):
    """Coefficient vector over the graded basis -> dense (N+1, N+1) grid."""
    g = np.zeros((N + 1, N + 1), dtype=complex)
    for i, (a, b) in enumerate(basis.exponents):
        g[a, b] = vec[i]
    return g


def poly_commutator(f, g, N):
    """[f, g] for complex polynomial fields given as pairs of dense grids."""
    def d(p, v):
        out = np.zeros_like(p)
        if v == 0:
            out[:-1, :] = p[1:, :] * np.arange(1, N + 1)[:, None]
        else:
            out[:, :-1] = p[:, 1:] * np.arange(1, N + 1)[None, :]
        return out

    def mul(p, q):
        r = convolve2d(p, q)[: N + 1, : N + 1]
        a, b = np.indices(r.shape)
        return np.where(a + b <= N, r, 0)

    return [sum(mul(f[j], d(g[i], j)) - mul(g[j], d(f[i], j)) for j in range(2)) for i in range(2)]


def eq8_modes(u: VectorFieldFT):
    """Right-hand side of the mode equations with the explicit convolution sum."""
    K, N, b = u.K, u.N, u.basis
    modes = {}
    for k in range(-K, K + 1):
        c = u.array[:, abs(k)]
        c = np.conj(c) if k < 0 else c
        modes[k] = [dense(c[i], b, N) for i in range(2)]
    out = {}
    for k in range(0, K + 1):
        sk = np.sign(k)
        acc = [-abs(k) * modes[k][i] for i in range(2)]
        br = poly_commutator(modes[0], modes[k], N)
        acc = [acc[i] + 1j * sk * br[i] for i in range(2)]
        for l in range(1, K + 1):
            mm = k - l
            if mm < 0 and abs(mm) <= K:
                br = poly_commutator(modes[l], modes[mm], N)
                acc = [acc[i] - 2j * br[i] for i in range(2)]
        out[k] = acc
    return out


def test_rhs_matches_mode_equations():
    rng = np.random.default_rng(11)
    u = random_field(rng, 2, 3, 5)
    r = rhs(state(u))
    ref = eq8_modes(u)
    for k in range(0, 4):
        for i in range(2):
            got = dense(r.array[i, k], u.basis, u.N)
            assert np.max(np.abs(got - ref[k][i])) < 1e-12 * np.max(np.abs(ref[k][i]) + 1)


def test_t_independent_field_is_fixed_point():
    rng = np.random.default_rng(2)
    u = random_field(rng, 2, 2, 4).mean()
    for variant in ("autonomous", "nonautonomous", "linearized"):
        assert np.all(rhs(state(u, variant)).array == 0)


def test_constant_oscillating_field_decays():
    m, K, N = 2, 1, 3
    v = np.array([0.4 - 0.3j, 1.1 + 0.2j])
    terms = [FourierTaylorSeries.from_terms(m, K, N, {(1, (0, 0)): c}) for c in v]
    u = VectorFieldFT(terms)
    assert rhs(state(u)) == -u
    out, _ = run_to(state(u), 2.0, 0.01)
    assert np.allclose(out.field.array, math.exp(-2.0) * u.array, rtol=1e-9, atol=0)


def test_linearized_rhs_has_no_convolution():
    rng = np.random.default_rng(4)
    u = random_field(rng, 2, 2, 4)
    r = rhs(state(u, "linearized"))
    u0 = u.mean()
    for k in (1, 2):
        uk = u.mode(k)
        expect = 1j * commutator(u0, uk).array[:, k] - k * uk.array[:, k]
        assert np.allclose(r.array[:, k], expect, atol=1e-13)
    assert np.all(r.array[:, 0] == 0)


def test_step_zero_is_identity():
    u = random_field(np.random.default_rng(0), 2, 2, 3)
    s = state(u)
    assert step(s, 0.0) is s


@pytest.mark.parametrize("method", ["rk4", "lawson"])
def test_step_local_error_order(method):
    rng = np.random.default_rng(8)
    u = random_field(rng, 2, 2, 4, scale=0.2)
    s0 = state(u)
    diffs = []
    for ds in (0.1, 0.05, 0.025):
        full = step(s0, ds, method)
        half = step(step(s0, ds / 2, method), ds / 2, method)
        diffs.append(np.max(np.abs(full.field.array - half.field.array)))
    # local error O(ds^5): halving ds divides the discrepancy by ~32
    assert diffs[0] / diffs[1] > 20 and diffs[1] / diffs[2] > 20


def test_linearized_pure_decay_step():
    rng = np.random.default_rng(9)
    u = random_field(rng, 2, 3, 3).oscillating()
    errs = []
    for ds in (0.1, 0.05):
        out = step(state(u, "linearized"), ds)
        exact = u.array * np.exp(-np.arange(4) * ds)[None, :, None]
        errs.append(np.max(np.abs(out.field.array - exact)))
    assert errs[0] / errs[1] > 25


def test_run_to_identity_and_contracts():
    u = random_field(np.random.default_rng(1), 2, 1, 2)
    s0 = state(u)
    out, rep = run_to(s0, 0.0)
    assert out.field == u and len(rep.s) == 1
    with pytest.raises(ContractError):
        run_to(s0.with_array(s0.array, 1.0), 0.5)


def test_blow_up_reports_last_state():
    rng = np.random.default_rng(3)
    u = random_field(rng, 2, 2, 4, scale=3.0)
    with pytest.raises(BlowUpError) as info:
        run_to(state(u, "autonomous"), 5.0, 0.01, blowup_factor=1.0 + 1e-9)
    last = info.value.state
    assert np.all(np.isfinite(last.field.array))


def test_remainder_norm_examples():
    m, K, N = 2, 2, 3
    u = random_field(np.random.default_rng(5), m, K, N).mean()
    assert remainder_norm(state(u)) == 0.0
    c = 0.3 + 0.4j
    s = FourierTaylorSeries.from_terms(m, K, N, {(1, (1, 1)): c})
    f = VectorFieldFT([s, FourierTaylorSeries(m, K, N)])
    st_ = AveragingState(0.0, 0.1, f, policy=TruncationPolicy(K=K, N=N, rho=0.7, q=0.0))
    assert remainder_norm(st_) == pytest.approx(2 * abs(c) * 0.7 ** 2)


def test_stop_parameter():
    assert stop_parameter(0.8, 0.1) == pytest.approx(8.0)
    assert default_ds(32) == pytest.approx(0.1 / 32)


def test_hamiltonian_closure():
    rng = np.random.default_rng(12)
    K, N = 2, 7
    h = random_series(rng, 2, K, N + 1, max_degree=N + 1, scale=0.1)
    H = HamiltonianFT(h)
    sh = AveragingState(0.0, 0.1, H, "nonautonomous", TruncationPolicy(K=K, N=N + 1))
    M = get_basis(2, N).size
    f0 = hamiltonian_to_field(H)
    f0 = VectorFieldFT(array=f0.array[..., :M], N=N)
    sv = AveragingState(0.0, 0.1, f0, "nonautonomous", TruncationPolicy(K=K, N=N))
    outh, _ = run_to(sh, 0.5, 0.01)
    outv, _ = run_to(sv, 0.5, 0.01)
    conv = hamiltonian_to_field(outh.field)
    # J grad maps Hamiltonian degree N+1 onto field degree N
    conv_arr = conv.array[..., :M]
    diff = VectorFieldFT(array=conv_arr - outv.field.array, N=N)
    assert weighted_norm(diff, sv.policy) <= 1e-8
    assert np.max(np.abs(outv.field.divergence().coeffs)) < 1e-12


def test_hamiltonian_run_stays_divergence_free():
    H = pendulum_hamiltonian(0.2, 0.05, K=1, N=10)
    out, _ = run_to(AveragingState(0.0, 0.2, H, policy=TruncationPolicy(1, 10)), 1.0)
    scale = np.max(np.abs(out.field.coeffs))
    assert np.max(np.abs(out.field.field().divergence().coeffs)) <= 1e-14 * scale


def test_pendulum_remainder_regression():
    """Fixture frozen from a verified run: eps = 0.1, B = 0.01, s = 0.8 / eps."""
    eps = 0.1
    H = pendulum_hamiltonian(eps, 0.01, K=1, N=16)
    pol = TruncationPolicy(K=1, N=16, rho=0.5)
    out, rep = run_to(AveragingState(0.0, eps, H, policy=pol), 0.8 / eps, 0.01)
    assert remainder_norm(out) / eps == pytest.approx(8.433519907739873e-06, rel=1e-6)
    k1 = np.array([n[1] for n in rep.mode_norms])
    # monotone decay after a short transient
    assert np.all(np.diff(k1[10:]) < 0)


def test_run_report_csv(tmp_path):
    u = random_field(np.random.default_rng(1), 2, 2, 2)
    _, rep = run_to(state(u), 0.05, 0.01)
    p = tmp_path / "run.csv"
    rep.to_csv(p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["s", "k", "weighted_mode_norm", "dropped_mass"]
    assert len(rows) == 1 + 6 * 3


def test_dropped_mass_bound():
    rng = np.random.default_rng(6)
    u = random_field(rng, 2, 2, 4, scale=1e-3)
    pol = TruncationPolicy(K=2, N=4, drop_eps=1e-5)
    _, rep = run_to(AveragingState(0.0, 0.1, u, policy=pol), 0.2, 0.01)
    count = u.array.size
    assert all(dm <= pol.drop_eps * count for dm in rep.dropped_mass)


def test_transported_change_trivial_cases():
    u = VectorFieldFT.zero(2, 1, 2)
    _, rep = run_to(state(u), 0.3, 0.01, record=True)
    z = np.array([0.3, -0.2])
    assert np.array_equal(transported_change(rep, z, 0.4), z)
    u = random_field(np.random.default_rng(2), 2, 1, 2)
    _, rep = run_to(state(u), 0.0, record=True)
    assert np.array_equal(transported_change(rep, z, 0.4), z)


@settings(max_examples=5, deadline=None)
@given(seeds)
def test_linearized_mode_decay(seed):
    rng = np.random.default_rng(seed)
    u = random_field(rng, 2, 3, 3).oscillating()
    out, _ = run_to(state(u, "linearized"), 1.5, 0.005)
    for k in range(1, 4):
        ratio = np.abs(out.field.array[:, k]) / np.maximum(np.abs(u.array[:, k]), 1e-300)
        mask = np.abs(u.array[:, k]) > 0
        assert np.allclose(ratio[mask], math.exp(-1.5 * k), rtol=1e-8)


@settings(max_examples=5, deadline=None)
@given(seeds)
def test_reality_after_steps(seed):
    rng = np.random.default_rng(seed)
    u = random_field(rng, 2, 2, 4, scale=0.3)
    out, _ = run_to(state(u), 0.1, 0.01)
    assert np.all(out.field.array[:, 0].imag == 0)
