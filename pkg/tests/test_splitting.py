import math

import numpy as np
import pytest

from contavg.ftseries import ContractError, TruncationPolicy, cos_series, weighted_norm
from contavg.melnikov import area_closed_form, area_paper, melnikov_lobe
from contavg.normal_form import normal_form_reduce
from contavg.oracle import ode_integrate
from contavg.pendulum import (
    EscapeError, PendulumParams, SeparatrixOrbit, energy, hyperbolic_fixed_point, iterate_map,
    map_jacobian, poincare_map,
)
from contavg.splitting import (
    BelowFloor, LobeRecord, homoclinic_and_lobe, manifold_segment, manifold_y_at, measure_lobe,
)


@pytest.fixture(scope="module")
def lobe_02():
    return measure_lobe(PendulumParams(0.2, 0.01))


def random_points(n, seed=0):
    rng = np.random.default_rng(seed)
    return np.stack([rng.uniform(-3, 3, n), rng.uniform(-1.5, 1.5, n)])


def test_params_validation():
    for bad in [(0.0, 0.1), (1.0, 0.1), (0.2, -0.1)]:
        with pytest.raises(ContractError):
            PendulumParams(*bad)


def test_separatrix_energy():
    tau = np.linspace(-30, 30, 601)
    assert np.max(np.abs(SeparatrixOrbit().energy(tau) - 1.0)) <= 1e-14


def test_map_matches_adaptive_integrator():
    p = PendulumParams(0.25, 0.02)
    z0 = np.array([1.1, 0.7])
    f = lambda t, z: np.array([p.eps * z[1], p.eps * (1 + 2 * p.B * math.cos(t)) * math.sin(z[0])])
    ref = ode_integrate(f, z0, 0.0, 2 * math.pi, 1e-13)
    assert np.max(np.abs(poincare_map(p, z0) - ref)) <= 1e-12


def test_energy_conserved_without_forcing():
    p = PendulumParams(0.3, 0.0)
    z = random_points(20)
    out = poincare_map(p, z)
    assert np.max(np.abs(energy(*out) - energy(*z))) <= 1e-11


@pytest.mark.parametrize("B", [0.0, 0.01, 0.2])
def test_origin_is_fixed(B):
    assert np.max(np.abs(poincare_map(PendulumParams(0.2, B), np.zeros(2)))) <= 1e-12


def test_area_preservation():
    p = PendulumParams(0.2, 0.01)
    z = random_points(20, seed=1)
    for i in range(20):
        J = map_jacobian(p, z[:, i], method="central")
        assert abs(np.linalg.det(J) - 1.0) <= 1e-10


def test_reversibility():
    # P^{-1} = R P R with R(x, y) = (x, -y) on the section t0 = 0
    p = PendulumParams(0.2, 0.05)
    z = random_points(20, seed=2)
    R = np.array([1.0, -1.0])[:, None]
    lhs = poincare_map(p, z, inverse=True)
    rhs = R * poincare_map(p, R * z)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10
    back = poincare_map(p, poincare_map(p, z, 0.7), 0.7, inverse=True)
    assert np.max(np.abs(back - z)) <= 1e-12


def test_escape():
    with pytest.raises(EscapeError):
        poincare_map(PendulumParams(0.5, 0.0), np.array([0.0, 0.99]), escape=1.0)
    with pytest.raises(ContractError):
        poincare_map(PendulumParams(0.5, 0.0), np.array([np.nan, 0.0]))


def test_fixed_point_unforced():
    eps = 0.2
    fp = hyperbolic_fixed_point(PendulumParams(eps, 0.0))
    assert np.all(fp.point == 0)
    assert fp.lam_u == pytest.approx(math.exp(2 * math.pi * eps), rel=1e-12)
    assert fp.lam_u * fp.lam_s == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(fp.v_u, [1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-12)


def test_fixed_point_forced():
    fp = hyperbolic_fixed_point(PendulumParams(0.2, 0.01), guess=(0.01, -0.02))
    assert np.max(np.abs(fp.point)) <= 1e-8
    assert fp.residual <= 1e-12
    assert fp.lam_u > 1 > fp.lam_s > 0
    assert fp.lam_u * fp.lam_s == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ContractError):
        hyperbolic_fixed_point(PendulumParams(0.2, 0.25))


def test_unforced_manifold_on_separatrix_level():
    seg = manifold_segment(PendulumParams(0.2, 0.0), "unstable", n_points=50)
    assert np.max(np.abs(energy(*seg.points) - 1.0)) <= 1e-10
    assert seg.points[0, -1] > math.pi


def test_manifold_ordering_and_invariance():
    p = PendulumParams(0.2, 0.01)
    seg = manifold_segment(p, "unstable", n_points=60)
    assert np.all(np.diff(seg.points[0]) > 0)
    dist = np.hypot(*(seg.points - seg.fixed.point[:, None]))
    assert np.all(np.diff(dist) > 0)
    # the backward image of a point lies on the segment
    pick = seg.points[:, seg.level >= 2][:, ::37]
    back = poincare_map(p, pick, inverse=True)
    assert np.max(np.abs(manifold_y_at(seg, back[0]) - back[1])) <= 1e-10
    fwd = poincare_map(p, seg.points[:, seg.level == 1][:, ::11])
    assert np.max(np.abs(manifold_y_at(seg, fwd[0]) - fwd[1])) <= 1e-10


def test_stable_is_mirror_of_unstable():
    p = PendulumParams(0.2, 0.01)
    un = manifold_segment(p, "unstable", n_points=80)
    st = manifold_segment(p, "stable", n_points=80, side=1)
    assert np.all(st.points[1, 1:] < 0)
    x = np.linspace(0.5, 3.0, 9)
    assert np.max(np.abs(manifold_y_at(st, x) + manifold_y_at(un, x))) <= 1e-9


def test_segment_csv(tmp_path):
    seg = manifold_segment(PendulumParams(0.3, 0.0), "unstable", n_points=4, fundamental_len=2)
    seg.to_csv(tmp_path / "seg.csv")
    lines = (tmp_path / "seg.csv").read_text().splitlines()
    assert lines[0] == "branch,t0,j,sigma,x,y" and len(lines) == 1 + 12


def test_no_forcing_is_below_floor():
    p = PendulumParams(0.2, 0.0)
    un = manifold_segment(p, "unstable")
    st = manifold_segment(p, "stable")
    rec = homoclinic_and_lobe(p, st, un)
    assert isinstance(rec, BelowFloor) and rec.max_gap < 1e-11


def test_lobe_reference_cell(lobe_02):
    rec = lobe_02
    assert isinstance(rec, LobeRecord) and rec.area_measured > 0
    assert rec.area_paper == pytest.approx(9.7566e-4, rel=1e-4)
    assert abs(rec.area_measured - 9.78e-4) / 9.78e-4 <= 0.25
    assert rec.rel_err_melnikov <= 0.25


def test_homoclinic_points_are_homoclinic(lobe_02):
    p = PendulumParams(0.2, 0.01)
    for x, y in lobe_02.homoclinic_points:
        z = np.array([x, y])
        fwd = iterate_map(p, z, 10)
        bwd = iterate_map(p, z, 10, inverse=True)
        assert np.hypot(fwd[0] - 2 * math.pi, fwd[1]) < 1e-3
        assert np.hypot(*bwd) < 1e-3
    # one of them sits on the symmetry line of the reversor x -> 2 pi - x
    xs = [x for x, _ in lobe_02.homoclinic_points]
    assert min(abs(x - math.pi) for x in xs) <= 1e-10


def test_area_linear_in_forcing(lobe_02):
    a = {0.01: lobe_02.area_measured}
    for B in (0.005, 0.02):
        a[B] = measure_lobe(PendulumParams(0.2, B)).area_measured
    per_B = np.array([a[B] / B for B in sorted(a)])
    assert np.max(per_B) / np.min(per_B) - 1 <= 0.05


def test_area_independent_of_section(lobe_02):
    other = measure_lobe(PendulumParams(0.2, 0.01), t0=1.3)
    assert abs(other.area_measured / lobe_02.area_measured - 1) <= 0.01


def test_melnikov_examples():
    assert melnikov_lobe(PendulumParams(0.2, 0.0)).area == 0.0
    for eps in (0.1, 0.15, 0.2, 0.3):
        r = melnikov_lobe(PendulumParams(eps, 0.01))
        assert r.rel_diff <= 1e-6
    r = melnikov_lobe(PendulumParams(0.2, 0.01))
    assert r.area == pytest.approx(9.7566e-4, rel=1e-4)
    # ratio to (8 pi / eps) e^{-pi/(2 eps)} B tends to 2
    ratio = [area_closed_form(e, 1.0) / (area_paper(e, 1.0) / 2) for e in (0.2, 0.1, 0.05)]
    assert abs(ratio[-1] - 2) < abs(ratio[0] - 2) and ratio[-1] == pytest.approx(2, rel=1e-12)


def test_normal_form_identity_at_zero():
    B = 0.01
    pol = TruncationPolicy(K=1, N=12, rho=0.5)
    nf = normal_form_reduce(PendulumParams(0.1, B), 0.0, pol)
    assert nf.remainder == pytest.approx(2 * B * weighted_norm(cos_series(2, 1, 12, 0), pol),
                                         rel=1e-14)
    assert np.max(np.abs(nf.H1.coeffs)) < 1e-12
    with pytest.raises(ContractError):
        normal_form_reduce(PendulumParams(0.1, B), math.pi / 2, pol)


def test_normal_form_remainder_decreases():
    pol = TruncationPolicy(K=1, N=12, rho=0.5)
    nf = normal_form_reduce(PendulumParams(0.2, 0.01), 0.8, pol, ds=0.01)
    k1 = np.array([n[1] for n in nf.report.mode_norms])
    assert np.all(np.diff(k1[10:]) < 0)
    start = 2 * 0.01 * weighted_norm(cos_series(2, 1, 12, 0), pol)
    assert nf.remainder < 3 * math.exp(-0.8 / 0.2) * start
