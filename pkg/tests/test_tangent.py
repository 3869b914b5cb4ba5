import math

import numpy as np
import pytest

from wedgefall.dynamics import EventKind, MassModel, PhaseState, SingularEventError, sample_phase_point, simulate
from wedgefall.tangent import (
    TangentVector,
    alpha,
    alpha_bound,
    alpha_bound_check,
    beta,
    calibrate_signs,
    cw_norm,
    dphi_xieta,
    finite_difference_step,
    hv_to_xieta,
    lift_vector,
    monodromy_product,
    monodromy_step,
    omega,
    q_form,
    q_form_qp,
    tangent_hv_to_qp,
    tangent_qp_to_hv,
    xieta_to_hv,
)

M321 = MassModel(3.0, 2.0, 1.0)


def _state(v, q=(1.0, 2.0, 3.0)):
    return PhaseState(M321, q, v)


def test_q_form_examples():
    assert q_form(TangentVector(np.array([0.0, 1, -1]), np.array([0.0, 1, 0]))) == 1.0
    assert q_form(np.r_[np.array([3.0, -1, -2]), np.zeros(3)]) == 0.0


def test_q_two_forms_agree_on_example():
    s = _state((-1.0, 0.0, 1.0))
    t = tangent_qp_to_hv(s, np.zeros(3), (1.0, -2.0, 1.0))
    assert t.dh == pytest.approx((-1.0, 0.0, 1.0), abs=1e-15)
    assert t.dv == pytest.approx((1 / 3, -1.0, 1.0), abs=1e-15)
    assert q_form(t) == pytest.approx(2 / 3, abs=1e-15)
    assert q_form_qp(s, np.zeros(3), (1.0, -2.0, 1.0)) == pytest.approx(2 / 3, abs=1e-15)


def test_conversion_roundtrip_and_q_invariance():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        s = _state(tuple(rng.standard_normal(3)))
        dq, dp = rng.standard_normal(3), rng.standard_normal(3)
        t = tangent_qp_to_hv(s, dq, dp)
        assert q_form(t) == pytest.approx(q_form_qp(s, dq, dp), rel=1e-12, abs=1e-12)
        dq2, dp2 = tangent_hv_to_qp(s, t)
        assert np.allclose(dq2, dq, atol=1e-12) and np.allclose(dp2, dp, atol=1e-12)


def test_pure_position_conversion():
    t = tangent_qp_to_hv(_state((0.3, -1.0, 2.0)), (1.0, 2.0, 3.0), np.zeros(3))
    assert t.dh == pytest.approx((3.0, 4.0, 3.0)) and not t.dv.any()


def test_floor_monodromy_example():
    # q1 = 1.5, v1 = -1: the floor comes first, at tau = 1, with v1- = -2
    s = PhaseState(M321, (1.5, 10.0, 20.0), (-1.0, 0.0, 0.0))
    md = monodromy_step(s)
    assert md.kind is EventKind.FLOOR
    assert md.coeff == pytest.approx(1 / 3)
    v = np.array([1.0, -1.0, 0.0, 0.0, 0.0, 0.0])
    out = md(v)
    assert out[:3] == pytest.approx(v[:3], abs=1e-14)
    assert out[3:] == pytest.approx((1 / 6, -1 / 6, -1 / 6), abs=1e-14)
    assert q_form(out) - q_form(v) == pytest.approx(1 / 3, abs=1e-14)


def test_beta_and_alpha_values():
    assert beta(M321, -2.0) == pytest.approx(1 / 3)
    assert abs(alpha(MassModel(4.0, 2.0, 1.0), 1, (2.0, 0.0, 0.0))) == pytest.approx(16 / 9)
    assert alpha(M321, 2, (0.0, 1.0, 1.0)) == 0.0


def test_finite_difference_oracle():
    worst = 0.0
    checked = 0
    for i in range(60):
        x = sample_phase_point(M321, 10.0, seed=21, index=i)
        try:
            fd = finite_difference_step(x)
        except SingularEventError:
            continue
        md = monodromy_step(x)
        worst = max(worst, np.abs(md.matrix - fd).max() / max(1.0, np.abs(md.matrix).max()))
        checked += 1
    assert checked >= 50
    assert worst <= 1e-5


def test_symplectic_on_energy_surface():
    rng = np.random.default_rng(1)
    for i in range(100):
        md = monodromy_step(sample_phase_point(M321, 10.0, seed=22, index=i))
        a, b = lift_vector(rng.standard_normal(4)), lift_vector(rng.standard_normal(4))
        assert omega(md(a), md(b)) == pytest.approx(omega(a, b), rel=1e-9, abs=1e-9)


def test_gain_functional_matches_q_increase():
    rng = np.random.default_rng(2)
    for i in range(300):
        md = monodromy_step(sample_phase_point(M321, 10.0, seed=23, index=i))
        f = md.gain_functional()
        v = lift_vector(rng.standard_normal(4))
        want = md.coeff * (f @ v) ** 2
        got = q_form(md(v)) - q_form(v)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-10)
        assert md.coeff >= 0.0


def test_product_associativity_and_scale():
    x = sample_phase_point(M321, 10.0, seed=24)
    whole, ls = monodromy_product(x, 12, renorm=False)
    assert ls == 0.0
    head, _ = monodromy_product(x, 5, renorm=False)
    tail, _ = monodromy_product(head.target, 7, renorm=False)
    ref = tail.matrix @ head.matrix
    assert np.abs(whole.matrix - ref).max() <= 1e-8 * np.abs(ref).max()
    one, _ = monodromy_product(x, 1)
    assert np.array_equal(one.matrix, monodromy_step(x).matrix)


def test_renormalized_product_scales_back():
    x = sample_phase_point(M321, 10.0, seed=25)
    raw, _ = monodromy_product(x, 40, renorm=False)
    scaled, ls = monodromy_product(x, 40)
    assert ls > 0
    assert np.allclose(scaled.matrix * math.exp(ls), raw.matrix, rtol=1e-10, atol=1e-10 * np.abs(raw.matrix).max())


def test_printed_involutions():
    blk = dphi_xieta(EventKind.PAIR12, MassModel(2.0, 1.0, 1.0), (1.0, 0.0, 0.0))
    assert blk.M1 == pytest.approx(np.array([[1, 0, 0], [0, -1, 4 / 3], [0, 0, 1]]))
    assert np.abs(blk.M1 @ blk.M1 - np.eye(3)).max() <= 1e-14
    assert np.abs(blk.M2 @ blk.M2 - np.eye(3)).max() <= 1e-14


def test_xieta_velocity_checks():
    with pytest.raises(ValueError):
        dphi_xieta(EventKind.FLOOR, M321, (1.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        dphi_xieta(EventKind.PAIR12, M321, (0.0, 1.0, 0.0))


def test_calibrated_blocks_are_q_monotone():
    signs = calibrate_signs(M321)
    rng = np.random.default_rng(3)
    for kind in (EventKind.FLOOR, EventKind.PAIR12, EventKind.PAIR23):
        blk = dphi_xieta(kind, M321, (-1.0, -1.5, -2.0), signs).for_kind(kind)
        for _ in range(200):
            y = rng.standard_normal(6)
            assert q_form(blk @ y) >= q_form(y) - 1e-10 * max(1.0, y @ y)


def test_xieta_coordinates_roundtrip_and_keep_q():
    rng = np.random.default_rng(4)
    for _ in range(100):
        x = rng.standard_normal(6)
        y = hv_to_xieta(M321, x)
        assert q_form(y) == pytest.approx(q_form(x), rel=1e-12, abs=1e-12)
        assert np.allclose(xieta_to_hv(M321, y), x, atol=1e-12)


def test_cw_norm():
    assert cw_norm((1.0, 1.0, 1.0), M321) == 0.0
    assert cw_norm((0.0, 1.0, 0.0), M321) == pytest.approx(math.sqrt(1 / 3 + 1 / 2))


def _random_masses(rng):
    m1 = rng.uniform(1.1, 5.0)
    m2 = rng.uniform(1.0, m1 - 0.05)
    return MassModel(m1, m2, rng.uniform(0.2, m2))


def _reflection_drift(which, closed):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        m = _random_masses(rng)
        blk = dphi_xieta(EventKind.PAIR12, m, (1.0, 0.0, 0.0))
        refl = blk.M1 if which == 1 else blk.M2
        d = np.r_[0.0, rng.standard_normal(2)]
        base = cw_norm(d, m, closed)
        worst = max(worst, abs(cw_norm(refl @ d, m, closed) - base) / base)
    return worst


def test_cw_norm_first_reflection_isometry():
    assert _reflection_drift(1, closed=False) <= 1e-12


@pytest.mark.parametrize("which", [1, 2])
def test_closed_cw_norm_reflection_isometry(which):
    assert _reflection_drift(which, closed=True) <= 1e-12


@pytest.mark.xfail(strict=True, reason="printed two-term norm is not preserved by M2; see closed=True")
def test_cw_norm_second_reflection_isometry():
    assert _reflection_drift(2, closed=False) <= 1e-12


def test_alpha_bound():
    assert alpha_bound(M321, 10.0) == pytest.approx(4 * math.sqrt(20) * 27)
    assert alpha_bound(M321, 10.0) == pytest.approx(482.9, abs=0.1)
    log = simulate(sample_phase_point(M321, 10.0, seed=26), 20_000)
    rep = alpha_bound_check(log, 10.0)
    assert rep["pair_collisions"] > 0 and rep["max_ratio"] <= 1.0
