import math

import numpy as np
import pytest

from wedgefall.dynamics import EventKind, MassModel, PhaseState, SingularEventError, sample_phase_point, simulate
from wedgefall.kernel import FastOrbit, event_kind
from wedgefall.tangent import lift_vector, monodromy_step

M321 = MassModel(3.0, 2.0, 1.0)


def test_events_match_reference_simulator():
    # chaos separates the two event loops after ~70 events; 50 is well inside
    for seed in range(5):
        x = sample_phase_point(M321, 10.0, seed=61, index=seed)
        log = simulate(x, 50)
        recs = FastOrbit.from_state(x).events(50)
        assert [event_kind(r[0]) for r in recs] == list(log.kinds)
        for r, s, t in zip(recs, log.states, log.times):
            assert np.allclose(r[4], s.v, atol=1e-9)
            assert np.allclose(r[2], s.q, atol=1e-9)
            assert r[1] == pytest.approx(t, rel=1e-10)


def test_tangent_vector_matches_monodromy():
    rng = np.random.default_rng(62)
    for i in range(20):
        x = sample_phase_point(M321, 10.0, seed=62, index=i)
        v = lift_vector(rng.standard_normal(4))
        orb = FastOrbit.from_state(x, v)
        orb.run(12)  # below the renormalization cadence
        ref = v
        for _ in range(12):
            md = monodromy_step(x)
            ref, x = md(ref), md.target
        assert np.allclose(orb.vec, ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


def test_conservation_stats():
    orb = FastOrbit.from_state(sample_phase_point(M321, 10.0, seed=63))
    st = orb.run(20_000, check=True)
    assert st.events == 20_000 and sum(st.counts) == 20_000
    assert st.max_momentum_err <= 1e-12 and st.max_kinetic_err <= 1e-12
    assert st.floor_exact
    assert st.max_energy_drift <= 1e-9
    assert orb.state().energy == pytest.approx(10.0, rel=1e-9)


def test_growth_rate_positive():
    x = sample_phase_point(M321, 10.0, seed=64)
    orb = FastOrbit.from_state(x, lift_vector(np.ones(4)))
    orb.run(5000)
    assert 0.05 < orb.growth_rate() < 1.0
    assert math.isfinite(orb.stats.log_growth)


def test_singular_start_raises():
    with pytest.raises(SingularEventError):
        FastOrbit.from_state(PhaseState(M321, (0.0, 1.0, 2.0), (2.0, 1.0, 0.0))).run(1)
    with pytest.raises(SingularEventError):
        FastOrbit.from_state(PhaseState(M321, (0.5, 1.5, 5.0), (0.0, -1.0, 0.0))).run(1)


def test_event_kind_codes():
    assert [event_kind(k) for k in range(3)] == [EventKind.FLOOR, EventKind.PAIR12, EventKind.PAIR23]
