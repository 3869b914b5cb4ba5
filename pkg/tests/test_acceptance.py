"""The twelve acceptance criteria, each at its stated size and tolerance.

Each test records one PASS/FAIL line (shown in the pytest terminal summary
and, with ``-s``, as it runs).  ``python tests/test_acceptance.py`` runs
just this file.
"""
import math
import sys

import numpy as np
import pytest

from wedgefall.cones import (
    char_q,
    lagrangian_certificate,
    sigma_pencil,
    reduced_orbit,
    sigma,
)
from wedgefall.config import ExperimentConfig
from wedgefall.dynamics import (
    EventKind,
    MassModel,
    SingularEventError,
    sample_phase_point,
)
from wedgefall.experiments import (
    run_align_census,
    run_ansatz,
    run_cases,
    run_foldcheck,
    run_growth,
    run_lambda,
    run_lyapunov,
)
from wedgefall.kernel import FastOrbit
from wedgefall.tangent import (
    beta,
    finite_difference_step,
    lift_vector,
    monodromy_step,
    omega,
    q_form,
    xieta_trace,
)
from wedgefall.wedge import dihedral_angle, special_mass_solve, unfold, wedge_frame

M321 = MassModel(3.0, 2.0, 1.0)
M_SPECIAL = MassModel(4.0, 2.0, 1.2)
C = 10.0


def test_01_conservation(record):
    orb = FastOrbit.from_state(sample_phase_point(M321, C, seed=101))
    for _ in range(10):  # energy drift is measured afresh for each block of 1e5
        st = orb.run(100_000, check=True)
    ok = (
        st.events == 1_000_000
        and st.max_momentum_err <= 1e-12
        and st.max_kinetic_err <= 1e-12
        and st.floor_exact
        and st.max_energy_drift <= 1e-9
    )
    record(
        "1 conservation",
        ok,
        f"{st.events} collisions; momentum {st.max_momentum_err:.1e}, kinetic {st.max_kinetic_err:.1e}, "
        f"floor exact {st.floor_exact}, energy drift per 1e5 {st.max_energy_drift:.1e}",
    )
    assert ok


def _monodromy_point(i: int):
    """Next non-singular point whose event type survives the FD perturbation."""
    k = i
    while True:
        x = sample_phase_point(M321, C, seed=202, index=k)
        try:
            return x, finite_difference_step(x)
        except SingularEventError:
            k += 1000


def test_02_monodromy(record):
    rng = np.random.default_rng(2)
    fd_err = sym_err = gain_err = 0.0
    floors = 0
    for i in range(100):
        x, fd = _monodromy_point(i)
        md = monodromy_step(x)
        fd_err = max(fd_err, np.abs(md.matrix - fd).max() / max(1.0, np.abs(md.matrix).max()))
        for _ in range(5):
            # tangent vectors live on the energy-reduced subspace sum(dh) = 0
            a, b = lift_vector(rng.standard_normal(4)), lift_vector(rng.standard_normal(4))
            w0 = omega(a, b)
            sym_err = max(sym_err, abs(omega(md(a), md(b)) - w0) / max(1.0, abs(w0)))
        if md.kind is EventKind.FLOOR:
            floors += 1
            v1_pre = x.v[0] - md.tau
            for _ in range(5):
                v = lift_vector(rng.standard_normal(4))
                want = beta(M321, v1_pre) * v[0] ** 2
                got = q_form(md(v)) - q_form(v)
                gain_err = max(gain_err, abs(got - want) / max(1.0, abs(want)))
    ok = fd_err <= 1e-5 and sym_err <= 1e-9 and gain_err <= 1e-10 and floors > 0
    record(
        "2 monodromy",
        ok,
        f"FD rel err {fd_err:.1e}; symplectic err {sym_err:.1e}; floor gain err {gain_err:.1e} "
        f"({floors} floor points)",
    )
    assert ok


def test_03_q_monotonicity(record):
    rng = np.random.default_rng(3)
    worst = math.inf
    pairs = 0
    for i in range(20_000):
        x = sample_phase_point(M321, C, seed=303, index=i)
        md = monodromy_step(x)
        for _ in range(5):
            r = rng.standard_normal(4)
            v = lift_vector(r / np.linalg.norm(r))
            worst = min(worst, q_form(md(v)) - q_form(v))
            pairs += 1
    xe_err = 0.0
    for i in range(100):
        x = sample_phase_point(M321, C, seed=304, index=i)
        v = lift_vector(rng.standard_normal(4))
        qs = xieta_trace(x, v, 30)
        w = v.copy()
        ref = [q_form(w)]
        for _ in range(30):
            md = monodromy_step(x)
            w, x = md(w), md.target
            ref.append(q_form(w))
        ref = np.array(ref)
        xe_err = max(xe_err, float(np.max(np.abs(qs - ref) / np.maximum(1.0, np.abs(ref)))))
    ok = worst >= -1e-10 and xe_err <= 1e-8
    record(
        "3 Q-monotonicity",
        ok,
        f"{pairs} (x,v) pairs, min Q gain {worst:.2e}; (xi,eta) blocks vs (h,v) along 100 orbits: "
        f"rel err {xe_err:.1e}",
    )
    assert ok


def test_04_strict_monotonicity_times(record):
    bad_l2 = bad_l1 = 0
    worst_returns = 0
    n = 1000
    for i in range(n):
        cert = lagrangian_certificate(sample_phase_point(M321, C, seed=404, index=i))
        bad_l2 += not cert.l2_at_both_pairs
        if cert.l1_returns is None or cert.l1_returns > 3:
            bad_l1 += 1
        else:
            worst_returns = max(worst_returns, cert.l1_returns)
    ok = bad_l2 == 0 and bad_l1 == 0
    record(
        "4 strict monotonicity times",
        ok,
        f"{n} orbits: L2 positive once both ball-ball kinds occurred on {n - bad_l2}/{n}; "
        f"L1 positive within 3 floor returns on {n - bad_l1}/{n} (max {worst_returns})",
    )
    assert ok


def test_05_strict_unboundedness(record):
    cfg = ExperimentConfig("growth", samples=100, vectors=20, horizon=400, seed=505).validate()
    s = run_growth(cfg).summary
    ok = s["reached_forward"] == 1.0 and s["reached_backward"] == 1.0 and s["monotone"] == 1.0
    record(
        "5 strict unboundedness",
        ok,
        f"{s['traces']} traces; +1e3 reached {s['reached_forward']:.3f}, -1e3 backward "
        f"{s['reached_backward']:.3f}, monotone {s['monotone']:.3f}, max crossing {s['max_crossing']}",
    )
    assert ok


def test_06_sigma(record):
    x0 = sample_phase_point(M321, C, seed=606)
    ident = sigma(x0, 0).value == 1.0 and sigma_pencil(np.eye(4)).value == 1.0
    rng = np.random.default_rng(6)
    worst = 0.0
    for i in range(1000):
        x = sample_phase_point(M321, C, seed=607, index=i)
        n, k = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        orb = reduced_orbit(x, n + k)
        whole = sigma_pencil(orb.product()).value
        parts = sigma_pencil(orb.product(n, n + k)).value * sigma_pencil(orb.product(0, n)).value
        worst = max(worst, (parts - whole) / max(1.0, parts))
    horizon, hits = 100, 0
    for i in range(1000):
        orb = reduced_orbit(sample_phase_point(M321, C, seed=608, index=i), horizon)
        p = np.eye(4)
        for a in orb.mats:
            p = a @ p
            if sigma_pencil(p).value > 3.0:
                hits += 1
                break
    frac = hits / 1000
    ok = ident and worst <= 1e-9 and frac >= 0.99
    record(
        "6 sigma",
        ok,
        f"sigma(id) = 1: {ident}; max supermultiplicativity violation {worst:.1e} over 1000 triples; "
        f"sigma > 3 within {horizon} steps on {frac:.3f}",
    )
    assert ok


def test_07_ansatz(record):
    cfg = ExperimentConfig(
        "ansatz", samples=1000, vectors=8, horizon=400, seed=707, manifolds=("S12-", "S31-")
    ).validate()
    s = run_ansatz(cfg).summary
    ok = all(s[m]["fraction_crossed"] == 1.0 for m in cfg.manifolds)
    record(
        "7 ansatz",
        ok,
        "; ".join(
            f"{m}: {s[m]['traces']} traces, crossed {s[m]['fraction_crossed']:.3f}, max crossing time {s[m]['max_crossing']}"
            for m in cfg.manifolds
        ),
    )
    assert ok


def test_08_alignment(record):
    q1 = char_q(M321, (-1.0, 0.0, 1.0), (1.0, -2.0, 1.0))
    q2 = char_q(M321, (-1.0, -0.5, -0.2), (0.3, -0.8, 0.5))
    worked = abs(q1 - 2 / 3) <= 1e-12 and abs(q2 + 0.24) <= 1e-12
    cfg = ExperimentConfig("align-census", samples=1000, horizon=50, seed=808).validate()
    s = run_align_census(cfg).summary
    w = s["witnesses"]
    cells = all(
        (w[k]["q_char"] >= 0) == k.endswith("/aligned") for k in w
    ) and len(w) == 6
    searched = [k for k in w if w[k]["source"] == "search"]
    ok = worked and cells and s["aligned_stay_aligned"] == 1.0 and s["nested"]
    record(
        "8 alignment",
        ok,
        f"worked examples {q1:.15f}, {q2:.15f}; witnesses in all 6 Mom x sign cells: {cells}"
        f" (by targeted search: {', '.join(searched) or 'none'}); aligned stay aligned over 50: "
        f"{s['aligned_stay_aligned']:.3f}; A(n) nested: {s['nested']}",
    )
    assert ok


def test_09_special_wedge(record):
    m3 = special_mass_solve(4.0, 2.0)
    dih = dihedral_angle(M_SPECIAL)
    wide = unfold(M_SPECIAL)
    gram = wide.g.T @ wide.g
    inner = gram[~np.eye(3, dtype=bool)]
    cfg = ExperimentConfig("foldcheck", special=(4.0, 2.0), samples=3, horizon=1000, seed=909).validate()
    s = run_foldcheck(cfg).summary
    ok = abs(m3 - 1.2) <= 1e-15 and abs(dih - 0.5) <= 1e-12 and bool(np.all(inner < 0)) and s["passed"]
    record(
        "9 special-mass wedge",
        ok,
        f"m3 = {m3!r}; dihedral cos {dih:.15f}; generator inner products max {inner.max():.4f}; "
        f"fold/unfold over 3x1000 events: round trip {s['max_roundtrip_err']:.1e}, one-step time "
        f"{s['max_step_time_err']:.1e}, state {s['max_step_state_err']:.1e}, kind mismatches {s['kind_mismatches']}",
    )
    assert ok


def test_10_cases_psi_lambda(record):
    cases = run_cases(
        ExperimentConfig("cases", special=(4.0, 2.0), samples=100, cycles=100_000, seed=1010).validate()
    ).summary
    lam = run_lambda(
        ExperimentConfig("lambda", special=(4.0, 2.0), samples=150, horizon=400, seed=1011).validate()
    ).summary
    classified = cases["fraction_I_IV_involving_all"] == 1.0 and cases["cycles"] == 100_000
    psi_ok = cases["psi_min"] >= math.pi / 6 - 1e-9
    lam_ok = lam["lambda_hat"] > 0 and lam["blocks"] >= 10_000 and lam["inequality_holds"]
    ok = classified and psi_ok and lam_ok
    record(
        "10 cases, psi, Lambda",
        ok,
        f"{cases['cycles']} cycles, I-IV among cycles with both ball-ball kinds "
        f"{cases['fraction_I_IV_involving_all']:.4f} (all cycles {1 - cases['fraction_other']:.4f}) "
        f"[{'ok' if classified else 'FAIL'}]; psi min {cases['psi_min']:.4f} vs pi/6 = {math.pi / 6:.4f}, "
        f"{cases['psi_fraction_below_pi_6']:.3f} of {cases['psi_count']} below "
        f"[{'ok' if psi_ok else 'FAIL'}]; Lambda^ {lam['lambda_hat']:.4f} over {lam['blocks']} blocks, "
        f"inequality on {lam['inequality_blocks']} blocks, worst slack {lam['inequality_worst_slack']:.3e} "
        f"[{'ok' if lam_ok else 'FAIL'}]",
    )
    assert ok


def _frame_errors(masses: MassModel) -> float:
    fr = wedge_frame(masses)
    big = masses.M
    m = masses.m
    err = 0.0
    for i in range(3):
        for j in range(i + 1, 3):
            err = max(err, abs(fr.h[:, i] @ fr.h[:, j] - math.sqrt(big[j] / big[i])))
    err = max(err, abs(math.cos(fr.alpha1) ** 2 - big[1] / big[0]), abs(math.cos(fr.alpha2) ** 2 - big[2] / big[1]))
    err = max(err, abs(math.tan(fr.beta1) ** 2 - m[0] / m[1]), abs(math.tan(fr.beta2) ** 2 - m[1] / m[2]))
    err = max(err, abs(math.tan(fr.beta1) - math.tan(fr.alpha1) / math.sin(fr.alpha2)))
    h = fr.h
    err = max(err, abs(h[:, 0] @ h[:, 2] - (h[:, 0] @ h[:, 1]) * (h[:, 1] @ h[:, 2])))
    if not (h[:, 0] @ h[:, 1] > 0 and h[:, 1] @ h[:, 2] > 0 and fr.simple):
        err = math.inf
    return err


def test_11_wedge_frame(record):
    worst = 0.0
    for r1 in np.linspace(1.05, 6.0, 20):
        for r2 in np.linspace(1.0, 6.0, 20):
            worst = max(worst, _frame_errors(MassModel(r1 * r2, r2, 1.0)))
    fr = wedge_frame(M_SPECIAL)
    vals = (math.cos(fr.alpha1) ** 2, math.cos(fr.alpha2) ** 2, math.tan(fr.beta1) ** 2)
    ref_err = max(abs(a - b) for a, b in zip(vals, (4 / 9, 3 / 8, 2.0)))
    ok = worst <= 1e-12 and ref_err <= 1e-12
    record(
        "11 wedge-frame algebra",
        ok,
        f"20x20 grid max error {worst:.1e} (simplicity conditions hold everywhere: {math.isfinite(worst)}); "
        f"(4,2,1.2): cos2a1 {vals[0]:.15f}, cos2a2 {vals[1]:.15f}, tan2b1 {vals[2]:.15f}",
    )
    assert ok


def test_12_lyapunov(record):
    parts = []
    ok = True
    for masses in ((3.0, 2.0, 1.0), (4.0, 2.0, 1.2)):
        s = run_lyapunov(
            ExperimentConfig("lyapunov", masses=masses, samples=100, horizon=10_000, seed=1212).validate()
        ).summary
        ok = ok and s["separated_3sigma"]
        parts.append(f"{masses}: {s['mean']:.4f} +- {s['stderr']:.4f} (z = {s['z']:.0f})")
    record("12 Lyapunov", ok, "; ".join(parts) + " per collision")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
