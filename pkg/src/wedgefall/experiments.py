"""Deterministic experiment runners behind the command line.

Each runner maps an :class:`ExperimentConfig` to a :class:`ResultTable`
using the library routines only.  Samples are keyed by index through
:func:`wedgefall.rng.rng_for`, so a run is reproducible from (config, seed)
and sample ``i`` does not depend on how many samples come before it.

Singularity policy
------------------
``abort-resample``  an orbit that meets a singular collision is dropped and
                    replaced by a fresh draw (index ``i + k * samples``).
``pick-first``      orbit-based runners continue through singular events on
                    the branch that resolves the lower-index collision first.
``branch-both``     orbit-based runners emit rows for both continuations
                    when the orbit meets a singular event.
Runners whose routines cannot continue through a singularity (tangent
traces, the scalar kernel) resample under every policy; the number of
replacements is reported as ``resampled`` in the summary.
"""
from __future__ import annotations

import math
from collections import Counter
from typing import Callable

import numpy as np

from wedgefall import __version__
from wedgefall.cones import (
    a_sets_nested,
    alignment_record,
    ansatz_records,
    block_gain_check,
    closed_cone_vectors,
    cone_traces,
    find_blocks,
    lambda_estimate,
    mom_witness,
    reduced_orbit,
    sigma_curve,
)
from wedgefall.config import ConfigError, ExperimentConfig
from wedgefall.dynamics import (
    RejectionBudgetError,
    SingularEventError,
    sample_phase_point,
    sample_singular_point,
)
from wedgefall.kernel import FastOrbit
from wedgefall.results import ResultTable
from wedgefall.rng import rng_for
from wedgefall.wedge import (
    NotSpecialError,
    chart_rows,
    classify_cycle,
    cycles,
    dihedral_angle,
    fold_path,
    simulate_wide,
    special_residual,
    triangle_chart,
    unfold,
    unfold_trajectory,
    wedge_frame,
)

RESAMPLE_LIMIT = 20


class BudgetExhausted(RuntimeError):
    """A sampler or resampling loop ran out of attempts."""


_FAILURES = (SingularEventError, RejectionBudgetError)


class _Resampler:
    def __init__(self, cfg: ExperimentConfig, count: int):
        self.cfg = cfg
        self.count = count
        self.replaced = 0

    def run(self, i: int, work: Callable[[int], object]):
        """work(index) for the first index i, i + count, ... that does not fail."""
        last = None
        for k in range(RESAMPLE_LIMIT):
            try:
                return work(i + k * self.count)
            except _FAILURES as exc:
                last = exc
                self.replaced += 1
        raise BudgetExhausted(f"sample {i}: {RESAMPLE_LIMIT} draws failed ({last})")


def _branches(cfg: ExperimentConfig, orbit_fn: Callable[[str], object]) -> list[tuple[str, object]]:
    """Evaluate orbit_fn(library_policy) according to the configured singularity policy."""
    if cfg.policy == "abort-resample":
        return [("none", orbit_fn("abort"))]
    if cfg.policy == "pick-first":
        return [("first", orbit_fn("pick-first"))]
    try:
        return [("none", orbit_fn("abort"))]
    except SingularEventError:
        return [("first", orbit_fn("pick-first")), ("second", orbit_fn("second"))]


def _phase_point(cfg: ExperimentConfig, index: int):
    return sample_phase_point(cfg.mass_model(), cfg.energy, "M+", cfg.seed, index)


def _fraction(flags) -> float:
    flags = list(flags)
    return sum(bool(f) for f in flags) / len(flags) if flags else float("nan")


# ---- growth ---------------------------------------------------------------------


def run_growth(cfg: ExperimentConfig) -> ResultTable:
    """Forward and backward Q traces of closed-cone vectors (L1/L2 bases first)."""
    t = ResultTable(
        "growth",
        ["sample", "vector", "direction", "reached", "crossing", "q_initial", "q_final", "monotone", "steps"],
    )
    rs = _Resampler(cfg, cfg.samples)

    def work(idx):
        x = _phase_point(cfg, idx)
        vecs = closed_cone_vectors(cfg.vectors, rng_for(cfg.seed, idx, stream=1))
        fwd = cone_traces(x, vecs, cfg.horizon, cfg.threshold)
        bwd = cone_traces(x, vecs, cfg.horizon, cfg.threshold, backward=True)
        return fwd, bwd

    for i in range(cfg.samples):
        fwd, bwd = rs.run(i, work)
        for direction, traces, sign in (("forward", fwd, 1.0), ("backward", bwd, -1.0)):
            for j, tr in enumerate(traces):
                steps = sign * np.diff(tr.q)
                tol = cfg.tolerances["monotone"] * np.maximum(1.0, np.abs(tr.q[:-1]))
                t.add(
                    i, j, direction, tr.crossing is not None,
                    -1 if tr.crossing is None else tr.crossing,
                    float(tr.q[0]), float(tr.q[-1]), bool(np.all(steps >= -tol)), len(tr.q) - 1,
                )
    reached = t.column("reached")
    dirs = t.column("direction")
    cross = [c for c in t.column("crossing") if c >= 0]
    t.summary = {
        "traces": len(t.rows),
        "reached_forward": _fraction(r for r, d in zip(reached, dirs) if d == "forward"),
        "reached_backward": _fraction(r for r, d in zip(reached, dirs) if d == "backward"),
        "monotone": _fraction(t.column("monotone")),
        "max_crossing": max(cross) if cross else None,
        "threshold": cfg.threshold,
        "resampled": rs.replaced,
    }
    return t


# ---- sigma ----------------------------------------------------------------------


def run_sigma(cfg: ExperimentConfig) -> ResultTable:
    """sigma(d_x T^n) for n = 0..horizon; first times above 1 and above sigma_bound."""
    t = ResultTable("sigma", ["sample", "branch", "n", "sigma"])
    rs = _Resampler(cfg, cfg.samples)
    first_above: list[int | None] = []
    first_strict: list[int | None] = []

    def work(idx):
        x = _phase_point(cfg, idx)
        return _branches(cfg, lambda pol: sigma_curve(x, cfg.horizon, pol))

    for i in range(cfg.samples):
        for branch, curve in rs.run(i, work):
            for n, s in enumerate(curve):
                t.add(i, branch, n, float(s))
            above = np.flatnonzero(curve > cfg.sigma_bound)
            strict = np.flatnonzero(curve > 1.0 + cfg.tolerances["sigma"])
            first_above.append(int(above[0]) if above.size else None)
            first_strict.append(int(strict[0]) if strict.size else None)
    hits = [n for n in first_above if n is not None]
    t.summary = {
        "curves": len(first_above),
        "sigma_bound": cfg.sigma_bound,
        "fraction_above_bound": _fraction(n is not None for n in first_above),
        "fraction_above_one": _fraction(n is not None for n in first_strict),
        "max_first_n_above_bound": max(hits) if hits else None,
        "median_first_n_above_bound": float(np.median(hits)) if hits else None,
        "resampled": rs.replaced,
    }
    return t


# ---- ansatz ----------------------------------------------------------------------


def run_ansatz(cfg: ExperimentConfig) -> ResultTable:
    """Threshold crossings on the singularity manifolds (forward on S-, backward on S+)."""
    t = ResultTable("ansatz", ["manifold", "sample", "vector", "reached", "crossing", "q_final"])
    masses = cfg.mass_model()
    summary = {}
    replaced = 0
    for man in cfg.manifolds:
        rs = _Resampler(cfg, cfg.samples)

        def work(idx, man=man):
            return ansatz_records(
                masses, man, cfg.energy, cfg.seed, 1, cfg.vectors, cfg.horizon, cfg.threshold, start=idx
            )

        crossings = []
        for i in range(cfg.samples):
            for rec in rs.run(i, work):
                t.add(man, i, rec.vector, rec.crossing is not None,
                      -1 if rec.crossing is None else rec.crossing, rec.q_last)
                crossings.append(rec.crossing)
        hit = [c for c in crossings if c is not None]
        summary[man] = {
            "traces": len(crossings),
            "fraction_crossed": _fraction(c is not None for c in crossings),
            "max_crossing": max(hit) if hit else None,
        }
        replaced += rs.replaced
    summary["threshold"] = cfg.threshold
    summary["resampled"] = replaced
    t.summary = summary
    return t


# ---- alignment census ------------------------------------------------------------------


def run_align_census(cfg: ExperimentConfig) -> ResultTable:
    """Characteristic lines on S12-: Mom class x alignment x first strictly monotone n."""
    t = ResultTable(
        "align-census", ["sample", "mom", "q_char", "aligned", "stays_aligned", "first_strict", "q_final"]
    )
    masses = cfg.mass_model()
    rs = _Resampler(cfg, cfg.samples)

    def work(idx):
        x = sample_singular_point(masses, "S12-", cfg.energy, cfg.seed, idx)
        return alignment_record(x, cfg.horizon, idx)

    recs = [rs.run(i, work) for i in range(cfg.samples)]
    for i, r in enumerate(recs):
        first = next((k + 1 for k, s in enumerate(r.strict) if s), -1)
        t.add(i, r.mom, r.q_char, r.aligned, r.stays_aligned, first, r.q_final)
    table = Counter((r.mom, "aligned" if r.aligned else "not_aligned") for r in recs)
    not_aligned = [r for r in recs if not r.aligned]
    a_frac = [_fraction(any(r.strict[:n]) for r in not_aligned) for n in range(1, cfg.horizon + 1)]
    witnesses = {}
    for mom in ("Mom1", "Mom2", "Mom3"):
        for aligned in (True, False):
            key = f"{mom}/{'aligned' if aligned else 'not_aligned'}"
            hit = next((r for r in recs if r.mom == mom and r.aligned == aligned), None)
            if hit is not None:
                witnesses[key] = {"source": "census", "sample": hit.index, "q_char": hit.q_char}
                continue
            x = mom_witness(masses, cfg.energy, mom, aligned, cfg.seed)
            w = alignment_record(x, cfg.horizon)
            witnesses[key] = {
                "source": "search",
                "q_char": w.q_char,
                "q": list(x.q),
                "v": list(x.v),
                "stays_aligned": w.stays_aligned,
            }
    t.summary = {
        "classes": {f"{m}/{a}": c for (m, a), c in sorted(table.items())},
        "witnesses": witnesses,
        "aligned_fraction": _fraction(r.aligned for r in recs),
        "aligned_stay_aligned": _fraction(r.stays_aligned for r in recs if r.aligned),
        "nested": a_sets_nested(recs),
        "a_fraction_by_n": a_frac,
        "resampled": rs.replaced,
    }
    return t


# ---- Lambda ------------------------------------------------------------------------


def run_lambda(cfg: ExperimentConfig) -> ResultTable:
    """Estimate Lambda over ball-ball blocks, then test the block gain inequality on fresh orbits."""
    t = ResultTable("lambda", ["orbit", "branch", "start", "kind1", "kind2", "diff1", "diff2", "lam"])
    rs = _Resampler(cfg, cfg.samples)

    def orbits_for(idx):
        x = _phase_point(cfg, idx)
        return _branches(cfg, lambda pol: reduced_orbit(x, cfg.horizon, pol))

    orbits = []
    for i in range(cfg.samples):
        for branch, orb in rs.run(i, orbits_for):
            orbits.append(orb)
            for b in find_blocks(orb, cfg.theta_min):
                t.add(i, branch, b.start, b.kinds[0].value, b.kinds[1].value, b.diffs[0], b.diffs[1], b.lam)
    est = lambda_estimate(orbits, cfg.theta_min)
    # the inequality is checked on orbits disjoint from those used for the estimate
    checked, worst = 0, math.inf
    off = RESAMPLE_LIMIT * cfg.samples
    check = _Resampler(cfg, cfg.samples)
    for i in range(cfg.samples):
        for _, orb in check.run(off + i, orbits_for):
            vecs = closed_cone_vectors(2, rng_for(cfg.seed, off + i, stream=1))
            for r0 in vecs:
                n, w = block_gain_check(orb, r0, est.lam, cfg.theta_min)
                checked += n
                worst = min(worst, w)
    t.summary = {
        "lambda_hat": est.lam,
        "theta": est.theta,
        "theta_min": cfg.theta_min,
        "blocks": est.blocks,
        "worst_block": list(est.worst_block),
        "inequality_blocks": checked,
        "inequality_worst_slack": worst if checked else None,
        "inequality_holds": bool(checked and worst >= 0.0),
        "resampled": rs.replaced + check.replaced,
    }
    return t


# ---- cases -------------------------------------------------------------------------------


def run_cases(cfg: ExperimentConfig) -> ResultTable:
    """Classify floor-to-floor cycles into cases I-IV; psi angles for case I; chart export."""
    masses = cfg.mass_model()
    special = abs(dihedral_angle(masses) - 0.5) <= 1e-9
    t = ResultTable(
        "cases",
        ["cycle_id", "orbit", "case", "involves_all", "events", "min_veldiff", "psi_min", "start_time"],
    )
    per_orbit = math.ceil(cfg.cycles / cfg.samples)
    rs = _Resampler(cfg, cfg.samples)

    def work(idx):
        orb = FastOrbit.from_state(_phase_point(cfg, idx))
        got: list = []
        recs: list = []
        while len(got) < per_orbit:
            recs.extend(orb.events(64))
            found = cycles(recs)
            got = found[:per_orbit]
        return got

    wide = unfold(masses) if special else None
    chart = triangle_chart(masses) if special else None
    chart_out = []
    cid = 0
    labels = Counter()
    all_labels = Counter()
    psi_all = []
    for i in range(cfg.samples):
        if cid >= cfg.cycles:
            break
        for recs in rs.run(i, work):
            if cid >= cfg.cycles:
                break
            rec = classify_cycle(masses, recs)
            labels[rec.label] += 1
            if rec.involves_all:
                all_labels[rec.label] += 1
            psi_all.extend(rec.psi)
            t.add(
                cid, i, rec.label, rec.involves_all, len(rec.events) - 2,
                min(rec.veldiffs) if rec.veldiffs else None,
                min(rec.psi) if rec.psi else None, rec.start_time,
            )
            if special and cid < cfg.chart_cycles:
                chart_out.extend(chart_rows(wide, chart, recs, cid, rec.label))
            cid += 1
    n_all = sum(all_labels.values())
    psi = np.array(psi_all)
    t.summary = {
        "cycles": cid,
        "counts": dict(sorted(labels.items())),
        "counts_involving_all": dict(sorted(all_labels.items())),
        "fraction_I_IV_involving_all": (n_all - all_labels["Other"]) / n_all if n_all else None,
        "fraction_other": labels["Other"] / cid if cid else None,
        "special": special,
        "psi_count": int(psi.size),
        "psi_min": float(psi.min()) if psi.size else None,
        "psi_median": float(np.median(psi)) if psi.size else None,
        "psi_fraction_below_pi_6": float(np.mean(psi < math.pi / 6 - 1e-9)) if psi.size else None,
        "resampled": rs.replaced,
    }
    if special:
        t.attachments["chart.csv"] = (["cycle_id", "case", "x", "y", "t"], chart_out)
    return t


# ---- wedge report --------------------------------------------------------------------------


def run_wedge_report(cfg: ExperimentConfig) -> ResultTable:
    """Angles, simplicity, dihedral angle and (at special masses) wideness."""
    masses = cfg.mass_model()
    fr = wedge_frame(masses)
    t = ResultTable("wedge-report", ["quantity", "value"])
    vals: dict = {
        "m1": masses.m1,
        "m2": masses.m2,
        "m3": masses.m3,
        "cos2_alpha1": math.cos(fr.alpha1) ** 2,
        "cos2_alpha2": math.cos(fr.alpha2) ** 2,
        "tan2_beta1": math.tan(fr.beta1) ** 2,
        "tan2_beta2": math.tan(fr.beta2) ** 2,
        "h1_h2": float(fr.h1 @ fr.h2),
        "h2_h3": float(fr.h2 @ fr.h3),
        "h1_h3": float(fr.h1 @ fr.h3),
        "simple": fr.simple,
        "dihedral_cos": dihedral_angle(masses),
        "special_residual": special_residual(masses),
    }
    try:
        wide = unfold(masses)
    except NotSpecialError:
        vals["wide"] = False
    else:
        gram = wide.g.T @ wide.g
        off = gram[~np.eye(gram.shape[0], dtype=bool)]
        vals["wide"] = bool(np.all(off < 0))
        vals["group_order"] = len(wide.group)
        vals["max_generator_inner"] = float(off.max())
    for k, v in vals.items():
        t.add(k, float(v) if not isinstance(v, bool) else v)
    t.summary = dict(vals)
    return t


# ---- Lyapunov ----------------------------------------------------------------------------------


def run_lyapunov(cfg: ExperimentConfig) -> ResultTable:
    """Largest exponent per collision from renormalized tangent growth, per orbit."""
    masses = cfg.mass_model()
    t = ResultTable("lyapunov", ["orbit", "events", "estimate"])
    rs = _Resampler(cfg, cfg.samples)

    def work(idx):
        x = _phase_point(cfg, idx)
        vec = rng_for(cfg.seed, idx, stream=1).standard_normal(6)
        orb = FastOrbit.from_state(x, vec)
        orb.run(cfg.horizon)
        return orb.growth_rate()

    est = np.array([rs.run(i, work) for i in range(cfg.samples)])
    for i, e in enumerate(est):
        t.add(i, cfg.horizon, float(e))
    mean = float(est.mean())
    se = float(est.std(ddof=1) / math.sqrt(est.size)) if est.size > 1 else float("nan")
    t.summary = {
        "masses": list(masses.as_tuple()),
        "orbits": int(est.size),
        "events_per_orbit": cfg.horizon,
        "mean": mean,
        "stderr": se,
        "z": mean / se if se > 0 else None,
        "separated_3sigma": bool(se > 0 and mean > 3 * se),
        "resampled": rs.replaced,
    }
    return t


# ---- fold check ------------------------------------------------------------------------------


def run_foldcheck(cfg: ExperimentConfig) -> ResultTable:
    """FB orbits against the wide-wedge billiard at special masses.

    Round trip: unfold each FB orbit into the wide wedge and fold it back.
    One step: from every unfolded event point, the wide-wedge simulator's
    next event must reproduce the next unfolded event.  Long independent
    integrations are not compared because the dynamics is chaotic.
    """
    masses = cfg.mass_model()
    try:
        wide = unfold(masses)
    except NotSpecialError as exc:
        raise ConfigError(f"foldcheck needs special masses: {exc}") from exc
    s = np.sqrt(masses.m)
    t = ResultTable(
        "foldcheck",
        ["orbit", "events", "roundtrip_err", "step_time_err", "step_state_err", "kind_mismatches"],
    )
    rs = _Resampler(cfg, cfg.samples)

    def work(idx):
        orb = FastOrbit.from_state(_phase_point(cfg, idx))
        recs = orb.events(cfg.horizon)
        path = unfold_trajectory(wide, recs)
        folded = fold_path(wide, path)
        rt = 0.0
        for (q, v), r in zip(folded, recs):
            scale = 1.0 + float(np.abs(s * np.asarray(r[4])).max())
            rt = max(rt, float(np.abs(q - np.asarray(r[2])).max()) / scale,
                     float(np.abs(v - np.asarray(r[4])).max()) / scale)
        terr = serr = 0.0
        bad = 0
        for k in range(len(recs) - 1):
            nxt = simulate_wide(wide, path.points[k], path.velocities[k], 1, path.times[k])
            scale = 1.0 + float(np.linalg.norm(path.velocities[k]))
            terr = max(terr, abs(nxt.times[0] - path.times[k + 1]) / (1.0 + path.times[k + 1]))
            serr = max(serr, float(np.abs(nxt.points[0] - path.points[k + 1]).max()) / scale)
            bad += nxt.kinds[0] is not path.kinds[k + 1]
        return rt, terr, serr, bad

    worst = [0.0, 0.0, 0.0]
    mism = 0
    for i in range(cfg.samples):
        rt, terr, serr, bad = rs.run(i, work)
        t.add(i, cfg.horizon, rt, terr, serr, bad)
        worst = [max(worst[0], rt), max(worst[1], terr), max(worst[2], serr)]
        mism += bad
    tol = cfg.tolerances["fold"]
    t.summary = {
        "orbits": cfg.samples,
        "events_per_orbit": cfg.horizon,
        "max_roundtrip_err": worst[0],
        "max_step_time_err": worst[1],
        "max_step_state_err": worst[2],
        "kind_mismatches": mism,
        "tolerance": tol,
        "passed": bool(max(worst) <= tol and mism == 0),
        "resampled": rs.replaced,
    }
    return t


RUNNERS: dict[str, Callable[[ExperimentConfig], ResultTable]] = {
    "growth": run_growth,
    "sigma": run_sigma,
    "ansatz": run_ansatz,
    "align-census": run_align_census,
    "lambda": run_lambda,
    "cases": run_cases,
    "wedge-report": run_wedge_report,
    "lyapunov": run_lyapunov,
    "foldcheck": run_foldcheck,
}


def run(cfg: ExperimentConfig) -> ResultTable:
    cfg.validate()
    table = RUNNERS[cfg.experiment](cfg)
    table.provenance = {"config_sha256": cfg.digest(), "version": __version__, "config": cfg.canonical()}
    return table
