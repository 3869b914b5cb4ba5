"""Scalar event loop for long runs.

Same event rules, tie tolerance and contact snapping as
:mod:`wedgefall.dynamics`, without building a PhaseState per event.  An
optional (h, v) tangent vector is carried along and renormalized, which is
what the Lyapunov census and the long conservation run need.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from wedgefall.dynamics import (
    TIE_TOL,
    EventKind,
    MassModel,
    PhaseState,
    SingularEventError,
    _floor_time,
    energy,
)
from wedgefall.tangent import RENORM_EVERY

FLOOR, PAIR12, PAIR23 = 0, 1, 2
_KINDS = (EventKind.FLOOR, EventKind.PAIR12, EventKind.PAIR23)


@dataclass
class RunStats:
    events: int = 0
    counts: list[int] = field(default_factory=lambda: [0, 0, 0])
    max_momentum_err: float = 0.0
    max_kinetic_err: float = 0.0
    max_energy_drift: float = 0.0
    floor_exact: bool = True
    log_growth: float = 0.0


@dataclass
class FastOrbit:
    masses: MassModel
    q: list[float]
    v: list[float]
    vec: list[float] | None = None
    stats: RunStats = field(default_factory=RunStats)
    time: float = 0.0

    @classmethod
    def from_state(cls, x: PhaseState, vec=None) -> "FastOrbit":
        return cls(x.masses, list(x.q), list(x.v), None if vec is None else [float(c) for c in vec])

    def state(self) -> PhaseState:
        return PhaseState(self.masses, tuple(self.q), tuple(self.v), "interior")

    def run(self, n: int, check: bool = False, record: list | None = None) -> RunStats:
        """Advance n events; raises SingularEventError on a triple or floor-pair tie."""
        m1, m2, m3 = self.masses.as_tuple()
        g1, g2 = self.masses.gamma1, self.masses.gamma2
        q1, q2, q3 = self.q
        v1, v2, v3 = self.v
        vec = self.vec
        st = self.stats
        e0 = energy(self.masses, self.q, self.v) if check else 0.0
        inf = math.inf
        t = self.time
        for _ in range(n):
            tf = _floor_time(q1, v1)
            t12 = max(q2 - q1, 0.0) / (v1 - v2) if v1 > v2 else inf
            t23 = max(q3 - q2, 0.0) / (v2 - v3) if v2 > v3 else inf
            tau = min(tf, t12, t23)
            tol = TIE_TOL * (1.0 + tau)
            if t12 - tau <= tol and t23 - tau <= tol:
                raise SingularEventError("triple collision")
            if t12 - tau <= tol and tf - tau <= tol:
                raise SingularEventError("simultaneous floor and pair collision")
            kind = FLOOR if tau == tf else (PAIR12 if tau == t12 else PAIR23)
            h = 0.5 * tau * tau
            q1 += tau * v1 - h
            q2 += tau * v2 - h
            q3 += tau * v3 - h
            v1 -= tau
            v2 -= tau
            v3 -= tau
            a1, a2, a3 = v1, v2, v3
            if kind == FLOOR:
                q1 = 0.0
                v1 = -a1
                if check and v1 != -a1:
                    st.floor_exact = False
            elif kind == PAIR12:
                q1 = q2 = 0.5 * (q1 + q2)
                v1 = g1 * a1 + (1 - g1) * a2
                v2 = (1 + g1) * a1 - g1 * a2
            else:
                q2 = q3 = 0.5 * (q2 + q3)
                v2 = g2 * a2 + (1 - g2) * a3
                v3 = (1 + g2) * a2 - g2 * a3
            if check and kind != FLOOR:
                if kind == PAIR12:
                    ma, mb, ua, ub, wa, wb = m1, m2, a1, a2, v1, v2
                else:
                    ma, mb, ua, ub, wa, wb = m2, m3, a2, a3, v2, v3
                p0 = abs(ma * ua) + abs(mb * ub)
                k0 = ma * ua * ua + mb * ub * ub
                st.max_momentum_err = max(st.max_momentum_err, abs(ma * wa + mb * wb - ma * ua - mb * ub) / p0)
                st.max_kinetic_err = max(st.max_kinetic_err, abs(ma * wa * wa + mb * wb * wb - k0) / k0)
            if vec is not None:
                vec = _tangent(vec, kind, (m1, m2, m3), (a1, a2, a3), (v1, v2, v3), (g1, g2))
                st.events += 1
                if st.events % RENORM_EVERY == 0:
                    s = math.sqrt(sum(c * c for c in vec))
                    st.log_growth += math.log(s)
                    vec = [c / s for c in vec]
            else:
                st.events += 1
            st.counts[kind] += 1
            t += tau
            if record is not None:
                record.append((kind, t, (q1, q2, q3), (a1, a2, a3), (v1, v2, v3)))
            if check:
                e = m1 * (0.5 * v1 * v1 + q1) + m2 * (0.5 * v2 * v2 + q2) + m3 * (0.5 * v3 * v3 + q3)
                st.max_energy_drift = max(st.max_energy_drift, abs(e - e0) / abs(e0))
        self.q = [q1, q2, q3]
        self.v = [v1, v2, v3]
        self.vec = vec
        self.time = t
        return st

    def events(self, n: int) -> list[tuple[int, float, tuple, tuple, tuple]]:
        """Advance n events, returning (kind, time, q at contact, v before, v after) for each."""
        out: list = []
        self.run(n, record=out)
        return out

    def growth_rate(self) -> float:
        """Mean log growth per event of the carried tangent vector."""
        s = math.sqrt(sum(c * c for c in self.vec))
        return (self.stats.log_growth + math.log(s)) / self.stats.events


def _tangent(vec, kind, m, vpre, vpost, g):
    dh1, dh2, dh3, dv1, dv2, dv3 = vec
    m1, m2, m3 = m
    a1, a2, a3 = vpre
    dq1 = dh1 / m1 - a1 * dv1
    dq2 = dh2 / m2 - a2 * dv2
    dq3 = dh3 / m3 - a3 * dv3
    if kind == FLOOR:
        dt = -dq1 / a1
    elif kind == PAIR12:
        dt = -(dq1 - dq2) / (a1 - a2)
    else:
        dt = -(dq2 - dq3) / (a2 - a3)
    dq1 += a1 * dt
    dq2 += a2 * dt
    dq3 += a3 * dt
    dv1 -= dt
    dv2 -= dt
    dv3 -= dt
    if kind == FLOOR:
        dv1 = -dv1
    elif kind == PAIR12:
        dv1, dv2 = g[0] * dv1 + (1 - g[0]) * dv2, (1 + g[0]) * dv1 - g[0] * dv2
    else:
        dv2, dv3 = g[1] * dv2 + (1 - g[1]) * dv3, (1 + g[1]) * dv2 - g[1] * dv3
    b1, b2, b3 = vpost
    return [
        m1 * (dq1 + b1 * dv1),
        m2 * (dq2 + b2 * dv2),
        m3 * (dq3 + b3 * dv3),
        dv1,
        dv2,
        dv3,
    ]


def event_kind(code: int) -> EventKind:
    return _KINDS[code]
