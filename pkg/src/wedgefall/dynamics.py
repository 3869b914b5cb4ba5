"""Exact event-driven simulation of three balls falling onto a floor.

Gravity is fixed to 1, so every ball follows ``q(t) = q + v t - t^2/2``.
Relative motion between balls is therefore linear, and every event time
has a closed form.  States store velocities; momenta are ``m * v``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from wedgefall.rng import rng_for

TIE_TOL = 1e-10
SPECIAL_TOL = 1e-12
MAX_RESOLVE = 200


class InvalidMassError(ValueError):
    pass


class FlightOverrunError(RuntimeError):
    pass


class SectionMismatchError(ValueError):
    pass


class SingularEventError(RuntimeError):
    """Raised when an operation needs a unique continuation but hits a singularity."""


class RejectionBudgetError(RuntimeError):
    pass


class EventKind(str, enum.Enum):
    FLOOR = "Floor01"
    PAIR12 = "Pair12"
    PAIR23 = "Pair23"
    TRIPLE = "TripleSingular"
    FLOOR_PAIR = "FloorPairSingular"

    @property
    def singular(self) -> bool:
        return self in (EventKind.TRIPLE, EventKind.FLOOR_PAIR)


# post-collision section reached by each kind
_SECTION_AFTER = {
    EventKind.FLOOR: "M1+",
    EventKind.PAIR12: "M2+",
    EventKind.PAIR23: "M3+",
    EventKind.TRIPLE: "M2+",
    EventKind.FLOOR_PAIR: "M1+",
}
_KIND_OF_SECTION = {"M1+": EventKind.FLOOR, "M2+": EventKind.PAIR12, "M3+": EventKind.PAIR23}
SECTIONS = ("M1+", "M2+", "M3+", "M1-", "M2-", "M3-", "interior")


@dataclass(frozen=True)
class MassModel:
    m1: float
    m2: float
    m3: float
    tol_special: float = SPECIAL_TOL

    def __post_init__(self):
        m1, m2, m3 = self.m1, self.m2, self.m3
        if not (m1 > m2 >= m3 > 0):
            raise InvalidMassError(f"need m1 > m2 >= m3 > 0, got ({m1}, {m2}, {m3})")

    @classmethod
    def special_from(cls, m1: float, m2: float) -> "MassModel":
        from wedgefall.wedge import special_mass_solve

        return cls(m1, m2, special_mass_solve(m1, m2))

    @property
    def m(self) -> np.ndarray:
        return np.array([self.m1, self.m2, self.m3])

    @property
    def gamma1(self) -> float:
        return (self.m1 - self.m2) / (self.m1 + self.m2)

    @property
    def gamma2(self) -> float:
        return (self.m2 - self.m3) / (self.m2 + self.m3)

    @property
    def M(self) -> tuple[float, float, float]:
        """Partial sums M_i = m_i + ... + m_3."""
        return (self.m1 + self.m2 + self.m3, self.m2 + self.m3, self.m3)

    @property
    def special_residual(self) -> float:
        rhs = math.sqrt(self.m1 + self.m2) * math.sqrt(self.m2 + self.m3)
        return abs(2.0 * math.sqrt(self.m1 * self.m3) - rhs) / rhs

    @property
    def special(self) -> bool:
        return self.special_residual <= self.tol_special

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.m1, self.m2, self.m3)


def gamma(masses: MassModel) -> tuple[float, float]:
    return masses.gamma1, masses.gamma2


@dataclass(frozen=True)
class PhaseState:
    masses: MassModel
    q: tuple[float, float, float]
    v: tuple[float, float, float]
    section: str = "interior"

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(x) for x in self.q))
        object.__setattr__(self, "v", tuple(float(x) for x in self.v))
        if self.section not in SECTIONS:
            raise ValueError(f"unknown section tag {self.section!r}")

    @property
    def p(self) -> tuple[float, float, float]:
        m = self.masses.as_tuple()
        return tuple(mi * vi for mi, vi in zip(m, self.v))

    @property
    def energy(self) -> float:
        return energy(self.masses, self.q, self.v)

    @property
    def h(self) -> np.ndarray:
        """Per-ball energies h_i = m_i (v_i^2/2 + q_i)."""
        return self.masses.m * (0.5 * np.square(self.v) + np.asarray(self.q))

    def reversed(self) -> "PhaseState":
        return replace(self, v=tuple(-x for x in self.v))


def energy(masses: MassModel, q, v) -> float:
    m = masses.as_tuple()
    return sum(mi * (0.5 * vi * vi + qi) for mi, qi, vi in zip(m, q, v))


@dataclass(frozen=True)
class CollisionEvent:
    tau: float
    kind: EventKind


@dataclass(frozen=True)
class Branch:
    """Both continuations of a singular event.

    ``first`` resolves the lower-index collision first: (1,2) before (2,3)
    for triple collisions, the floor before (1,2) for floor-pair events.
    """

    kind: EventKind
    tau: float
    first: PhaseState
    second: PhaseState
    first_sequence: tuple[EventKind, ...] = ()
    second_sequence: tuple[EventKind, ...] = ()

    @property
    def states(self) -> tuple[PhaseState, PhaseState]:
        return (self.first, self.second)


@dataclass
class OrbitLog:
    start: PhaseState
    kinds: list[EventKind] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    states: list[PhaseState] = field(default_factory=list)
    singular_hits: int = 0

    @property
    def count(self) -> int:
        return len(self.kinds)

    def state_before(self, k: int) -> PhaseState:
        """Post-collision state preceding event ``k``."""
        return self.start if k == 0 else self.states[k - 1]


def _floor_time(q1: float, v1: float) -> float:
    disc = v1 * v1 + 2.0 * q1
    if disc <= 0.0:
        return 0.0
    s = math.sqrt(disc)
    if v1 >= 0.0:
        return v1 + s
    return 2.0 * q1 / (s - v1) if q1 > 0.0 else 0.0


def event_times(state: PhaseState) -> dict[EventKind, float]:
    """Candidate times of the three elementary events (missing = no event)."""
    q, v = state.q, state.v
    out = {EventKind.FLOOR: _floor_time(q[0], v[0])}
    for kind, i in ((EventKind.PAIR12, 0), (EventKind.PAIR23, 1)):
        rel = v[i] - v[i + 1]
        if rel > 0.0:
            out[kind] = max(q[i + 1] - q[i], 0.0) / rel
    return out


def _tie(a: float, b: float) -> bool:
    return abs(a - b) <= TIE_TOL * (1.0 + min(a, b))


def next_event(state: PhaseState) -> CollisionEvent:
    times = event_times(state)
    kind, tau = min(times.items(), key=lambda kv: kv[1])
    if not math.isfinite(tau) or tau < 0.0:
        raise RuntimeError(f"no valid event time from {state}")
    t12 = times.get(EventKind.PAIR12)
    t23 = times.get(EventKind.PAIR23)
    tf = times[EventKind.FLOOR]
    if t12 is not None and t23 is not None and _tie(t12, tau) and _tie(t23, tau):
        return CollisionEvent(tau, EventKind.TRIPLE)
    if t12 is not None and _tie(t12, tau) and _tie(tf, tau):
        return CollisionEvent(tau, EventKind.FLOOR_PAIR)
    return CollisionEvent(tau, kind)


def _fly(state: PhaseState, t: float) -> PhaseState:
    q = tuple(qi + t * vi - 0.5 * t * t for qi, vi in zip(state.q, state.v))
    v = tuple(vi - t for vi in state.v)
    return PhaseState(state.masses, q, v, "interior")


def free_flight(state: PhaseState, t: float) -> PhaseState:
    if t < 0:
        raise ValueError("flight time must be nonnegative")
    if t == 0:
        return state
    ev = next_event(state)
    if ev.tau < t * (1.0 - TIE_TOL) - TIE_TOL:
        raise FlightOverrunError(f"{ev.kind.value} at tau={ev.tau} inside flight of {t}")
    return _fly(state, t)


def _snap(state: PhaseState, kind: EventKind) -> PhaseState:
    """Put the state exactly on the contact manifold of ``kind``."""
    q = list(state.q)
    if kind is EventKind.FLOOR:
        q[0] = 0.0
    elif kind is EventKind.PAIR12:
        q[0] = q[1] = 0.5 * (q[0] + q[1])
    elif kind is EventKind.PAIR23:
        q[1] = q[2] = 0.5 * (q[1] + q[2])
    elif kind is EventKind.TRIPLE:
        q[0] = q[1] = q[2] = sum(q) / 3.0
    else:
        q[0] = q[1] = 0.0
    pre = {EventKind.FLOOR: "M1-", EventKind.PAIR12: "M2-", EventKind.PAIR23: "M3-"}
    return PhaseState(state.masses, tuple(q), state.v, pre.get(kind, "interior"))


def contact_residual(state: PhaseState, kind: EventKind) -> float:
    q = state.q
    if kind is EventKind.FLOOR:
        return abs(q[0])
    if kind is EventKind.PAIR12:
        return abs(q[1] - q[0])
    if kind is EventKind.PAIR23:
        return abs(q[2] - q[1])
    raise ValueError(kind)


def collide_velocities(masses: MassModel, v, kind: EventKind) -> tuple[float, float, float]:
    v1, v2, v3 = v
    if kind is EventKind.FLOOR:
        return (-v1, v2, v3)
    if kind is EventKind.PAIR12:
        g = masses.gamma1
        return (g * v1 + (1 - g) * v2, (1 + g) * v1 - g * v2, v3)
    if kind is EventKind.PAIR23:
        g = masses.gamma2
        return (v1, g * v2 + (1 - g) * v3, (1 + g) * v2 - g * v3)
    raise ValueError(f"{kind} is not an elementary collision")


def apply_collision(state: PhaseState, kind: EventKind) -> PhaseState:
    kind = EventKind(kind)
    if kind.singular:
        raise SectionMismatchError("singular events have two continuations; use resolve_singular")
    scale = max(1.0, abs(state.q[2]))
    if contact_residual(state, kind) > 1e-9 * scale:
        raise SectionMismatchError(f"state is not in contact for {kind.value}")
    v = state.v
    approaching = {
        EventKind.FLOOR: v[0] < 0.0,
        EventKind.PAIR12: v[0] > v[1],
        EventKind.PAIR23: v[1] > v[2],
    }[kind]
    if not approaching:
        raise SectionMismatchError(f"velocities are not approaching for {kind.value}")
    return PhaseState(state.masses, state.q, collide_velocities(state.masses, v, kind), _SECTION_AFTER[kind])


def _approaching(v, kinds) -> list[EventKind]:
    out = []
    for k in kinds:
        if k is EventKind.FLOOR and v[0] < 0.0:
            out.append(k)
        elif k is EventKind.PAIR12 and v[0] > v[1]:
            out.append(k)
        elif k is EventKind.PAIR23 and v[1] > v[2]:
            out.append(k)
    return out


def _resolve_order(state: PhaseState, kinds: tuple[EventKind, EventKind]):
    """Apply collisions at one instant, starting with ``kinds[0]``, until all separate."""
    v = state.v
    seq = []
    last = None
    for _ in range(MAX_RESOLVE):
        pending = [k for k in _approaching(v, kinds) if k is not last]
        if not pending:
            break
        k = kinds[0] if not seq and kinds[0] in pending else pending[0]
        v = collide_velocities(state.masses, v, k)
        seq.append(k)
        last = k
    else:
        raise SingularEventError("simultaneous collisions did not separate")
    if not seq:
        raise SectionMismatchError("no approaching pair at the singular contact")
    return PhaseState(state.masses, state.q, v, _SECTION_AFTER[seq[-1]]), tuple(seq)


def resolve_singular(state: PhaseState, kind: EventKind, tau: float = 0.0) -> Branch:
    if kind is EventKind.TRIPLE:
        pair = (EventKind.PAIR12, EventKind.PAIR23)
    elif kind is EventKind.FLOOR_PAIR:
        pair = (EventKind.FLOOR, EventKind.PAIR12)
    else:
        raise ValueError(kind)
    a, sa = _resolve_order(state, pair)
    b, sb = _resolve_order(state, pair[::-1])
    return Branch(kind, tau, a, b, sa, sb)


def _collide_at(state: PhaseState, ev: CollisionEvent):
    if ev.kind.singular:
        return resolve_singular(state, ev.kind, ev.tau)
    return apply_collision(state, ev.kind)


def poincare_map(state: PhaseState) -> PhaseState | Branch:
    ev = next_event(state)
    pre = _snap(_fly(state, ev.tau), ev.kind)
    return _collide_at(pre, ev)


def poincare_inverse(state: PhaseState) -> PhaseState | Branch:
    """Predecessor on M+ via time reversal ``R(q, v) = (q, -v)``."""
    rev = state.reversed()
    ev0 = next_event(rev)
    if ev0.tau > TIE_TOL * (1.0 + abs(state.q[2])):
        raise SectionMismatchError("state is not right after a collision")
    undone = _collide_at(_snap(rev, ev0.kind), CollisionEvent(0.0, ev0.kind))

    def back(s: PhaseState) -> PhaseState:
        ev = next_event(s)
        z = _snap(_fly(s, ev.tau), ev.kind)
        return PhaseState(z.masses, z.q, tuple(-x for x in z.v), _SECTION_AFTER[ev.kind])

    if isinstance(undone, Branch):
        return replace(undone, first=back(undone.first), second=back(undone.second))
    return back(undone)


def step(state: PhaseState, policy: str = "abort") -> tuple[CollisionEvent, PhaseState]:
    """One Poincare step returning the event and a single continuation."""
    ev = next_event(state)
    pre = _snap(_fly(state, ev.tau), ev.kind)
    out = _collide_at(pre, ev)
    if isinstance(out, Branch):
        if policy == "abort":
            raise SingularEventError(f"{ev.kind.value} at tau={ev.tau}")
        out = out.first if policy in ("pick-first", "first") else out.second
    return ev, out


def simulate(state: PhaseState, n: int, policy: str = "abort") -> OrbitLog:
    log = OrbitLog(start=state)
    t = 0.0
    for _ in range(n):
        ev, state = step(state, policy)
        t += ev.tau
        log.kinds.append(ev.kind)
        log.times.append(t)
        log.states.append(state)
        if ev.kind.singular:
            log.singular_hits += 1
    return log


class Mom(str, enum.Enum):
    MOM1 = "Mom1"
    MOM2 = "Mom2"
    MOM3 = "Mom3"


def classify_momenta(state: PhaseState) -> Mom:
    """Sign pattern of the arrival velocities at the floor after a triple-contact state."""
    q, v = state.q, state.v
    scale = max(1.0, abs(q[2]))
    if abs(q[0] - q[1]) > 1e-9 * scale or abs(q[1] - q[2]) > 1e-9 * scale:
        raise SectionMismatchError("state is not at a triple contact")
    if not (v[0] <= v[1] <= v[2]):
        raise SectionMismatchError("velocities are not ordered v1 <= v2 <= v3")
    ev = next_event(state)
    if ev.kind is not EventKind.FLOOR:
        raise SectionMismatchError("next collision is not with the floor")
    a1, a2, a3 = (x - ev.tau for x in v)
    if a2 >= 0.0:
        return Mom.MOM1
    if a3 >= 0.0:
        return Mom.MOM2
    return Mom.MOM3


def _scale_to_energy(masses: MassModel, q, v, c: float, frac: float):
    m = masses.m
    q = np.asarray(q, float)
    v = np.asarray(v, float)
    pot = float(m @ q)
    kin = float(0.5 * m @ v**2)
    if pot <= 0.0 or kin <= 0.0:
        return None
    q = q * (frac * c / pot)
    v = v * math.sqrt((1.0 - frac) * c / kin)
    return tuple(q), tuple(v)


def sample_phase_point(
    masses: MassModel, c: float, section: str = "M+", seed: int = 0, index: int = 0, budget: int = 1000
) -> PhaseState:
    """Random state of energy ``c`` on a post-collision section (or the interior).

    ``section="M+"`` picks one of M1+, M2+, M3+ uniformly.
    """
    if c <= 0:
        raise ValueError("energy must be positive")
    rng = rng_for(seed, index)
    for _ in range(budget):
        sec = section if section != "M+" else ("M1+", "M2+", "M3+")[rng.integers(3)]
        gaps = rng.exponential(1.0, size=3)
        v = rng.standard_normal(3)
        if sec == "M1+":
            gaps[0] = 0.0
            v[0] = abs(v[0])
        elif sec == "M2+":
            gaps[1] = 0.0
            v[:2] = np.sort(v[:2])
        elif sec == "M3+":
            gaps[2] = 0.0
            v[1:] = np.sort(v[1:])
        elif sec != "interior":
            raise ValueError(f"cannot sample section {sec!r}")
        q = np.cumsum(gaps)
        scaled = _scale_to_energy(masses, q, v, c, rng.uniform(0.05, 0.95))
        if scaled is None:
            continue
        q, v = scaled
        state = PhaseState(masses, q, v, sec)
        if next_event(state).tau > 0.0:
            return state
    raise RejectionBudgetError(f"no admissible {section} state after {budget} draws")


def sample_singular_point(
    masses: MassModel, manifold: str, c: float, seed: int = 0, index: int = 0, budget: int = 1000
) -> PhaseState:
    """Random point on S12- (after a triple collision) or S31- (after floor + (1,2))."""
    if c <= 0:
        raise ValueError("energy must be positive")
    rng = rng_for(seed, index)
    for _ in range(budget):
        if manifold == "S12-":
            v = np.sort(rng.standard_normal(3))
            if v[1] - v[0] <= 0.0 or v[2] - v[1] <= 0.0:
                continue
            q = np.ones(3)
            want, sec = EventKind.FLOOR, "M2+"
        elif manifold == "S31-":
            v = rng.standard_normal(3)
            v[:2] = np.sort(np.abs(v[:2]))
            if v[0] <= 0.0 or v[1] <= v[0]:
                continue
            q = np.array([0.0, 0.0, rng.exponential(1.0)])
            want, sec = EventKind.PAIR23, "M1+"
        else:
            raise ValueError(f"unknown singularity manifold {manifold!r}")
        scaled = _scale_to_energy(masses, q, v, c, rng.uniform(0.05, 0.95))
        if scaled is None:
            continue
        qs, vs = scaled
        if manifold == "S12-":
            qs = (qs[0],) * 3
        else:
            qs = (0.0, 0.0, qs[2])
        state = PhaseState(masses, qs, vs, sec)
        if next_event(state).kind is want:
            return state
    raise RejectionBudgetError(f"no admissible {manifold} point after {budget} draws")
