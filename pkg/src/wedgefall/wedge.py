"""Particle-in-a-wedge picture of the falling balls.

With ``x_i = sqrt(m_i) q_i`` and ``w_i = sqrt(m_i) v_i`` the three balls
become one particle in the wedge ``{0 <= q1 <= q2 <= q3}``, accelerated
along ``-c2`` with ``c2 = sqrt(m)``.  Ball-ball collisions are orthogonal
reflections in the two faces through ``h1`` and floor collisions are
reflections in the face ``{x1 = 0}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from wedgefall.dynamics import (
    TIE_TOL,
    EventKind,
    InvalidMassError,
    MassModel,
    PhaseState,
    SingularEventError,
    _floor_time,
)

GEOM_TOL = 1e-12
_PAIRS = (EventKind.PAIR12, EventKind.PAIR23)


class NotSpecialError(ValueError):
    """Unfolding needs the special mass ratio; otherwise the copies overlap."""


class DegeneratePlaneError(ValueError):
    pass


class NotOnFaceError(ValueError):
    pass


# ---- coordinates ------------------------------------------------------------


def to_wedge(state: PhaseState) -> tuple[np.ndarray, np.ndarray]:
    s = np.sqrt(state.masses.m)
    return s * np.asarray(state.q), s * np.asarray(state.v)


def from_wedge(masses: MassModel, x, w, section: str = "interior") -> PhaseState:
    s = np.sqrt(masses.m)
    q = np.asarray(x, float) / s
    v = np.asarray(w, float) / s
    return PhaseState(masses, tuple(map(float, q)), tuple(map(float, v)), section)


def wedge_energy(masses: MassModel, x, w) -> float:
    x = np.asarray(x, float)
    w = np.asarray(w, float)
    return float(0.5 * w @ w + np.sqrt(masses.m) @ x)


def gravity_axis(masses: MassModel) -> np.ndarray:
    """c2 = (sqrt m1, sqrt m2, sqrt m3); the particle accelerates along -c2."""
    return np.sqrt(masses.m)


def face_normal(masses: MassModel, kind: EventKind) -> np.ndarray:
    """Unit normal of the face hit by ``kind``, pointing into the wedge."""
    s = np.sqrt(masses.m)
    if kind is EventKind.FLOOR:
        n = np.array([1.0, 0.0, 0.0])
    elif kind is EventKind.PAIR12:
        n = np.array([-1.0 / s[0], 1.0 / s[1], 0.0])
    elif kind is EventKind.PAIR23:
        n = np.array([0.0, -1.0 / s[1], 1.0 / s[2]])
    else:
        raise ValueError(f"{kind} has no single face")
    return n / np.linalg.norm(n)


def reflection(n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, float) / np.linalg.norm(n)
    return np.eye(3) - 2.0 * np.outer(n, n)


# ---- frame --------------------------------------------------------------------


def generators(masses: MassModel) -> np.ndarray:
    """Columns h1, h2, h3: unit vectors along the rays q = (1,1,1), (0,1,1), (0,0,1)."""
    s = np.sqrt(masses.m)
    h = np.zeros((3, 3))
    for i in range(3):
        h[i:, i] = s[i:]
        h[:, i] /= np.linalg.norm(h[:, i])
    return h


def is_simple(gens: np.ndarray, tol: float = GEOM_TOL) -> bool:
    """Simplicity test on ordered unit generators (columns).

    (a) successive generators have positive inner product and
    (b) <e1, e3> = <e1, e2><e2, e3>.
    """
    g = np.asarray(gens, float)
    a = all(g[:, i] @ g[:, i + 1] > tol for i in range(2))
    b = abs(g[:, 0] @ g[:, 2] - (g[:, 0] @ g[:, 1]) * (g[:, 1] @ g[:, 2])) <= tol
    return a and b


@dataclass(frozen=True)
class WedgeFrame:
    masses: MassModel
    h: np.ndarray
    alpha1: float
    alpha2: float
    beta1: float
    beta2: float

    @property
    def h1(self) -> np.ndarray:
        return self.h[:, 0]

    @property
    def h2(self) -> np.ndarray:
        return self.h[:, 1]

    @property
    def h3(self) -> np.ndarray:
        return self.h[:, 2]

    @property
    def simple(self) -> bool:
        return is_simple(self.h)

    def face_plane(self, name: str) -> np.ndarray:
        """Unit normal of the plane spanned by two generators, e.g. ``"h1h3"``."""
        i, j = int(name[1]) - 1, int(name[3]) - 1
        n = np.cross(self.h[:, i], self.h[:, j])
        return n / np.linalg.norm(n)


def wedge_frame(masses: MassModel) -> WedgeFrame:
    h = generators(masses)
    m = masses.m
    big = masses.M
    a1 = math.acos(math.sqrt(big[1] / big[0]))
    a2 = math.acos(math.sqrt(big[2] / big[1]))
    b1 = math.atan(math.sqrt(m[0] / m[1]))
    b2 = math.atan(math.sqrt(m[1] / m[2]))
    return WedgeFrame(masses, h, a1, a2, b1, b2)


def special_mass_solve(m1: float, m2: float) -> float:
    """m3 solving 2 sqrt(m1 m3) = sqrt(m1 + m2) sqrt(m2 + m3)."""
    if not (m1 > m2 > 0):
        raise InvalidMassError("need m1 > m2 > 0")
    if not 3 * m1 > m2:
        raise InvalidMassError("need 3 m1 > m2")
    m3 = m2 * (m1 + m2) / (3 * m1 - m2)
    if not (0 < m3 <= m2):
        raise InvalidMassError(f"m3 = {m3} breaks m2 >= m3 > 0")
    return m3


def special_residual(masses: MassModel) -> float:
    m1, m2, m3 = masses.as_tuple()
    return 2 * math.sqrt(m1 * m3) - math.sqrt(m1 + m2) * math.sqrt(m2 + m3)


def dihedral_angle(masses: MassModel) -> float:
    """Cosine of the interior angle at the edge h1 between the faces W(h1,h2) and W(h1,h3)."""
    fr = wedge_frame(masses)
    h1 = fr.h1
    u = fr.h2 - (fr.h2 @ h1) * h1
    v = fr.h3 - (fr.h3 @ h1) * h1
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < GEOM_TOL or nv < GEOM_TOL:
        raise DegeneratePlaneError("generators collinear with h1")
    return float(u @ v / (nu * nv))


# ---- the wide wedge -----------------------------------------------------------


@dataclass
class WideWedge:
    """Six reflected copies of the simple wedge around h1."""

    frame: WedgeFrame
    g: np.ndarray
    group: list[np.ndarray]
    words: list[str]
    outer_normals: np.ndarray

    def copy_of(self, x) -> int:
        """Index of the copy containing x (largest minimum slack against the base faces)."""
        best, best_slack = 0, -np.inf
        for k, r in enumerate(self.group):
            y = r.T @ x
            slack = min(_face_slacks(self.frame.masses, y))
            if slack > best_slack:
                best, best_slack = k, slack
        return best

    def index(self, mat: np.ndarray) -> int:
        for k, r in enumerate(self.group):
            if np.allclose(r, mat, atol=1e-9):
                return k
        raise ValueError("matrix is not in the reflection group")


def _face_slacks(masses: MassModel, x) -> tuple[float, float, float]:
    return tuple(float(face_normal(masses, k) @ x) for k in (EventKind.FLOOR, EventKind.PAIR12, EventKind.PAIR23))


def unfold(masses: MassModel, tol: float = 1e-9) -> WideWedge:
    if abs(dihedral_angle(masses) - 0.5) > tol:
        raise NotSpecialError("copies of the simple wedge overlap unless the dihedral angle is pi/3")
    fr = wedge_frame(masses)
    r12 = reflection(face_normal(masses, EventKind.PAIR12))
    r23 = reflection(face_normal(masses, EventKind.PAIR23))
    group, words = [np.eye(3)], [""]
    frontier = [(np.eye(3), "")]
    while frontier:
        nxt = []
        for mat, word in frontier:
            for r, name in ((r12, "a"), (r23, "b")):
                cand = mat @ r
                if not any(np.allclose(cand, e, atol=1e-9) for e in group):
                    group.append(cand)
                    words.append(word + name)
                    nxt.append((cand, word + name))
        frontier = nxt
    if len(group) != 6:
        raise NotSpecialError(f"reflection group has order {len(group)}, expected 6")
    gens = []
    for r in group:
        c = r @ fr.h3
        if not any(np.allclose(c, e, atol=1e-9) for e in gens):
            gens.append(c)
    g = np.column_stack(gens)
    floor = face_normal(masses, EventKind.FLOOR)
    normals = []
    for r in group:
        n = r @ floor
        if not any(np.allclose(n, e, atol=1e-9) for e in normals):
            normals.append(n)
    return WideWedge(fr, g, group, words, np.array(normals))


# ---- folding and unfolding ------------------------------------------------------


@dataclass
class WidePath:
    """Event points of a trajectory in the wide wedge."""

    times: list[float]
    points: list[np.ndarray]
    velocities: list[np.ndarray]
    kinds: list[EventKind]
    copies: list[int]


def unfold_trajectory(wide: WideWedge, records) -> WidePath:
    """Unfold FB events (kind, t, q, v_pre, v_post) into the wide wedge.

    Ball-ball collisions become straight passages through inner faces, so
    the copy changes by the face reflection and the wide velocity is kept.
    """
    masses = wide.frame.masses
    s = np.sqrt(masses.m)
    refl = {k: reflection(face_normal(masses, k)) for k in _PAIRS}
    c = np.eye(3)
    path = WidePath([], [], [], [], [])
    for kind, t, q, _vpre, vpost in records:
        kind = _as_kind(kind)
        if kind in refl:
            c = c @ refl[kind]
        path.times.append(t)
        path.points.append(c @ (s * np.asarray(q)))
        path.velocities.append(c @ (s * np.asarray(vpost)))
        path.kinds.append(kind)
        path.copies.append(wide.index(c))
    return path


def fold(wide: WideWedge, x, w=None):
    """Map a wide-wedge point (and velocity) back into the simple wedge."""
    r = wide.group[wide.copy_of(np.asarray(x, float))]
    if w is None:
        return r.T @ x
    return r.T @ x, r.T @ w


def fold_path(wide: WideWedge, path: WidePath) -> list[tuple[np.ndarray, np.ndarray]]:
    """Fold each event point back to (q, v after the event).

    The copy is chosen from the point slightly after the event, so the
    folded velocity is the outgoing one.
    """
    masses = wide.frame.masses
    s = np.sqrt(masses.m)
    out = []
    for x, w in zip(path.points, path.velocities):
        r = wide.group[wide.copy_of(x + 1e-7 * w / max(1.0, np.linalg.norm(w)))]
        out.append(((r.T @ x) / s, (r.T @ w) / s))
    return out


def _as_kind(k) -> EventKind:
    if isinstance(k, EventKind):
        return k
    return (EventKind.FLOOR, EventKind.PAIR12, EventKind.PAIR23)[int(k)]


def _inner_planes(wide: WideWedge) -> np.ndarray:
    fr = wide.frame
    out = []
    for r in wide.group:
        for k in _PAIRS:
            n = r @ face_normal(fr.masses, k)
            if not any(np.allclose(n, e, atol=1e-9) or np.allclose(n, -e, atol=1e-9) for e in out):
                out.append(n)
    return np.array(out)


def _first_root(a: float, b: float, c: float, eps: float) -> float:
    """Smallest t > eps with a t^2 + b t + c = 0 (inf if none)."""
    if a == 0.0:
        if b == 0.0:
            return math.inf
        t = -c / b
        return t if t > eps else math.inf
    disc = b * b - 4 * a * c
    if disc < 0:
        return math.inf
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b))
    roots = sorted(r for r in (q / a, c / q if q != 0 else math.inf) if r > eps)
    return roots[0] if roots else math.inf


def simulate_wide(wide: WideWedge, x0, w0, n: int, t0: float = 0.0) -> WidePath:
    """Particle in the wide wedge, integrated on its own.

    Outer faces reflect, inner planes are crossed without change; every
    crossing and reflection is recorded.  The event type is read off by
    folding the contact point into the simple wedge.
    """
    masses = wide.frame.masses
    c2 = gravity_axis(masses)
    outer = wide.outer_normals
    inner = _inner_planes(wide)
    x = np.array(x0, float)
    w = np.array(w0, float)
    t = t0
    path = WidePath([], [], [], [], [])
    for _ in range(n):
        scale = max(1.0, float(np.abs(w).max()))
        eps = 1e-12 * scale
        times_out = []
        for nn in outer:
            # <n, x + w t - c2 t^2 / 2> = 0
            a, b, c = -0.5 * float(nn @ c2), float(nn @ w), float(nn @ x)
            times_out.append(_first_root(a, b, c if abs(c) > 1e-13 else 0.0, eps))
        times_in = []
        for nn in inner:
            b, c = float(nn @ w), float(nn @ x)
            tt = -c / b if b != 0.0 else math.inf
            times_in.append(tt if tt > eps and abs(c) > 1e-13 * max(1.0, np.linalg.norm(x)) else math.inf)
        to, ti = min(times_out), min(times_in)
        tau = min(to, ti)
        if not math.isfinite(tau):
            raise RuntimeError("no further event in the wide wedge")
        tol = TIE_TOL * (1.0 + tau)
        hits_out = [k for k, tt in enumerate(times_out) if tt - tau <= tol]
        hits_in = [k for k, tt in enumerate(times_in) if tt - tau <= tol]
        if len(hits_out) > 1:
            raise SingularEventError("corner of the wide wedge")
        x = x + w * tau - 0.5 * c2 * tau * tau
        w = w - c2 * tau
        t += tau
        if hits_out:
            nn = outer[hits_out[0]]
            x = x - (nn @ x) * nn
            w = w - 2.0 * (nn @ w) * nn
            kinds = [EventKind.FLOOR]
            if hits_in:
                raise SingularEventError("floor and ball-ball collision at once")
        else:
            y = fold(wide, x)
            d12 = abs(face_normal(masses, EventKind.PAIR12) @ y)
            d23 = abs(face_normal(masses, EventKind.PAIR23) @ y)
            if len(hits_in) > 1:
                # through the h1 axis: a triple collision, continued straight
                kinds = [EventKind.TRIPLE]
            else:
                kinds = [EventKind.PAIR12 if d12 < d23 else EventKind.PAIR23]
        for k in kinds:
            path.times.append(t)
            path.points.append(x.copy())
            path.velocities.append(w.copy())
            path.kinds.append(k)
            path.copies.append(wide.copy_of(x + 1e-9 * w))
    return path


# ---- grazing and planar subspaces ------------------------------------------


def is_grazing(state: PhaseState, face: EventKind, tol: float = 1e-12) -> bool:
    """Velocity tangent to the face the state sits on."""
    face = EventKind(face)
    x, w = to_wedge(state)
    n = face_normal(state.masses, face)
    scale = max(1.0, float(np.abs(x).max()))
    if abs(n @ x) > 1e-9 * scale:
        raise NotOnFaceError(f"state is not on the {face.value} face")
    return abs(n @ w) <= tol * max(1.0, float(np.linalg.norm(w)))


def segment_confined(state: PhaseState, face: EventKind, duration: float = 1.0, samples: int = 5, tol: float = 1e-10) -> bool:
    """Whether the free-flight segment from the state stays in the face plane."""
    x, w = to_wedge(state)
    c2 = gravity_axis(state.masses)
    n = face_normal(state.masses, face)
    ts = np.linspace(0.0, duration, samples)
    return all(abs(n @ (x + w * t - 0.5 * c2 * t * t)) <= tol for t in ts)


def planar_subspace(state: PhaseState, t1: float, t2: float) -> np.ndarray:
    """Unit normal of the plane spanned by the wedge velocities at two flight times."""
    _, w = to_wedge(state)
    c2 = gravity_axis(state.masses)
    a, b = w - c2 * t1, w - c2 * t2
    n = np.cross(a, b)
    nn = np.linalg.norm(n)
    if nn <= 1e-12 * max(1.0, np.linalg.norm(a) * np.linalg.norm(b)):
        raise DegeneratePlaneError("velocities are parallel (vertical drop)")
    return n / nn


def plane_angle(n1, n2) -> float:
    """Angle in [0, pi/2] between planes given by normals."""
    c = abs(float(np.dot(n1, n2)) / (np.linalg.norm(n1) * np.linalg.norm(n2)))
    return math.acos(min(1.0, c))


# ---- triangle chart ------------------------------------------------------------


@dataclass
class TriangleChart:
    masses: MassModel
    d: float
    frame2d: np.ndarray
    center3d: np.ndarray
    vertices: np.ndarray
    edges: list[tuple[int, int]]
    cevians: list[tuple[str, np.ndarray]]

    def project3(self, x) -> np.ndarray:
        h1 = generators(self.masses)[:, 0]
        c2 = gravity_axis(self.masses)
        x = np.asarray(x, float)
        return x + ((self.d - c2 @ x) / math.sqrt(self.masses.M[0])) * h1

    def project(self, x) -> np.ndarray:
        return self.frame2d.T @ (self.project3(x) - self.center3d)


def triangle_chart(masses: MassModel, d: float = 1.0) -> TriangleChart:
    """Chart on the plane <c2, x> = d, projecting along h1.

    For special masses the chart shows the wide wedge: an equilateral
    triangle with cevians through the center.  Otherwise it shows the
    simple wedge's triangle with its vertex h1 at the center.
    """
    fr = wedge_frame(masses)
    c2 = gravity_axis(masses)
    h1 = fr.h1
    e1 = fr.h2 - (fr.h2 @ h1) * h1
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(h1, e1)
    frame2d = np.column_stack([e1, e2])
    center = d / math.sqrt(masses.M[0]) * h1

    def on_plane(g):
        return g * d / (c2 @ g)

    try:
        wide = unfold(masses)
        rays = [wide.g[:, i] for i in range(3)]
        edges = [(0, 1), (1, 2), (0, 2)]
        cevians = []
        for r in wide.group:
            cevians.append(("12", on_plane(r @ fr.h3)))
            cevians.append(("23", on_plane(r @ fr.h2)))
    except NotSpecialError:
        rays = [fr.h1, fr.h2, fr.h3]
        edges = [(1, 2)]
        cevians = [("23", on_plane(fr.h2)), ("12", on_plane(fr.h3))]
    verts = np.array([frame2d.T @ (on_plane(g) - center) for g in rays])
    ceva = [(lab, frame2d.T @ (p - center)) for lab, p in cevians]
    uniq = []
    for lab, p in ceva:
        if not any(lab == l2 and np.allclose(p, p2, atol=1e-9) for l2, p2 in uniq):
            uniq.append((lab, p))
    return TriangleChart(masses, d, frame2d, center, verts, edges, uniq)


def project_triangle(x, chart: TriangleChart) -> np.ndarray:
    return chart.project(x)


# ---- cycles ---------------------------------------------------------------------

CASES = {
    (EventKind.PAIR12, EventKind.PAIR23): "I",
    (EventKind.PAIR12, EventKind.PAIR23, EventKind.PAIR12): "II",
    (EventKind.PAIR23, EventKind.PAIR12): "III",
    (EventKind.PAIR23, EventKind.PAIR12, EventKind.PAIR23): "IV",
}


@dataclass
class CycleRecord:
    events: tuple[EventKind, ...]
    label: str
    veldiffs: list[float] = field(default_factory=list)
    psi: list[float] = field(default_factory=list)
    start_time: float = 0.0

    @property
    def involves_all(self) -> bool:
        """True when both kinds of ball-ball collision occur inside the cycle."""
        return EventKind.PAIR12 in self.events and EventKind.PAIR23 in self.events


def classify_sequence(events) -> str:
    """Label a floor-to-floor event sequence (both floor events included)."""
    ev = tuple(_as_kind(e) for e in events)
    if any(EventKind(e).singular for e in ev):
        return "Singular"
    if len(ev) < 2 or ev[0] is not EventKind.FLOOR or ev[-1] is not EventKind.FLOOR:
        raise ValueError("a cycle runs from one floor collision to the next")
    return CASES.get(ev[1:-1], "Other")


def psi_angle(masses: MassModel, kind: EventKind, w_pre) -> float:
    """Angle between the planar subspace span(w, c2) and the face being crossed."""
    n_p = np.cross(np.asarray(w_pre, float), gravity_axis(masses))
    return plane_angle(n_p, face_normal(masses, kind))


def classify_cycle(masses: MassModel, records) -> CycleRecord:
    """Build a CycleRecord from FB events (kind, t, q, v_pre, v_post), floor to floor."""
    kinds = [_as_kind(r[0]) for r in records]
    label = classify_sequence(kinds)
    s = np.sqrt(masses.m)
    diffs, psi = [], []
    for r in records[1:-1]:
        k = _as_kind(r[0])
        i = 0 if k is EventKind.PAIR12 else 1
        diffs.append(r[3][i] - r[3][i + 1])
        if label == "I":
            psi.append(psi_angle(masses, k, s * np.asarray(r[3])))
    return CycleRecord(tuple(kinds), label, diffs, psi, records[0][1])


def cycles(records) -> list[list]:
    """Split an event list into floor-to-floor cycles (sharing their end events)."""
    out = []
    start = None
    for k, r in enumerate(records):
        if _as_kind(r[0]) is EventKind.FLOOR:
            if start is not None:
                out.append(records[start : k + 1])
            start = k
    return out


def psi_check(masses: MassModel, record: CycleRecord, tol: float = 1e-9) -> tuple[bool, float]:
    """(passes, min angle) for a case-I cycle at special masses."""
    if record.label != "I":
        raise ValueError("psi is defined for case-I cycles")
    if abs(dihedral_angle(masses) - 0.5) > 1e-9:
        raise NotSpecialError("psi bound needs special masses")
    lo = min(record.psi)
    return lo >= math.pi / 6 - tol, lo


def chart_rows(wide: WideWedge, chart: TriangleChart, records, cycle_id: int, label: str) -> list[tuple]:
    """Chart export rows (cycle_id, case, x, y, t) for the event points of one cycle."""
    path = unfold_trajectory(wide, records)
    rows = []
    for t, p in zip(path.times, path.points):
        u = chart.project(p)
        rows.append((cycle_id, label, float(u[0]), float(u[1]), float(t)))
    return rows
