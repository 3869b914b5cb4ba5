"""Cone field diagnostics on the energy-reduced tangent space.

Everything here works in reduced coordinates ``r = (a, b)``: ``a`` holds
the ``dh`` part and ``b`` the ``dv`` part in the orthonormal basis of
``(1,1,1)^perp``.  Then ``L1 = {b = 0}``, ``L2 = {a = 0}`` and
``Q(r) = <a, b>``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from wedgefall.dynamics import (
    Branch,
    EventKind,
    MassModel,
    PhaseState,
    SectionMismatchError,
    RejectionBudgetError,
    SingularEventError,
    _fly,
    _snap,
    classify_momenta,
    next_event,
    poincare_inverse,
    sample_singular_point,
)
from wedgefall.rng import rng_for
from wedgefall.tangent import (
    BASIS,
    _LIFT,
    TangentVector,
    monodromy_step,
    orbit_steps,
    reduce_vector,
    tangent_qp_to_hv,
)

G = 0.5 * np.block([[np.zeros((2, 2)), np.eye(2)], [np.eye(2), np.zeros((2, 2))]])
L1_BASIS = np.eye(4)[:, :2]
L2_BASIS = np.eye(4)[:, 2:]
BOUNDARY_TOL = 1e-12
PD_TOL = 1e-12
# eigenvalues of the gain form below this (relative) count as zero
NULL_TOL = 1e-9
# pencil values this close to 1 are checked against the exact-unit case
UNIT_BAND = 1e-6
# bound on the shell offset searched by the sampled oracle
SHELL_RADIUS = 1e6
# det/trace^2 below this is indistinguishable from accumulated rounding
ROUNDOFF_FLOOR = 1e-20


class ConeStatus(str, enum.Enum):
    INSIDE = "inside"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"


def qr(r) -> float:
    """Q of a reduced 4-vector."""
    r = np.asarray(r, float)
    return float(r[:2] @ r[2:])


def as_reduced(v) -> np.ndarray:
    if isinstance(v, TangentVector):
        return reduce_vector(v.as_array())
    v = np.asarray(v, float)
    return reduce_vector(v) if v.shape == (6,) else v


def cone_status(v) -> ConeStatus:
    """Sign of Q for an energy-reduced vector (6-vector, TangentVector or reduced 4-vector)."""
    if isinstance(v, TangentVector):
        x = v.as_array()
    else:
        x = np.asarray(v, float)
    if x.shape == (6,):
        if abs(x[:3].sum()) > 1e-9 * max(1.0, np.abs(x).max()):
            raise ValueError("vector is not tangent to the energy surface")
        q, n2 = float(x[:3] @ x[3:]), float(x @ x)
    else:
        q, n2 = qr(x), float(x @ x)
    if abs(q) <= BOUNDARY_TOL * n2:
        return ConeStatus.BOUNDARY
    return ConeStatus.INSIDE if q > 0 else ConeStatus.OUTSIDE


@dataclass(frozen=True)
class LagrangianBasis:
    """L1 = {dv = 0, sum dh = 0} and L2 = {dh = 0, dv perp (1,1,1)} as 6-vectors."""

    l1: np.ndarray
    l2: np.ndarray

    @classmethod
    def canonical(cls) -> "LagrangianBasis":
        z = np.zeros((3, 2))
        return cls(np.vstack([BASIS, z]), np.vstack([z, BASIS]))


@dataclass
class ReducedOrbit:
    """Reduced one-step matrices along an orbit, with the events that produced them."""

    start: PhaseState
    mats: list[np.ndarray]
    kinds: list[EventKind]
    states: list[PhaseState]
    pre_velocities: list[tuple[float, float, float]]
    coeffs: list[float | None] = field(default_factory=list)

    def product(self, lo: int = 0, hi: int | None = None) -> np.ndarray:
        hi = len(self.mats) if hi is None else hi
        p = np.eye(4)
        for a in self.mats[lo:hi]:
            p = a @ p
        return p


def reduced_orbit(x: PhaseState, n: int, policy: str = "abort") -> ReducedOrbit:
    steps = orbit_steps(x, n, policy)
    pre = []
    for md in steps:
        pre.append(tuple(c - md.tau for c in md.source.v))
    return ReducedOrbit(
        x,
        [md.reduced for md in steps],
        [md.kind for md in steps],
        [md.target for md in steps],
        pre,
        [md.coeff for md in steps],
    )


# ---- least expansion ------------------------------------------------------


@dataclass(frozen=True)
class SigmaResult:
    value: float
    n: int
    method: str
    witness: np.ndarray


def _pencil_forms(p: np.ndarray) -> np.ndarray:
    s = p.T @ G @ p
    return 0.5 * (s + s.T)


def _unit_expansion(sp: np.ndarray) -> bool:
    """sigma = 1 exactly: the gain form S' - S has a null direction where S is not negative.

    Near this point sigma^2 depends on the matrix only to half order, so the
    generalized eigenvalue lands about sqrt(eps) away from 1; deciding the
    case from the null space of the gain form avoids that.
    """
    d = sp - G
    w, u = np.linalg.eigh(0.5 * (d + d.T))
    tol = NULL_TOL * max(1.0, np.abs(w).max())
    if w[0] < -tol:
        return False
    null = u[:, w <= tol]
    if null.shape[1] == 0:
        return False
    return bool(np.linalg.eigvalsh(null.T @ G @ null)[-1] >= -tol)


def sigma_pencil(p: np.ndarray, n: int = -1) -> SigmaResult:
    """sigma^2 = largest kappa with S' - kappa S positive semidefinite.

    By the S-lemma this equals the infimum of S'(v)/S(v) over S(v) > 0
    whenever S is indefinite, as the reduced Q is (signature (2, 2)).
    """
    sp = _pencil_forms(p)
    scale = max(1.0, np.abs(sp).max())
    ev = linalg.eigvals(sp, G)
    cands = sorted({float(e.real) for e in ev if abs(e.imag) <= 1e-9 * max(1.0, abs(e))}, reverse=True)

    def gap(kappa):
        return np.linalg.eigvalsh(sp - kappa * G)[0]

    kappa = None
    for k in cands:
        if k <= 0:
            break
        if gap(k * (1 - 1e-9) - 1e-12) >= -1e-10 * scale:
            kappa = k
            break
    if kappa is None:
        kappa = 1.0
    # only a value already next to 1 can be the half-order artefact; for long
    # products the gain form's small eigenvalue is below rounding and the
    # null-space test would misfire
    if abs(kappa - 1.0) <= UNIT_BAND and _unit_expansion(sp):
        kappa = 1.0
    w, vecs = np.linalg.eigh(sp - kappa * G)
    return SigmaResult(math.sqrt(max(kappa, 0.0)), n, "pencil", vecs[:, 0])


def _shell_point(t: np.ndarray) -> np.ndarray:
    """Q = 1 shell: s = sqrt(1+|d|^2)(cos th, sin th), a = s + d, b = s - d."""
    th, d = t[0], t[1:3]
    s = math.sqrt(1.0 + d @ d) * np.array([math.cos(th), math.sin(th)])
    return np.concatenate([s + d, s - d])


def sigma_sampled(p: np.ndarray, n: int = -1, seed: int = 0, draws: int = 4000, starts: int = 6) -> SigmaResult:
    """Direct minimization of Q(Pv) on the Q(v) = 1 shell (independent oracle)."""
    sp = _pencil_forms(p)
    rng = np.random.default_rng(seed)

    def f(t):
        r = _shell_point(t)
        return float(r @ sp @ r)

    # the infimum may only be approached as the shell offset runs off, so it is boxed
    box = [(None, None)] + [(-SHELL_RADIUS, SHELL_RADIUS)] * 2
    pts = np.column_stack([rng.uniform(0, 2 * np.pi, draws), rng.standard_normal((draws, 2)) * rng.exponential(2.0, (draws, 1))])
    vals = np.array([f(t) for t in pts])
    best_t, best = None, np.inf
    for t0 in pts[np.argsort(vals)[:starts]]:
        res = optimize.minimize(f, t0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
        res = optimize.minimize(f, res.x, method="L-BFGS-B", bounds=box, options={"ftol": 1e-16, "gtol": 1e-12})
        if res.fun < best:
            best, best_t = res.fun, res.x
    return SigmaResult(math.sqrt(max(best, 0.0)), n, "sampled", _shell_point(best_t))


def sigma(x: PhaseState, n: int, method: str = "pencil", policy: str = "abort") -> SigmaResult:
    if n == 0:
        return SigmaResult(1.0, 0, method, np.array([1.0, 0, 1.0, 0]))
    p = reduced_orbit(x, n, policy).product()
    if method == "pencil":
        return sigma_pencil(p, n)
    return sigma_sampled(p, n)


def sigma_curve(x: PhaseState, n: int, policy: str = "abort") -> np.ndarray:
    """sigma(d_x T^k) for k = 0..n."""
    orb = reduced_orbit(x, n, policy)
    out = [1.0]
    p = np.eye(4)
    for a in orb.mats:
        p = a @ p
        out.append(sigma_pencil(p).value)
    return np.array(out)


def strictly_monotone(p: np.ndarray) -> bool:
    """Q(Pv) > Q(v) for all nonzero reduced v."""
    d = _pencil_forms(p) - G
    return bool(np.linalg.eigvalsh(d)[0] > PD_TOL * max(1.0, np.abs(d).max()))


def strict_flags(orb: ReducedOrbit) -> list[bool]:
    """Whether the product of the first n steps is strictly Q-monotone, n = 1..len(orb).

    Each step adds coeff * (f . v)^2 to Q, so once the accumulated gain form
    is certified positive definite it stays so while every later coefficient
    is nonnegative.  The certificate is carried instead of re-tested: the
    eigenvalue test loses the smallest eigenvalue to rounding once the
    product has grown by ~1e13.  A negative or missing coefficient (composite
    singular step) voids the carried certificate.
    """
    p = np.eye(4)
    cert = False
    out = []
    for a, c in zip(orb.mats, orb.coeffs or [None] * len(orb.mats)):
        p = a @ p
        if cert and (c is None or c < 0.0):
            cert = False
        if not cert:
            cert = strictly_monotone(p)
        out.append(cert)
    return out


# ---- eventual strict monotonicity ----------------------------------------


def _restricted_pd(p: np.ndarray, basis: np.ndarray) -> bool:
    k = basis.T @ _pencil_forms(p) @ basis
    scale = max(1.0, np.abs(k).max())
    return bool(k[0, 0] > PD_TOL * scale and np.linalg.det(k) > PD_TOL * scale**2)


class LagrangianTracker:
    """Leading-minor test of v -> Q(P v) on a Lagrangian plane, free of cancellation.

    Every collision adds a rank-one gain coeff * (f . v)^2, so on the plane
    the form is sum_k g_k l_k l_k^T and, by Cauchy-Binet, its determinant is
    sum_{j<k} g_j g_k (l_j x l_k)^2.  Both minors are sums of nonnegative
    terms, which keeps the small eigenvalue even when the large one is huge.
    Positivity is tested relative to the trace.
    """

    def __init__(self, basis: np.ndarray, tol: float = PD_TOL):
        self.y = np.array(basis, float)
        self.log_scale = 0.0
        self.tol = tol
        self.ls = np.zeros((0, 2))
        self.gs = np.zeros(0)
        self.k11 = 0.0
        self.trace = 0.0
        self.det = 0.0

    def update(self, md) -> None:
        u = _LIFT.T @ md.gain_functional()
        g = md.coeff
        l = self.y.T @ u
        if g > 0.0 and l @ l > 0.0:
            if self.gs.size:
                cross = self.ls[:, 0] * l[1] - self.ls[:, 1] * l[0]
                self.det += g * float(np.sum(self.gs * cross * cross))
            self.k11 += g * l[0] * l[0]
            self.trace += g * float(l @ l)
            self.ls = np.vstack([self.ls, l])
            self.gs = np.append(self.gs, g)
        self.y = md.reduced @ self.y
        s = np.abs(self.y).max()
        if s > 1e8:
            self.y /= s
            self.ls /= s
            self.k11 /= s * s
            self.trace /= s * s
            self.det /= s**4
            self.log_scale += math.log(s)

    @property
    def ratio(self) -> float:
        return self.det / self.trace**2 if self.trace > 0.0 else 0.0

    @property
    def positive(self) -> bool:
        if self.trace <= 0.0 or self.ratio <= ROUNDOFF_FLOOR:
            return False
        lk = math.log(self.k11) + 2 * self.log_scale if self.k11 > 0.0 else -np.inf
        ld = math.log(self.det) + 4 * self.log_scale
        return lk > math.log(self.tol) and ld > math.log(self.tol)


@dataclass
class MonotonicityResult:
    n: int | None
    n_l1: int | None
    n_l2: int | None
    kinds: list[EventKind] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.n is not None


def monotonicity_time(x: PhaseState, horizon: int = 100, policy: str = "abort") -> MonotonicityResult:
    """First n at which Q o dT^n is positive definite on both L1 and L2."""
    t1, t2 = LagrangianTracker(L1_BASIS), LagrangianTracker(L2_BASIS)
    n1 = n2 = None
    kinds = []
    for k in range(1, horizon + 1):
        md = monodromy_step(x) if policy == "abort" else orbit_steps(x, 1, policy)[0]
        kinds.append(md.kind)
        x = md.target
        t1.update(md)
        t2.update(md)
        if n1 is None and t1.positive:
            n1 = k
        if n2 is None and t2.positive:
            n2 = k
        if n1 is not None and n2 is not None:
            return MonotonicityResult(max(n1, n2), n1, n2, kinds)
    return MonotonicityResult(None, n1, n2, kinds)


@dataclass
class LagrangianCertificate:
    """When L1 and L2 become positive, measured in collision-pattern units.

    ``both_pairs_at`` is the event index at which the orbit has seen a (1,2)
    and a (2,3) collision; ``l2_at_both_pairs`` says whether L2 is positive
    there.  ``l1_returns`` counts floor returns up to the event at which L1
    becomes positive; a run of consecutive floor collisions with no
    ball-ball collision in between is one return.
    """

    both_pairs_at: int | None
    l2_at_both_pairs: bool
    l1_at: int | None
    l1_returns: int | None


def lagrangian_certificate(x: PhaseState, budget: int = 20000) -> LagrangianCertificate:
    t1, t2 = LagrangianTracker(L1_BASIS), LagrangianTracker(L2_BASIS)
    seen = set()
    both = None
    l2 = False
    l1 = None
    returns = 0
    last_floor = False
    for k in range(1, budget + 1):
        md = monodromy_step(x)
        x = md.target
        if l1 is None:
            t1.update(md)
        if both is None:
            t2.update(md)
        if md.kind is EventKind.FLOOR:
            if not last_floor and l1 is None:
                returns += 1
            last_floor = True
        else:
            seen.add(md.kind)
            last_floor = False
        if both is None and len(seen) == 2:
            both = k
            l2 = t2.positive
        if l1 is None and t1.positive:
            l1 = k
        if both is not None and l1 is not None:
            break
    return LagrangianCertificate(both, l2, l1, returns if l1 is not None else None)


# ---- Q traces ---------------------------------------------------------------


@dataclass
class Trace:
    q: np.ndarray
    crossing: int | None
    kinds: list[EventKind]


def unboundedness_trace(
    x: PhaseState, v, n: int, threshold: float | None = None, backward: bool = False, stop: bool = False
) -> Trace:
    """Q along the forward (or backward) tangent orbit of v.

    With ``threshold`` the first index with Q >= threshold (Q <= -threshold
    backward) is recorded; ``stop`` ends the trace there.
    """
    r = as_reduced(v)
    qs = [qr(r)]
    kinds = []
    crossing = None
    for k in range(1, n + 1):
        if backward:
            y = poincare_inverse(x)
            if isinstance(y, Branch):
                raise SingularEventError("backward orbit meets a singularity")
            md = monodromy_step(y)
            r = np.linalg.solve(md.reduced, r)
            x = y
        else:
            md = monodromy_step(x)
            r = md.reduced @ r
            x = md.target
        kinds.append(md.kind)
        qs.append(qr(r))
        if threshold is not None and crossing is None:
            if (qs[-1] <= -threshold) if backward else (qs[-1] >= threshold):
                crossing = k
                if stop:
                    break
    return Trace(np.array(qs), crossing, kinds)


def cone_traces(
    x: PhaseState, vectors, n: int, threshold: float, backward: bool = False
) -> list[Trace]:
    """Q traces of several reduced vectors along one orbit, stopping once all have crossed.

    Same conventions as :func:`unboundedness_trace`; the orbit is computed once.
    """
    r = np.column_stack([as_reduced(v) for v in vectors])
    k = r.shape[1]
    qs = [[qr(r[:, j])] for j in range(k)]
    crossing: list[int | None] = [None] * k
    kinds = []
    for step in range(1, n + 1):
        if backward:
            y = poincare_inverse(x)
            if isinstance(y, Branch):
                raise SingularEventError("backward orbit meets a singularity")
            md = monodromy_step(y)
            r = np.linalg.solve(md.reduced, r)
            x = y
        else:
            md = monodromy_step(x)
            r = md.reduced @ r
            x = md.target
        kinds.append(md.kind)
        for j in range(k):
            if crossing[j] is not None:
                continue
            q = qr(r[:, j])
            qs[j].append(q)
            if (q <= -threshold) if backward else (q >= threshold):
                crossing[j] = step
        if all(c is not None for c in crossing):
            break
    return [Trace(np.array(qs[j]), crossing[j], kinds[: len(qs[j]) - 1]) for j in range(k)]


def closed_cone_vectors(count: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Unit reduced vectors in the closed cone: both Lagrangian bases first, then random."""
    out = [L1_BASIS[:, 0], L1_BASIS[:, 1], L2_BASIS[:, 0], L2_BASIS[:, 1]]
    while len(out) < count:
        r = rng.standard_normal(4)
        if qr(r) < 0:
            r[2:] = -r[2:]
        out.append(r / np.linalg.norm(r))
    return [np.array(v, float) for v in out[:count]]


# ---- characteristic lines and alignment ----------------------------------


class UndefinedLineError(ValueError):
    pass


@dataclass(frozen=True)
class CharLine:
    base: PhaseState
    manifold: str
    dq: np.ndarray
    dp: np.ndarray
    q_value: float

    @property
    def tangent(self) -> TangentVector:
        return tangent_qp_to_hv(self.base, self.dq, self.dp)


_J6 = np.block([[np.zeros((3, 3)), np.eye(3)], [-np.eye(3), np.zeros((3, 3))]])


def char_q(masses: MassModel, v, dp) -> float:
    """Q of a pure-momentum tangent vector: sum v_i dp_i^2 / m_i."""
    return float(np.sum(np.asarray(v) * np.square(dp) / masses.m))


def manifold_constraints(x: PhaseState, manifold: str) -> np.ndarray:
    """Rows whose kernel is the tangent space of the singularity manifold at x, in (dq, dp)."""
    m = x.masses.m
    v = np.asarray(x.v)
    dh = np.concatenate([m, v])  # dH in (dq, dp)
    if manifold in ("S12-", "S12+"):
        rows = [[1, -1, 0, 0, 0, 0], [0, 1, -1, 0, 0, 0]]
    elif manifold in ("S31-", "S31+"):
        rows = [[1, 0, 0, 0, 0, 0], [0, 1, 0, 0, 0, 0]]
    else:
        raise ValueError(manifold)
    return np.vstack([np.array(rows, float), dh])


def omega_kernel(span: np.ndarray, form: np.ndarray = _J6) -> np.ndarray:
    """Kernel of the symplectic form restricted to the column span."""
    k = span.T @ form @ span
    c = linalg.null_space(k, rcond=1e-10)
    if c.shape[1] != 1:
        raise UndefinedLineError(f"restricted form has {c.shape[1]}-dimensional kernel")
    return span @ c[:, 0]


def characteristic_line(x: PhaseState, manifold: str = "S12-", generic: bool = False) -> CharLine:
    v = np.asarray(x.v)
    if manifold == "S12-" and not generic:
        dp = np.cross(np.ones(3), v)
        nrm = np.linalg.norm(dp)
        if nrm <= 1e-12 * max(1.0, np.linalg.norm(v)):
            raise UndefinedLineError("velocities are proportional to (1,1,1)")
        dp = dp / nrm
        dq = np.zeros(3)
    else:
        span = linalg.null_space(manifold_constraints(x, manifold))
        u = omega_kernel(span)
        dq, dp = u[:3], u[3:]
        nrm = np.linalg.norm(dp)
        if nrm <= 1e-12:
            raise UndefinedLineError("characteristic direction has no momentum part")
        dq, dp = dq / nrm, dp / nrm
        if manifold == "S12-":
            ref = np.cross(np.ones(3), v)
            if ref @ dp < 0:
                dq, dp = -dq, -dp
    t = tangent_qp_to_hv(x, dq, dp)
    return CharLine(x, manifold, dq, dp, float(t.dh @ t.dv))


def collinearity(a, b) -> float:
    """|sin| of the angle between two vectors."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    return float(min(1.0, np.linalg.norm(a - (a @ b) * b)))


def alignment_status(x: PhaseState, manifold: str = "S12-") -> str:
    line = characteristic_line(x, manifold)
    return "aligned" if line.q_value >= -BOUNDARY_TOL else "not_aligned"


@dataclass
class Pushforward:
    q: np.ndarray
    vector: np.ndarray
    collinearity: list[float]


def char_pushforward(x: PhaseState, n: int, manifold: str = "S12-") -> Pushforward:
    """Push the characteristic line n steps; compare with the image manifold's own line."""
    line = characteristic_line(x, manifold)
    vec = line.tangent.as_array()
    span_qp = linalg.null_space(manifold_constraints(x, manifold))
    span = np.column_stack([tangent_qp_to_hv(x, c[:3], c[3:]).as_array() for c in span_qp.T])
    qs = [line.q_value]
    col = [0.0]
    for _ in range(n):
        md = monodromy_step(x)
        vec = md.matrix @ vec
        span = md.matrix @ span
        x = md.target
        qs.append(float(vec[:3] @ vec[3:]))
        try:
            col.append(collinearity(vec, omega_kernel(span)))
        except UndefinedLineError:
            col.append(float("nan"))
    return Pushforward(np.array(qs), vec, col)


# ---- censuses -----------------------------------------------------------------


@dataclass
class AlignmentRecord:
    index: int
    mom: str
    q_char: float
    aligned: bool
    strict: list[bool]
    stays_aligned: bool | None
    q_final: float


def alignment_record(x: PhaseState, horizon: int, index: int = 0) -> AlignmentRecord:
    line = characteristic_line(x)
    mom = classify_momenta(x).value
    orb = reduced_orbit(x, horizon)
    r = reduce_vector(line.tangent.as_array())
    strict = strict_flags(orb)
    stays = True
    aligned = line.q_value >= -BOUNDARY_TOL
    for a in orb.mats:
        r = a @ r
        if aligned and qr(r) < -BOUNDARY_TOL:
            stays = False
    return AlignmentRecord(index, mom, line.q_value, aligned, strict, stays if aligned else None, qr(r))


def a_sets_nested(records: list[AlignmentRecord]) -> bool:
    """A(n) subset of A(n+1) for every n in the census."""
    for rec in records:
        if rec.aligned:
            continue
        inside = False
        for s in rec.strict:
            if inside and not s:
                return False
            inside = inside or s
    return True


_MOM_SIGNS = {"Mom1": (-1, 1, 1), "Mom2": (-1, -1, 1), "Mom3": (-1, -1, -1)}


def mom_witness(
    masses: MassModel, c: float, mom: str, aligned: bool, seed: int = 0, budget: int = 20000
) -> PhaseState:
    """A point of S12- in class ``mom`` whose characteristic line has the requested sign.

    Draws the floor-arrival velocities directly with the class's sign
    pattern (log-uniform magnitudes), the arrival time, and the common
    height that lands ball 1 at that time; then rescales
    (q, v) -> (l^2 q, l v) to energy c, which keeps the event pattern,
    the class and the sign of Q.  This reaches thin parts of a class
    (balls started almost at the floor) that the uniform sampler misses.
    """
    signs = np.array(_MOM_SIGNS[mom], float)
    rng = rng_for(seed, 0, stream=2)
    m = masses.m
    for _ in range(budget):
        tau = 10 ** rng.uniform(-4, 1)
        a = np.sort(signs * 10 ** rng.uniform(-6, 1, 3))
        q = -a[0] * tau - 0.5 * tau * tau
        if q <= 0.0 or not (a[0] < a[1] < a[2]):
            continue
        v = a + tau
        lam = math.sqrt(c / (q * m.sum() + 0.5 * m @ v**2))
        x = PhaseState(masses, (lam * lam * q,) * 3, tuple(lam * v), "M2+")
        if next_event(x).kind is not EventKind.FLOOR or classify_momenta(x).value != mom:
            continue
        try:
            qv = characteristic_line(x).q_value
        except UndefinedLineError:
            continue
        if (qv >= 0.0) == aligned and abs(qv) > BOUNDARY_TOL:
            return x
    raise RejectionBudgetError(f"no {mom} witness with aligned={aligned} after {budget} draws")


@dataclass
class AnsatzRecord:
    index: int
    vector: int
    crossing: int | None
    q_last: float


def singular_sample(masses: MassModel, manifold: str, c: float, seed: int, index: int) -> PhaseState:
    """Points on S- directly; points on S+ by reversing an S- point's next flight."""
    if manifold.endswith("-"):
        return sample_singular_point(masses, manifold, c, seed, index)
    y = sample_singular_point(masses, manifold[:-1] + "-", c, seed, index)
    ev = next_event(y)
    z = _snap(_fly(y, ev.tau), ev.kind)
    sec = "M1+" if ev.kind is EventKind.FLOOR else "M3+"
    return PhaseState(z.masses, z.q, tuple(-u for u in z.v), sec)


def ansatz_records(
    masses: MassModel,
    manifold: str,
    c: float,
    seed: int,
    samples: int,
    vectors: int,
    horizon: int,
    threshold: float,
    start: int = 0,
) -> list[AnsatzRecord]:
    """Threshold crossings for closed-cone vectors at points of a singularity manifold.

    S- points are traced forward, S+ points backward.
    """
    backward = manifold.endswith("+")
    out = []
    for i in range(start, start + samples):
        x = singular_sample(masses, manifold, c, seed, i)
        vecs = closed_cone_vectors(vectors, rng_for(seed, i, stream=1))
        for j, tr in enumerate(cone_traces(x, vecs, horizon, threshold, backward=backward)):
            out.append(AnsatzRecord(i, j, tr.crossing, float(tr.q[-1])))
    return out


# ---- Lambda estimate -----------------------------------------------------


@dataclass
class Block:
    start: int
    kinds: tuple[EventKind, EventKind]
    diffs: tuple[float, float]
    matrix: np.ndarray
    lam: float
    eta: np.ndarray


def _veldiff(kind: EventKind, v) -> float:
    i = 0 if kind is EventKind.PAIR12 else 1
    return v[i] - v[i + 1]


def find_blocks(orb: ReducedOrbit, theta_min: float) -> list[Block]:
    """Consecutive ball-ball collision pairs whose velocity differences are >= theta_min."""
    pair = (EventKind.PAIR12, EventKind.PAIR23)
    out = []
    for k in range(len(orb.kinds) - 1):
        k1, k2 = orb.kinds[k], orb.kinds[k + 1]
        if k1 not in pair or k2 not in pair:
            continue
        d = (_veldiff(k1, orb.pre_velocities[k]), _veldiff(k2, orb.pre_velocities[k + 1]))
        if min(d) < theta_min:
            continue
        p = orb.mats[k + 1] @ orb.mats[k]
        form = L2_BASIS.T @ _pencil_forms(p) @ L2_BASIS
        w, vecs = np.linalg.eigh(form)
        out.append(Block(k, (k1, k2), d, p, float(w[0]), vecs[:, 0]))
    return out


@dataclass
class LambdaResult:
    lam: float
    theta: float
    blocks: int
    eta: np.ndarray
    worst_block: tuple


def lambda_estimate(orbits: list[ReducedOrbit], theta_min: float, max_blocks: int | None = None) -> LambdaResult:
    lam, theta, eta, worst, count = np.inf, np.inf, None, None, 0
    for orb in orbits:
        for b in find_blocks(orb, theta_min):
            count += 1
            theta = min(theta, min(b.diffs))
            if b.lam < lam:
                lam, eta, worst = b.lam, b.eta, (b.kinds[0].value, b.kinds[1].value, b.diffs)
            if max_blocks is not None and count >= max_blocks:
                return LambdaResult(lam, theta, count, eta, worst)
    if count == 0:
        raise RuntimeError("no ball-ball collision blocks detected")
    return LambdaResult(lam, theta, count, eta, worst)


def block_gain_check(orb: ReducedOrbit, r0, lam: float, theta_min: float) -> tuple[int, float]:
    """Check q_after >= q_before + lam |eta|^2 at each detected block along a tangent orbit.

    Returns (blocks checked, worst slack); the inequality holds when slack >= 0.
    """
    r = np.asarray(r0, float)
    rs = [r]
    for a in orb.mats:
        r = a @ r
        rs.append(r)
    worst = np.inf
    n = 0
    for b in find_blocks(orb, theta_min):
        before, after = rs[b.start], rs[b.start + 2]
        slack = qr(after) - qr(before) - lam * float(before[2:] @ before[2:])
        tol = 1e-9 * max(1.0, abs(qr(after)))
        worst = min(worst, slack + tol)
        n += 1
    return n, worst
